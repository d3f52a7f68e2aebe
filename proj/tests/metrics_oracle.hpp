#pragma once

// Slow, independent AP evaluator used as an oracle for detection_metrics.
// It shares no code with the library: IoU from clipped corners, matching
// from a precomputed overlap table, and interpolated precision by scanning
// every rank for each recall level.

#include <algorithm>
#include <map>
#include <random>
#include <set>
#include <vector>

#include "genisp/detection_metrics.hpp"

namespace genisp::testing {

inline double oracle_iou(const Box& a, const Box& b) {
  const double x0 = std::max(a.x_min, b.x_min), x1 = std::min(a.x_max, b.x_max);
  const double y0 = std::max(a.y_min, b.y_min), y1 = std::min(a.y_max, b.y_max);
  if (!(x1 > x0) || !(y1 > y0)) return 0.0;
  const double inter = (x1 - x0) * (y1 - y0);
  const double area_a = (a.x_max - a.x_min) * (a.y_max - a.y_min);
  const double area_b = (b.x_max - b.x_min) * (b.y_max - b.y_min);
  return inter / (area_a + area_b - inter);
}

struct OracleDet {
  ImageId image;
  std::size_t rank_key;  // position in image-then-list order, for stable ties
  Detection det;
};

inline std::vector<bool> oracle_match(const DetectionSet& dets, const AnnotationSet& gts,
                                      int category, double thresh, std::vector<double>* scores) {
  std::vector<OracleDet> all;
  for (const auto& [id, list] : dets.images) {
    for (const auto& d : list) {
      if (d.box.category == category) all.push_back({id, all.size(), d});
    }
  }
  std::sort(all.begin(), all.end(), [](const OracleDet& a, const OracleDet& b) {
    if (a.det.score != b.det.score) return a.det.score > b.det.score;
    return a.rank_key < b.rank_key;
  });
  std::map<ImageId, std::set<std::size_t>> taken;
  std::vector<bool> tp;
  for (const auto& d : all) {
    scores->push_back(d.det.score);
    const auto it = gts.images.find(d.image);
    if (it == gts.images.end()) {
      tp.push_back(false);
      continue;
    }
    // Overlap with every eligible ground truth, then the best one (lowest index on ties).
    std::vector<std::pair<double, std::size_t>> cand;
    for (std::size_t g = 0; g < it->second.size(); ++g) {
      const Box& gt = it->second[g];
      if (gt.category != category || taken[d.image].count(g)) continue;
      const double o = oracle_iou(d.det.box, gt);
      if (o >= thresh) cand.push_back({o, g});
    }
    if (cand.empty()) {
      tp.push_back(false);
      continue;
    }
    std::size_t best = 0;
    for (std::size_t i = 1; i < cand.size(); ++i) {
      if (cand[i].first > cand[best].first) best = i;
    }
    taken[d.image].insert(cand[best].second);
    tp.push_back(true);
  }
  return tp;
}

inline double oracle_ap(const std::vector<bool>& tp, std::size_t n_gt) {
  if (n_gt == 0) return 0.0;
  double total = 0.0;
  for (int k = 0; k <= 100; ++k) {
    const double r = k / 100.0;
    double best = 0.0;
    std::size_t hits = 0;
    for (std::size_t i = 0; i < tp.size(); ++i) {
      if (tp[i]) ++hits;
      const double recall = static_cast<double>(hits) / static_cast<double>(n_gt);
      const double precision = static_cast<double>(hits) / static_cast<double>(i + 1);
      if (recall >= r) best = std::max(best, precision);
    }
    total += best;
  }
  return total / 101.0;
}

struct OracleReport {
  double ap50 = 0, ap75 = 0, ap = 0;
};

inline OracleReport oracle_evaluate(const DetectionSet& dets, const AnnotationSet& gts) {
  std::set<int> cats;
  std::map<int, std::size_t> n_gt;
  for (const auto& [id, boxes] : gts.images) {
    for (const auto& b : boxes) {
      cats.insert(b.category);
      ++n_gt[b.category];
    }
  }
  for (const auto& [id, list] : dets.images) {
    for (const auto& d : list) cats.insert(d.box.category);
  }
  OracleReport r;
  if (cats.empty()) return r;
  double per_t[10] = {};
  for (int c : cats) {
    for (int t = 0; t < 10; ++t) {
      std::vector<double> scores;
      const auto tp = oracle_match(dets, gts, c, (50 + 5 * t) / 100.0, &scores);
      per_t[t] += oracle_ap(tp, n_gt[c]);
    }
  }
  for (double& v : per_t) v /= static_cast<double>(cats.size());
  r.ap50 = per_t[0];
  r.ap75 = per_t[5];
  for (double v : per_t) r.ap += v / 10.0;
  return r;
}

// Small random problem: up to 3 images, 3 categories, at most 6 boxes each
// side per image, detections jittered around ground truth plus strays.
inline std::pair<DetectionSet, AnnotationSet> random_detection_problem(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto rand_box = [&](int cat) {
    const double x = 40 * u(rng), y = 40 * u(rng);
    return Box{x, y, x + 2 + 20 * u(rng), y + 2 + 20 * u(rng), cat};
  };
  DetectionSet dets;
  AnnotationSet gts;
  const int n_images = 1 + static_cast<int>(rng() % 3);
  for (ImageId id = 0; id < n_images; ++id) {
    auto& g = gts.images[id];
    const std::size_t n_gt = rng() % 7;
    for (std::size_t i = 0; i < n_gt; ++i) g.push_back(rand_box(1 + static_cast<int>(rng() % 3)));
    auto& d = dets.images[id];
    const std::size_t n_det = rng() % 7;
    for (std::size_t i = 0; i < n_det; ++i) {
      Box b;
      if (!g.empty() && u(rng) < 0.7) {
        b = g[rng() % g.size()];
        const double j = 3 * (u(rng) - 0.5);
        b.x_min += j;
        b.x_max += 2 * j * u(rng);
        b.y_min -= j * u(rng);
        if (u(rng) < 0.1) b.category = b.category % 3 + 1;
      } else {
        b = rand_box(1 + static_cast<int>(rng() % 3));
      }
      // Coarse scores in [0.1, 0.9] so ties occur.
      d.push_back({b, 0.1 + std::round(u(rng) * 8) / 10});
    }
  }
  return {dets, gts};
}

}  // namespace genisp::testing
