#pragma once

// COCO-style average precision: greedy score-ordered matching, 101-point
// interpolated precision, thresholds 0.50:0.05:0.95.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <vector>

namespace genisp {

struct Box {
  double x_min = 0, y_min = 0, x_max = 0, y_max = 0;
  int category = 0;

  double area() const { return std::max(0.0, x_max - x_min) * std::max(0.0, y_max - y_min); }
  bool valid() const { return x_max > x_min && y_max > y_min; }
  friend bool operator==(const Box&, const Box&) = default;
};

struct Detection {
  Box box;
  double score = 0;
};

using ImageId = std::int64_t;

struct AnnotationSet {
  std::map<ImageId, std::vector<Box>> images;
};

struct DetectionSet {
  std::map<ImageId, std::vector<Detection>> images;
};

inline double iou(const Box& a, const Box& b) {
  const double iw = std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min);
  const double ih = std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min);
  if (iw <= 0 || ih <= 0) return 0.0;
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  return uni > 0 ? std::clamp(inter / uni, 0.0, 1.0) : 0.0;
}

struct ScoredLabel {
  double score = 0;
  bool tp = false;
};

// Detections of one category, score-sorted (stable over image order and
// in-image order), each labelled TP or FP at `iou_thresh`.
inline std::vector<ScoredLabel> match_and_score(const DetectionSet& dets,
                                                const AnnotationSet& gts,
                                                int category, double iou_thresh) {
  struct Ref {
    ImageId image;
    const Detection* det;
  };
  std::vector<Ref> order;
  for (const auto& [id, list] : dets.images) {
    for (const auto& d : list) {
      if (d.box.category == category) order.push_back({id, &d});
    }
  }
  std::stable_sort(order.begin(), order.end(),
                   [](const Ref& a, const Ref& b) { return a.det->score > b.det->score; });

  std::map<ImageId, std::vector<bool>> used;
  std::vector<ScoredLabel> out;
  out.reserve(order.size());
  for (const Ref& r : order) {
    ScoredLabel label{r.det->score, false};
    auto git = gts.images.find(r.image);
    if (git != gts.images.end()) {
      const auto& boxes = git->second;
      auto& taken = used[r.image];
      taken.resize(boxes.size(), false);
      double best = iou_thresh;
      std::optional<std::size_t> match;
      for (std::size_t g = 0; g < boxes.size(); ++g) {
        if (taken[g] || boxes[g].category != category) continue;
        const double o = iou(r.det->box, boxes[g]);
        if (o < iou_thresh) continue;
        if (!match || o > best) {
          best = o;
          match = g;
        }
      }
      if (match) {
        taken[*match] = true;
        label.tp = true;
      }
    }
    out.push_back(label);
  }
  return out;
}

// Labels must already be in descending score order. Returns nullopt when
// there are neither ground truths nor detections.
inline std::optional<double> average_precision(const std::vector<ScoredLabel>& labels,
                                               std::size_t n_gt) {
  if (n_gt == 0) {
    if (labels.empty()) return std::nullopt;
    return 0.0;
  }
  const std::size_t n = labels.size();
  std::vector<double> recall(n), precision(n);
  std::size_t tp = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i].tp) ++tp;
    recall[i] = static_cast<double>(tp) / static_cast<double>(n_gt);
    precision[i] = static_cast<double>(tp) / static_cast<double>(i + 1);
  }
  // Make precision monotone non-increasing from the right.
  for (std::size_t i = n; i-- > 1;) precision[i - 1] = std::max(precision[i - 1], precision[i]);
  double total = 0.0;
  for (int k = 0; k <= 100; ++k) {
    const double r = k / 100.0;
    const auto it = std::lower_bound(recall.begin(), recall.end(), r);
    if (it != recall.end()) total += precision[static_cast<std::size_t>(it - recall.begin())];
  }
  return total / 101.0;
}

inline std::array<double, 10> iou_thresholds() {
  std::array<double, 10> t{};
  for (int i = 0; i < 10; ++i) t[i] = (50 + 5 * i) / 100.0;
  return t;
}

struct CategoryAp {
  double ap50 = 0, ap75 = 0, ap = 0;
};

struct ApReport {
  double ap50 = 0, ap75 = 0, ap = 0;
  std::map<int, CategoryAp> per_category;
};

// Categories with neither ground truth nor detections are left out.
// Detection categories absent from the ground truth score AP 0 (all FP).
inline ApReport evaluate(const DetectionSet& dets, const AnnotationSet& gts) {
  std::set<int> categories;
  std::map<int, std::size_t> n_gt;
  for (const auto& [id, boxes] : gts.images) {
    for (const auto& b : boxes) {
      categories.insert(b.category);
      ++n_gt[b.category];
    }
  }
  for (const auto& [id, list] : dets.images) {
    for (const auto& d : list) categories.insert(d.box.category);
  }

  const auto thresholds = iou_thresholds();
  ApReport report;
  std::array<double, 10> sum_per_thresh{};
  std::size_t counted = 0;
  for (int cat : categories) {
    std::array<double, 10> ap_t{};
    bool defined = true;
    for (std::size_t t = 0; t < thresholds.size(); ++t) {
      const auto labels = match_and_score(dets, gts, cat, thresholds[t]);
      const auto ap = average_precision(labels, n_gt[cat]);
      if (!ap) {
        defined = false;
        break;
      }
      ap_t[t] = *ap;
    }
    if (!defined) continue;
    CategoryAp c;
    c.ap50 = ap_t[0];
    c.ap75 = ap_t[5];
    c.ap = std::accumulate(ap_t.begin(), ap_t.end(), 0.0) / 10.0;
    report.per_category[cat] = c;
    for (std::size_t t = 0; t < 10; ++t) sum_per_thresh[t] += ap_t[t];
    ++counted;
  }
  if (counted == 0) return report;
  std::array<double, 10> mean_t{};
  for (std::size_t t = 0; t < 10; ++t) mean_t[t] = sum_per_thresh[t] / static_cast<double>(counted);
  report.ap50 = mean_t[0];
  report.ap75 = mean_t[5];
  report.ap = std::accumulate(mean_t.begin(), mean_t.end(), 0.0) / 10.0;
  return report;
}

}  // namespace genisp
