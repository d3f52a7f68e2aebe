#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <random>
#include <stdexcept>
#include <vector>

#include "genisp/autodiff.hpp"
#include "genisp/color_modules.hpp"
#include "genisp/detection_metrics.hpp"

namespace genisp {

inline constexpr double kProbEps = 1e-7;

struct FocalParams {
  double alpha = 0.25;
  double gamma = 2.0;

  void validate() const {
    if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("focal alpha must be in (0,1)");
    if (!(gamma >= 0.0)) throw std::invalid_argument("focal gamma must be >= 0");
  }
};

struct LossWeights {
  double lambda_wb = 0.1;

  void validate() const {
    if (!(lambda_wb >= 0.0) || !std::isfinite(lambda_wb)) {
      throw std::invalid_argument("lambda_wb must be a finite value >= 0");
    }
  }
};

// ------------------------------------------------------------- gray world

// Sum of absolute pairwise differences between the three channel means.
template <typename T>
Var<T> gray_world_loss(const Var<T>& image) {
  require_rank(image.shape(), 3, "gray_world_loss");
  if (image.shape()[0] != 3) throw ShapeError("gray_world_loss: expected 3 channels");
  const Var<T> j = channel_mean(image);
  const Var<T> r = pick(j, 0), g = pick(j, 1), b = pick(j, 2);
  return add(add(abs(sub(r, g)), abs(sub(r, b))), abs(sub(g, b)));
}

template <typename T>
double gray_world_loss(const Tensor<T>& image) {
  return static_cast<double>(gray_world_loss(Var<T>::constant(image)).value().item());
}

// ------------------------------------------------------ scalar detection losses

inline double clamp_probability(double p) { return std::clamp(p, kProbEps, 1.0 - kProbEps); }

// Alpha-balanced focal loss of one binary prediction.
inline double focal_loss(double pred_prob, bool is_positive, const FocalParams& p = {}) {
  if (!(pred_prob > 0.0 && pred_prob < 1.0)) {
    throw std::domain_error("focal_loss: probability must lie strictly inside (0,1)");
  }
  const double pt = is_positive ? pred_prob : 1.0 - pred_prob;
  const double at = is_positive ? p.alpha : 1.0 - p.alpha;
  return -at * std::pow(1.0 - pt, p.gamma) * std::log(pt);
}

inline double smooth_l1(double pred, double target, double beta = 1.0) {
  if (!(beta > 0.0)) throw std::invalid_argument("smooth_l1: beta must be positive");
  const double d = std::abs(pred - target);
  return d < beta ? 0.5 * d * d / beta : d - 0.5 * beta;
}

inline double total_loss(double cls, double reg, double wb, const LossWeights& w) {
  w.validate();
  for (double v : {cls, reg, wb}) {
    if (!std::isfinite(v) || v < 0.0) {
      throw std::invalid_argument("total_loss: components must be finite and >= 0");
    }
  }
  return cls + reg + w.lambda_wb * wb;
}

// ------------------------------------------------------ batched tape versions

// Sum over all entries of the focal loss of sigmoid(logits) against 0/1
// targets. Probabilities are clamped to [eps, 1-eps].
template <typename T>
Var<T> sigmoid_focal_loss_sum(const Var<T>& logits, const Tensor<T>& targets,
                              const FocalParams& fp) {
  require_same_shape(logits.shape(), targets.shape(), "sigmoid_focal_loss_sum");
  const std::size_t n = logits.numel();
  std::vector<double> dldx(n);
  double total = 0.0;
  const double a = fp.alpha, gm = fp.gamma;
  for (std::size_t i = 0; i < n; ++i) {
    const double x = static_cast<double>(logits.value()[i]);
    const double raw = 1.0 / (1.0 + std::exp(-x));
    const double p = clamp_probability(raw);
    const bool clamped = p != raw;
    const bool pos = targets[i] > T{0.5};
    double dldp;
    if (pos) {
      total += -a * std::pow(1.0 - p, gm) * std::log(p);
      dldp = a * (gm * std::pow(1.0 - p, gm - 1.0) * std::log(p) - std::pow(1.0 - p, gm) / p);
      if (gm == 0.0) dldp = -a / p;
    } else {
      total += -(1.0 - a) * std::pow(p, gm) * std::log(1.0 - p);
      dldp = -(1.0 - a) * (gm * std::pow(p, gm - 1.0) * std::log(1.0 - p) - std::pow(p, gm) / (1.0 - p));
      if (gm == 0.0) dldp = (1.0 - a) / (1.0 - p);
    }
    dldx[i] = clamped ? 0.0 : dldp * p * (1.0 - p);
  }
  Tensor<T> out = Tensor<T>::scalar(static_cast<T>(total));
  Tape<T>* tape = detail::common_tape<T>({&logits});
  if (!tape) return Var<T>::constant(std::move(out));
  auto saved = std::make_shared<const std::vector<double>>(std::move(dldx));
  return tape->record(std::move(out), [logits, saved](Tape<T>& t, std::span<const T> g) {
    auto& d = t.grad_buffer(logits.id());
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += static_cast<T>(static_cast<double>(g[0]) * (*saved)[i]);
  });
}

// Sum of smooth-L1 over entries where mask is non-zero.
template <typename T>
Var<T> smooth_l1_sum(const Var<T>& pred, const Tensor<T>& target, const Tensor<T>& mask,
                     double beta) {
  require_same_shape(pred.shape(), target.shape(), "smooth_l1_sum");
  require_same_shape(pred.shape(), mask.shape(), "smooth_l1_sum mask");
  if (!(beta > 0.0)) throw std::invalid_argument("smooth_l1: beta must be positive");
  const std::size_t n = pred.numel();
  std::vector<double> dldx(n, 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (mask[i] == T{0}) continue;
    const double diff = static_cast<double>(pred.value()[i]) - static_cast<double>(target[i]);
    total += smooth_l1(static_cast<double>(pred.value()[i]), static_cast<double>(target[i]), beta);
    dldx[i] = std::abs(diff) < beta ? diff / beta : (diff > 0 ? 1.0 : -1.0);
  }
  Tensor<T> out = Tensor<T>::scalar(static_cast<T>(total));
  Tape<T>* tape = detail::common_tape<T>({&pred});
  if (!tape) return Var<T>::constant(std::move(out));
  auto saved = std::make_shared<const std::vector<double>>(std::move(dldx));
  return tape->record(std::move(out), [pred, saved](Tape<T>& t, std::span<const T> g) {
    auto& d = t.grad_buffer(pred.id());
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += static_cast<T>(static_cast<double>(g[0]) * (*saved)[i]);
  });
}

// ---------------------------------------------------------------- guidance

template <typename T>
struct GuidanceResult {
  double cls = 0.0;
  double reg = 0.0;
  Tensor<T> image_grad;  // d(cls + reg) / d(image)

  double loss() const { return cls + reg; }
};

// Frozen task model that scores an enhanced image against annotations.
// Implementations must be deterministic and safe to share across threads.
template <typename T>
class GuidanceModel {
 public:
  virtual ~GuidanceModel() = default;

  // `gt` boxes are in the pixel coordinates of `image`.
  virtual GuidanceResult<T> evaluate(const Tensor<T>& image, const std::vector<Box>& gt) const = 0;

  virtual std::vector<Detection> detect(const Tensor<T>& /*image*/) const { return {}; }
};

// Contributes nothing; used for colour-only objectives.
template <typename T>
class NullGuidance final : public GuidanceModel<T> {
 public:
  GuidanceResult<T> evaluate(const Tensor<T>& image, const std::vector<Box>&) const override {
    return {0.0, 0.0, Tensor<T>(image.shape())};
  }
};

template <typename T>
struct DetectorLoss {
  Var<T> cls;
  Var<T> reg;
};

// Tiny single-stage detector with fixed random weights: three stride-2 3x3
// convs give a grid with one cell per 8x8 pixels; each cell predicts one
// sigmoid logit per class plus (dx, dy, log w, log h) box offsets. A ground
// truth is assigned to the cell containing its centre (first box wins).
template <typename T>
class ToyDetector final : public GuidanceModel<T> {
 public:
  static constexpr std::size_t kStride = 8;
  static constexpr std::size_t kC1 = 8, kC2 = 16;

  struct Options {
    std::vector<int> categories{1};
    std::uint64_t seed = 0x5eed'de7ec7ULL;
    FocalParams focal{};
    double smooth_l1_beta = 1.0;
    double score_threshold = 0.05;
  };

  ToyDetector() : ToyDetector(Options{}) {}

  explicit ToyDetector(Options opt) : opt_(std::move(opt)) {
    opt_.focal.validate();
    if (opt_.categories.empty()) throw std::invalid_argument("ToyDetector: no categories");
    const std::size_t k = opt_.categories.size();
    std::mt19937_64 rng(opt_.seed);
    weights_.push_back(Tensor<T>({kC1, 3, 3, 3}));
    weights_.push_back(Tensor<T>({kC1}));
    weights_.push_back(Tensor<T>({kC2, kC1, 3, 3}));
    weights_.push_back(Tensor<T>({kC2}));
    weights_.push_back(Tensor<T>({k + 4, kC2, 3, 3}));
    weights_.push_back(Tensor<T>({k + 4}));
    he_uniform(weights_[0], 27, rng);
    he_uniform(weights_[2], kC1 * 9, rng);
    // Head at a smaller scale; class biases at the usual rare-object prior.
    std::uniform_real_distribution<double> head(-0.05, 0.05);
    for (auto& v : weights_[4].storage()) v = static_cast<T>(head(rng));
    const T prior = static_cast<T>(-std::log((1.0 - 0.01) / 0.01));
    for (std::size_t c = 0; c < k; ++c) weights_[5][c] = prior;
  }

  const Options& options() const { return opt_; }
  const std::vector<Tensor<T>>& weights() const { return weights_; }
  std::size_t num_classes() const { return opt_.categories.size(); }

  static std::size_t grid_size(std::size_t pixels) {
    std::size_t g = pixels;
    for (int i = 0; i < 3; ++i) g = (g + 2 - 3) / 2 + 1;
    return g;
  }

  // Raw head output: (K + 4) x gh x gw.
  Var<T> head(const Var<T>& image) const {
    std::vector<Var<T>> w;
    for (const auto& t : weights_) w.push_back(Var<T>::constant(t));
    Var<T> x = leaky_relu(conv2d(image, w[0], w[1], 2, 1));
    x = leaky_relu(conv2d(x, w[2], w[3], 2, 1));
    return conv2d(x, w[4], w[5], 2, 1);
  }

  struct Targets {
    Tensor<T> cls;       // K x gh x gw, one-hot on positive cells
    Tensor<T> box;       // 4 x gh x gw
    Tensor<T> box_mask;  // 4 x gh x gw
    std::size_t num_positive = 0;
  };

  Targets assign(std::size_t gh, std::size_t gw, const std::vector<Box>& gt) const {
    const std::size_t k = num_classes();
    Targets t{Tensor<T>({k, gh, gw}), Tensor<T>({4, gh, gw}), Tensor<T>({4, gh, gw}), 0};
    const double s = static_cast<double>(kStride);
    for (const Box& b : gt) {
      const auto cit = std::find(opt_.categories.begin(), opt_.categories.end(), b.category);
      if (cit == opt_.categories.end() || !b.valid()) continue;
      const std::size_t cls = static_cast<std::size_t>(cit - opt_.categories.begin());
      const double cx = 0.5 * (b.x_min + b.x_max), cy = 0.5 * (b.y_min + b.y_max);
      const auto gx = static_cast<std::size_t>(std::clamp(std::floor(cx / s), 0.0, static_cast<double>(gw - 1)));
      const auto gy = static_cast<std::size_t>(std::clamp(std::floor(cy / s), 0.0, static_cast<double>(gh - 1)));
      if (t.box_mask.at(0, gy, gx) != T{0}) continue;
      t.cls.at(cls, gy, gx) = T{1};
      const double tx = (cx - (static_cast<double>(gx) + 0.5) * s) / s;
      const double ty = (cy - (static_cast<double>(gy) + 0.5) * s) / s;
      const double tw = std::log((b.x_max - b.x_min) / s);
      const double th = std::log((b.y_max - b.y_min) / s);
      const double vals[4] = {tx, ty, tw, th};
      for (std::size_t c = 0; c < 4; ++c) {
        t.box.at(c, gy, gx) = static_cast<T>(vals[c]);
        t.box_mask.at(c, gy, gx) = T{1};
      }
      ++t.num_positive;
    }
    return t;
  }

  // Focal classification and smooth-L1 regression, both divided by
  // max(1, #positive cells).
  DetectorLoss<T> loss(const Var<T>& image, const std::vector<Box>& gt) const {
    require_rank(image.shape(), 3, "ToyDetector input");
    const Var<T> out = head(image);
    const std::size_t k = num_classes();
    const std::size_t gh = out.shape()[1], gw = out.shape()[2], plane = gh * gw;
    const Targets tg = assign(gh, gw, gt);
    const T norm = static_cast<T>(1.0 / static_cast<double>(std::max<std::size_t>(1, tg.num_positive)));
    const Var<T> flat = reshape(out, {out.numel()});
    const Var<T> cls_logits = slice(flat, 0, k * plane);
    const Var<T> box_pred = slice(flat, k * plane, 4 * plane);
    DetectorLoss<T> r;
    r.cls = scale(sigmoid_focal_loss_sum(cls_logits, tg.cls.reshaped({k * plane}), opt_.focal), norm);
    r.reg = scale(smooth_l1_sum(box_pred, tg.box.reshaped({4 * plane}),
                                tg.box_mask.reshaped({4 * plane}), opt_.smooth_l1_beta),
                  norm);
    return r;
  }

  GuidanceResult<T> evaluate(const Tensor<T>& image, const std::vector<Box>& gt) const override {
    Tape<T> tape;
    const Var<T> x = tape.leaf(image);
    const DetectorLoss<T> l = loss(x, gt);
    tape.backward(add(l.cls, l.reg));
    return {static_cast<double>(l.cls.value().item()), static_cast<double>(l.reg.value().item()),
            tape.grad_tensor(x)};
  }

  std::vector<Detection> detect(const Tensor<T>& image) const override {
    const Var<T> out = head(Var<T>::constant(image));
    const std::size_t k = num_classes();
    const std::size_t gh = out.shape()[1], gw = out.shape()[2];
    const Tensor<T>& v = out.value();
    const double s = static_cast<double>(kStride);
    std::vector<Detection> dets;
    for (std::size_t c = 0; c < k; ++c) {
      for (std::size_t y = 0; y < gh; ++y) {
        for (std::size_t x = 0; x < gw; ++x) {
          const double score = 1.0 / (1.0 + std::exp(-static_cast<double>(v.at(c, y, x))));
          if (score < opt_.score_threshold) continue;
          const double cx = (static_cast<double>(x) + 0.5 + static_cast<double>(v.at(k, y, x))) * s;
          const double cy = (static_cast<double>(y) + 0.5 + static_cast<double>(v.at(k + 1, y, x))) * s;
          const double w = std::exp(std::clamp(static_cast<double>(v.at(k + 2, y, x)), -8.0, 8.0)) * s;
          const double h = std::exp(std::clamp(static_cast<double>(v.at(k + 3, y, x)), -8.0, 8.0)) * s;
          dets.push_back({{cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2, opt_.categories[c]}, score});
        }
      }
    }
    return dets;
  }

 private:
  Options opt_;
  std::vector<Tensor<T>> weights_;
};

}  // namespace genisp
