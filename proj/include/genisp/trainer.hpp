#pragma once

// End-to-end training of ConvWB, ConvCC and the enhancement net under a
// frozen guidance model: Adam, step learning-rate schedule, brightness /
// contrast augmentation, optional gray-world colour term.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "genisp/losses.hpp"
#include "genisp/model.hpp"
#include "genisp/raw_pipeline.hpp"

namespace genisp {

struct LrMilestone {
  int epoch = 0;
  double lr = 0.0;
};

struct AugmentConfig {
  double brightness = 0.1;  // +-delta in normalised units
  double contrast = 0.2;    // factor drawn from [1 - delta, 1 + delta]
};

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct TrainConfig {
  int epochs = 15;
  std::size_t batch_size = 8;
  std::vector<LrMilestone> lr_schedule{{0, 1e-2}, {5, 1e-3}, {10, 1e-4}};
  AdamConfig adam{};
  std::uint64_t seed = 0;
  bool augment = true;
  AugmentConfig augmentation{};
  LossWeights loss{};
  bool use_convwb = true;
  bool use_convcc = true;
  bool use_cst = true;
  double grad_clip_norm = 10.0;  // 0 disables
  std::size_t max_steps = 0;     // 0 = run all epochs
  std::size_t threads = 1;
  bool resize_enabled = true;
  ResizePolicy resize{};

  void validate() const {
    if (epochs < 0) throw std::invalid_argument("epochs must be >= 0");
    if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
    if (lr_schedule.empty() || lr_schedule.front().epoch != 0) {
      throw std::invalid_argument("lr_schedule must start at epoch 0");
    }
    for (std::size_t i = 0; i < lr_schedule.size(); ++i) {
      const auto& m = lr_schedule[i];
      if (!(m.lr >= 0.0) || !std::isfinite(m.lr)) {
        throw std::invalid_argument("lr_schedule: learning rates must be finite and >= 0");
      }
      if (i > 0 && (m.epoch <= lr_schedule[i - 1].epoch || m.lr > lr_schedule[i - 1].lr)) {
        throw std::invalid_argument(
            "lr_schedule: epochs must increase and learning rates must not increase");
      }
    }
    if (!(adam.beta1 >= 0 && adam.beta1 < 1 && adam.beta2 >= 0 && adam.beta2 < 1 && adam.eps > 0)) {
      throw std::invalid_argument("invalid Adam hyper-parameters");
    }
    if (augmentation.brightness < 0 || augmentation.contrast < 0 || augmentation.contrast > 1) {
      throw std::invalid_argument("augmentation ranges must be >= 0 (contrast <= 1)");
    }
    if (grad_clip_norm < 0) throw std::invalid_argument("grad_clip_norm must be >= 0");
    if (threads < 1) throw std::invalid_argument("threads must be >= 1");
    loss.validate();
  }

  double lr_at(int epoch) const {
    double lr = lr_schedule.front().lr;
    for (const auto& m : lr_schedule) {
      if (m.epoch <= epoch) lr = m.lr;
    }
    return lr;
  }

  StageToggles toggles() const { return {use_convwb, use_convcc}; }
};

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ------------------------------------------------------------------- Adam

struct OptimizerState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  std::uint64_t step = 0;
};

// One bias-corrected Adam update using each parameter's `grad` slot.
// Nothing is modified if any gradient is non-finite.
template <typename T>
void adam_step(const ParamRefs<T>& params, OptimizerState& state, double lr,
               const AdamConfig& cfg = {}) {
  for (const auto& [name, t] : params) {
    if (!t->has_grad()) throw TrainingError("adam_step: parameter '" + name + "' has no gradient");
    for (std::size_t i = 0; i < t->grad.size(); ++i) {
      if (!std::isfinite(t->grad[i])) {
        throw TrainingError("adam_step: non-finite gradient in '" + name + "' at index " +
                            std::to_string(i));
      }
    }
  }
  if (state.m.size() != params.size()) {
    state.m.clear();
    state.v.clear();
    for (const auto& p : params) {
      state.m.emplace_back(p.second->numel(), 0.0);
      state.v.emplace_back(p.second->numel(), 0.0);
    }
  }
  ++state.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (std::size_t p = 0; p < params.size(); ++p) {
    Tensor<T>& t = *params[p].second;
    auto& m = state.m[p];
    auto& v = state.v[p];
    if (m.size() != t.numel()) throw TrainingError("adam_step: moment shape mismatch");
    for (std::size_t i = 0; i < t.numel(); ++i) {
      const double g = static_cast<double>(t.grad[i]);
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
      const double mhat = m[i] / bc1, vhat = v[i] / bc2;
      t[i] = static_cast<T>(static_cast<double>(t[i]) - lr * mhat / (std::sqrt(vhat) + cfg.eps));
    }
  }
}

// ------------------------------------------------------------ augmentation

// contrast * (x - channel_mean) + channel_mean + brightness, clamped below at 0.
template <typename T>
Tensor<T> adjust_brightness_contrast(const Tensor<T>& image, double contrast, double brightness) {
  require_rank(image.shape(), 3, "augment");
  if (image.dim(0) != 3) throw ShapeError("augment: expected 3 channels");
  const std::size_t n = image.dim(1) * image.dim(2);
  Tensor<T> out(image.shape());
  for (std::size_t c = 0; c < 3; ++c) {
    const T* x = image.data().data() + c * n;
    const double mean = kernels::sum_plane(x, n) / static_cast<double>(n);
    T* y = out.data().data() + c * n;
    for (std::size_t i = 0; i < n; ++i) {
      const double v = contrast * (static_cast<double>(x[i]) - mean) + mean + brightness;
      y[i] = static_cast<T>(std::max(0.0, v));
    }
  }
  return out;
}

template <typename T>
Tensor<T> augment_brightness_contrast(const Tensor<T>& image, std::mt19937_64& rng,
                                      const AugmentConfig& cfg) {
  std::uniform_real_distribution<double> c(1.0 - cfg.contrast, 1.0 + cfg.contrast);
  std::uniform_real_distribution<double> b(-cfg.brightness, cfg.brightness);
  const double contrast = cfg.contrast > 0 ? c(rng) : 1.0;
  const double brightness = cfg.brightness > 0 ? b(rng) : 0.0;
  if (contrast == 1.0 && brightness == 0.0) return image;
  return adjust_brightness_contrast(image, contrast, brightness);
}

// ---------------------------------------------------------------- training

struct TrainSample {
  BayerFrame frame;
  std::vector<Box> boxes;  // in raw frame pixel coordinates
};

struct EpochLog {
  int epoch = 0;
  std::size_t step = 0;  // optimizer steps completed at end of epoch
  double total = 0, cls = 0, reg = 0, wb = 0, lr = 0;
};

struct StepLog {
  int epoch = 0;
  std::size_t step = 0;
  double total = 0, cls = 0, reg = 0, wb = 0, lr = 0;
  std::vector<std::array<double, 3>> wb_gains;  // per image, (1,1,1) when ConvWB is off
};

struct TrainResult {
  std::vector<EpochLog> epochs;
  std::vector<StepLog> steps;
};

// Image fed to the colour modules plus boxes rescaled to its pixel grid.
template <typename T>
struct PreparedSample {
  Tensor<T> image;
  std::vector<Box> boxes;
};

template <typename T>
PreparedSample<T> prepare_sample(const TrainSample& s, const TrainConfig& cfg) {
  PreprocessOptions opt;
  opt.use_cst = cfg.use_cst;
  opt.resize = cfg.resize_enabled;
  opt.policy = cfg.resize;
  PreparedSample<T> p{preprocess<T>(s.frame, opt), {}};
  const double sx = static_cast<double>(p.image.dim(2)) / s.frame.width;
  const double sy = static_cast<double>(p.image.dim(1)) / s.frame.height;
  for (Box b : s.boxes) {
    b.x_min *= sx;
    b.x_max *= sx;
    b.y_min *= sy;
    b.y_max *= sy;
    p.boxes.push_back(b);
  }
  return p;
}

template <typename T>
struct ImageStepResult {
  double cls = 0, reg = 0, wb = 0, total = 0;
  std::array<double, 3> gains{1.0, 1.0, 1.0};
  std::vector<std::vector<T>> grads;  // one per parameter
};

// Forward + backward for one image. Does not touch shared state.
template <typename T>
ImageStepResult<T> image_step(GenIspModel<T>& model, const Tensor<T>& image,
                              const std::vector<Box>& boxes, const GuidanceModel<T>& guidance,
                              const TrainConfig& cfg) {
  const auto params = model.parameters();
  Tape<T> tape;
  const auto bound = bind_params<T>(params, &tape);
  const IspOutput<T> out = GenIspModel<T>::forward(Var<T>::constant(image), bound, cfg.toggles());
  const Var<T> wb = gray_world_loss(out.enhanced);
  const GuidanceResult<T> g = guidance.evaluate(out.enhanced.value(), boxes);
  const Var<T> guided = external_loss(out.enhanced, static_cast<T>(g.loss()), g.image_grad);
  const Var<T> loss = add(guided, scale(wb, static_cast<T>(cfg.loss.lambda_wb)));
  tape.backward(loss);

  ImageStepResult<T> r;
  r.cls = g.cls;
  r.reg = g.reg;
  r.wb = static_cast<double>(wb.value().item());
  r.total = r.cls + r.reg + cfg.loss.lambda_wb * r.wb;
  if (out.wb_gains) {
    for (std::size_t c = 0; c < 3; ++c) r.gains[c] = static_cast<double>(out.wb_gains->value()[c]);
  }
  r.grads.reserve(bound.size());
  for (const auto& v : bound) {
    const auto gr = tape.grad(v);
    r.grads.emplace_back(gr.begin(), gr.end());
  }
  return r;
}

template <typename T>
void clip_global_norm(const ParamRefs<T>& params, double max_norm) {
  double sq = 0.0;
  for (const auto& [name, t] : params) {
    for (T g : t->grad) sq += static_cast<double>(g) * static_cast<double>(g);
  }
  const double norm = std::sqrt(sq);
  if (!(norm > max_norm)) return;
  const double s = max_norm / norm;
  for (const auto& [name, t] : params) {
    for (T& g : t->grad) g = static_cast<T>(static_cast<double>(g) * s);
  }
}

// Runs the recipe in `cfg`. Per-image gradients are computed independently
// (optionally on several threads) and reduced in batch order, so results do
// not depend on the thread count.
template <typename T>
TrainResult train(GenIspModel<T>& model, const std::vector<TrainSample>& dataset,
                  const GuidanceModel<T>& guidance, const TrainConfig& cfg) {
  cfg.validate();
  if (dataset.empty()) throw std::invalid_argument("train: dataset is empty");
  std::vector<PreparedSample<T>> prepared;
  prepared.reserve(dataset.size());
  for (const auto& s : dataset) prepared.push_back(prepare_sample<T>(s, cfg));

  const auto params = model.parameters();
  OptimizerState opt;
  std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<std::size_t> order(dataset.size());
  TrainResult result;
  std::size_t step = 0;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    if (cfg.max_steps && step >= cfg.max_steps) break;
    const double lr = cfg.lr_at(epoch);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    EpochLog elog{epoch, 0, 0, 0, 0, 0, lr};
    std::size_t seen = 0;

    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      if (cfg.max_steps && step >= cfg.max_steps) break;
      const std::size_t count = std::min(cfg.batch_size, order.size() - start);
      std::vector<Tensor<T>> inputs;
      inputs.reserve(count);
      for (std::size_t i = 0; i < count; ++i) {
        const Tensor<T>& img = prepared[order[start + i]].image;
        inputs.push_back(cfg.augment ? augment_brightness_contrast(img, rng, cfg.augmentation) : img);
      }

      std::vector<ImageStepResult<T>> results(count);
      auto work = [&](std::size_t tid, std::size_t nthreads) {
        for (std::size_t i = tid; i < count; i += nthreads) {
          results[i] = image_step(model, inputs[i], prepared[order[start + i]].boxes, guidance, cfg);
        }
      };
      const std::size_t nthreads = std::min(cfg.threads, count);
      if (nthreads <= 1) {
        work(0, 1);
      } else {
        std::vector<std::thread> pool;
        for (std::size_t t = 0; t < nthreads; ++t) pool.emplace_back(work, t, nthreads);
        for (auto& th : pool) th.join();
      }

      StepLog slog{epoch, step + 1, 0, 0, 0, 0, lr, {}};
      for (std::size_t i = 0; i < count; ++i) {
        const auto& r = results[i];
        if (!std::isfinite(r.total)) {
          std::ostringstream os;
          os << "non-finite loss at epoch " << epoch << ", batch " << start / cfg.batch_size
             << " (global step " << step << ")";
          throw TrainingError(os.str());
        }
        slog.total += r.total;
        slog.cls += r.cls;
        slog.reg += r.reg;
        slog.wb += r.wb;
        slog.wb_gains.push_back(r.gains);
      }
      elog.total += slog.total;
      elog.cls += slog.cls;
      elog.reg += slog.reg;
      elog.wb += slog.wb;
      seen += count;
      const double inv = 1.0 / static_cast<double>(count);
      slog.total *= inv;
      slog.cls *= inv;
      slog.reg *= inv;
      slog.wb *= inv;

      for (std::size_t p = 0; p < params.size(); ++p) {
        Tensor<T>& t = *params[p].second;
        t.zero_grad();
        for (std::size_t i = 0; i < count; ++i) {
          const auto& g = results[i].grads[p];
          for (std::size_t k = 0; k < g.size(); ++k) t.grad[k] += g[k];
        }
        for (T& g : t.grad) g = static_cast<T>(static_cast<double>(g) * inv);
      }
      if (cfg.grad_clip_norm > 0) clip_global_norm(params, cfg.grad_clip_norm);
      adam_step(params, opt, lr, cfg.adam);
      ++step;
      result.steps.push_back(std::move(slog));
    }
    if (seen > 0) {
      const double inv = 1.0 / static_cast<double>(seen);
      elog.total *= inv;
      elog.cls *= inv;
      elog.reg *= inv;
      elog.wb *= inv;
      elog.step = step;
      result.epochs.push_back(elog);
    }
  }
  return result;
}

}  // namespace genisp
