#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include "genisp/autodiff.hpp"

namespace genisp {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t checked = 0;
  std::size_t refined = 0;  // components that only passed at a smaller step
};

// Denominator floor for the relative error. Without it, components whose true
// gradient is zero (or nearly so) turn difference roundoff, about 1e-12 at
// step 1e-4, into a large relative error.
inline constexpr double kGradCheckFloor = 1e-6;

struct GradCheckOptions {
  double step = 1e-4;
  std::span<const std::size_t> components{};  // empty = every component
  // Networks built from leaky ReLU and max pooling are piecewise smooth: a
  // difference window that straddles a kink is wrong even for a correct
  // gradient. When set, a component failing `tolerance` at `step` is probed
  // again at each refine step and keeps its best error. A genuinely wrong
  // gradient does not improve as the step shrinks.
  bool refine = false;
  double tolerance = 1e-4;
  std::vector<double> refine_steps{1e-5, 1e-6, 1e-7};
};

using ScalarFn = std::function<Var<double>(const Var<double>&)>;

inline GradCheckResult grad_check_detailed(const ScalarFn& fn, const Tensor<double>& point,
                                           const GradCheckOptions& opt) {
  Tape<double> tape;
  Var<double> x = tape.leaf(point);
  Var<double> loss = fn(x);
  tape.backward(loss);
  const auto analytic = tape.grad(x);

  Tensor<double> probe = point;
  auto central = [&](std::size_t i, double step) {
    const double orig = probe[i];
    probe[i] = orig + step;
    const double fp = fn(Var<double>::constant(probe)).value().item();
    probe[i] = orig - step;
    const double fm = fn(Var<double>::constant(probe)).value().item();
    probe[i] = orig;
    return (fp - fm) / (2.0 * step);
  };
  auto rel = [](double a, double n) {
    return std::abs(a - n) / std::max({std::abs(a), std::abs(n), kGradCheckFloor});
  };

  GradCheckResult r;
  const std::size_t count = opt.components.empty() ? point.numel() : opt.components.size();
  for (std::size_t k = 0; k < count; ++k) {
    const std::size_t i = opt.components.empty() ? k : opt.components[k];
    const double a = analytic[i];
    double numeric = central(i, opt.step);
    double err = rel(a, numeric);
    if (opt.refine && err > opt.tolerance) {
      for (double s : opt.refine_steps) {
        const double n = central(i, s);
        if (rel(a, n) < err) {
          err = rel(a, n);
          numeric = n;
        }
      }
      if (err <= opt.tolerance) ++r.refined;
    }
    if (k == 0 || err > r.max_rel_error) {
      r.max_rel_error = err;
      r.worst_index = i;
      r.analytic = a;
      r.numeric = numeric;
    }
  }
  r.checked = count;
  return r;
}

// Compares the tape gradient of `fn` at `point` against central differences.
// Relative error per component: |a - n| / max(|a|, |n|, kGradCheckFloor).
inline GradCheckResult grad_check_detailed(const ScalarFn& fn, const Tensor<double>& point,
                                           double step,
                                           std::span<const std::size_t> components = {}) {
  GradCheckOptions opt;
  opt.step = step;
  opt.components = components;
  return grad_check_detailed(fn, point, opt);
}

inline double grad_check(const ScalarFn& fn, const Tensor<double>& point, double step = 1e-4,
                         std::span<const std::size_t> components = {}) {
  return grad_check_detailed(fn, point, step, components).max_rel_error;
}

}  // namespace genisp
