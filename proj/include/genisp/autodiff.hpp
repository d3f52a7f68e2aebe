#pragma once

// Reverse-mode automatic differentiation over Tensor values.
//
// A Var wraps an immutable tensor value. Vars created through Tape::leaf are
// tracked; every op applied to at least one tracked input records a backward
// closure on that input's tape. Untracked Vars (Var::constant) run the same
// ops without recording anything, which is how inference reuses the model
// code without holding on to intermediate activations.

#include <cmath>
#include <cstddef>
#include <deque>
#include <functional>
#include <limits>
#include <memory>
#include <span>
#include <stdexcept>
#include <vector>

#include "genisp/kernels.hpp"
#include "genisp/tensor.hpp"

namespace genisp {

template <typename T>
class Tape;

template <typename T>
class Var {
 public:
  static constexpr std::size_t kUntracked = std::numeric_limits<std::size_t>::max();

  Var() = default;

  static Var constant(Tensor<T> value) {
    Var v;
    v.value_ = std::make_shared<const Tensor<T>>(std::move(value));
    return v;
  }

  const Tensor<T>& value() const { return *value_; }
  std::shared_ptr<const Tensor<T>> value_ptr() const { return value_; }
  const Shape& shape() const { return value_->shape(); }
  std::size_t numel() const { return value_->numel(); }

  bool tracked() const { return tape_ != nullptr && id_ != kUntracked; }
  Tape<T>* tape() const { return tape_; }
  std::size_t id() const { return id_; }

 private:
  friend class Tape<T>;
  std::shared_ptr<const Tensor<T>> value_;
  Tape<T>* tape_ = nullptr;
  std::size_t id_ = kUntracked;
};

class AutodiffError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

template <typename T>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::span<const T>)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> leaf(Tensor<T> value) {
    Var<T> v = Var<T>::constant(std::move(value));
    v.tape_ = this;
    v.id_ = new_node(v.shape(), true);
    return v;
  }

  // Records an op output. Inputs that are untracked contribute nothing.
  Var<T> record(Tensor<T> value, BackwardFn fn) {
    Var<T> v = Var<T>::constant(std::move(value));
    v.tape_ = this;
    v.id_ = new_node(v.shape(), false);
    records_.push_back({v.id_, std::move(fn)});
    return v;
  }

  std::size_t num_records() const { return records_.size(); }

  // Gradient buffer for a node, allocated zero-filled on first use.
  std::vector<T>& grad_buffer(std::size_t id) {
    Node& n = nodes_.at(id);
    if (n.grad.empty()) n.grad.assign(shape_numel(n.shape), T{0});
    return n.grad;
  }

  void backward(const Var<T>& loss) {
    if (loss.tape() != this || !loss.tracked()) {
      throw AutodiffError("backward: loss was not produced on this tape");
    }
    if (loss.numel() != 1) {
      throw AutodiffError("backward: loss must be a scalar, got shape " +
                          shape_str(loss.shape()));
    }
    for (Node& n : nodes_) n.grad.clear();
    grad_buffer(loss.id())[0] = T{1};
    for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
      Node& out = nodes_[it->out];
      if (out.grad.empty()) continue;
      it->fn(*this, std::span<const T>(out.grad));
    }
    for (Node& n : nodes_) {
      if (n.is_leaf) grad_buffer(n.id);
    }
  }

  std::span<const T> grad(const Var<T>& v) {
    if (v.tape() != this || !v.tracked()) {
      throw AutodiffError("grad: variable is not tracked on this tape");
    }
    return grad_buffer(v.id());
  }

  Tensor<T> grad_tensor(const Var<T>& v) {
    auto g = grad(v);
    return Tensor<T>(v.shape(), std::vector<T>(g.begin(), g.end()));
  }

 private:
  struct Node {
    std::size_t id;
    Shape shape;
    bool is_leaf;
    std::vector<T> grad;
  };
  struct Record {
    std::size_t out;
    BackwardFn fn;
  };

  std::size_t new_node(const Shape& shape, bool leaf) {
    nodes_.push_back(Node{nodes_.size(), shape, leaf, {}});
    return nodes_.size() - 1;
  }

  std::deque<Node> nodes_;
  std::vector<Record> records_;
};

namespace detail {

template <typename T>
Tape<T>* common_tape(std::initializer_list<const Var<T>*> vars) {
  Tape<T>* tape = nullptr;
  for (const Var<T>* v : vars) {
    if (!v->tracked()) continue;
    if (tape && v->tape() != tape) {
      throw AutodiffError("op inputs belong to different tapes");
    }
    tape = v->tape();
  }
  return tape;
}

template <typename T>
std::vector<T>* grad_of(Tape<T>& tape, const Var<T>& v) {
  return v.tracked() ? &tape.grad_buffer(v.id()) : nullptr;
}

}  // namespace detail

// ------------------------------------------------------------ elementwise

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a.shape(), b.shape(), "add");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] + b.value()[i];
  Tape<T>* tape = detail::common_tape<T>({&a, &b});
  if (!tape) return Var<T>::constant(std::move(out));
  return tape->record(std::move(out), [a, b](Tape<T>& t, std::span<const T> g) {
    for (const Var<T>* v : {&a, &b}) {
      if (auto* d = detail::grad_of(t, *v)) {
        for (std::size_t i = 0; i < g.size(); ++i) (*d)[i] += g[i];
      }
    }
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a.shape(), b.shape(), "sub");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] - b.value()[i];
  Tape<T>* tape = detail::common_tape<T>({&a, &b});
  if (!tape) return Var<T>::constant(std::move(out));
  return tape->record(std::move(out), [a, b](Tape<T>& t, std::span<const T> g) {
    if (auto* d = detail::grad_of(t, a)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*d)[i] += g[i];
    }
    if (auto* d = detail::grad_of(t, b)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*d)[i] -= g[i];
    }
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a.shape(), b.shape(), "mul");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] * b.value()[i];
  Tape<T>* tape = detail::common_tape<T>({&a, &b});
  if (!tape) return Var<T>::constant(std::move(out));
  return tape->record(std::move(out), [a, b](Tape<T>& t, std::span<const T> g) {
    if (auto* d = detail::grad_of(t, a)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*d)[i] += g[i] * b.value()[i];
    }
    if (auto* d = detail::grad_of(t, b)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*d)[i] += g[i] * a.value()[i];
    }
  });
}

template <typename T>
Var<T> scale(const Var<T>& a, T s) {
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] * s;
  Tape<T>* tape = detail::common_tape<T>({&a});
  if (!tape) return Var<T>::constant(std::move(out));
  return tape->record(std::move(out), [a, s](Tape<T>& t, std::span<const T> g) {
    auto& d = t.grad_buffer(a.id());
    for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * s;
  });
}

template <typename T>
Var<T> add_scalar(const Var<T>& a, T s) {
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] + s;
  Tape<T>* tape = detail::common_tape<T>({&a});
  if (!tape) return Var<T>::constant(std::move(out));
  return tape->record(std::move(out), [a](Tape<T>& t, std::span<const T> g) {
    auto& d = t.grad_buffer(a.id());
    for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
  });
}

// |x| with subgradient 0 at the origin.
template <typename T>
Var<T> abs(const Var<T>& a) {
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = std::abs(a.value()[i]);
  Tape<T>* tape = detail::common_tape<T>({&a});
  if (!tape) return Var<T>::constant(std::move(out));
  return tape->record(std::move(out), [a](Tape<T>& t, std::span<const T> g) {
    auto& d = t.grad_buffer(a.id());
    for (std::size_t i = 0; i < g.size(); ++i) {
      const T x = a.value()[i];
      d[i] += x > T{0} ? g[i] : (x < T{0} ? -g[i] : T{0});
    }
  });
}

template <typename T>
Var<T> leaky_relu(const Var<T>& a, T slope = static_cast<T>(kernels::kLeakySlope)) {
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) {
    const T x = a.value()[i];
    out[i] = x > T{0} ? x : slope * x;
  }
  Tape<T>* tape = detail::common_tape<T>({&a});
  if (!tape) return Var<T>::constant(std::move(out));
  return tape->record(std::move(out), [a, slope](Tape<T>& t, std::span<const T> g) {
    auto& d = t.grad_buffer(a.id());
    for (std::size_t i = 0; i < g.size(); ++i) {
      d[i] += a.value()[i] > T{0} ? g[i] : slope * g[i];
    }
  });
}

template <typename T>
Var<T> sigmoid(const Var<T>& a) {
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) {
    out[i] = T{1} / (T{1} + std::exp(-a.value()[i]));
  }
  Tape<T>* tape = detail::common_tape<T>({&a});
  if (!tape) return Var<T>::constant(std::move(out));
  auto y = std::make_shared<const Tensor<T>>(out);
  return tape->record(std::move(out), [a, y](Tape<T>& t, std::span<const T> g) {
    auto& d = t.grad_buffer(a.id());
    for (std::size_t i = 0; i < g.size(); ++i) {
      d[i] += g[i] * (*y)[i] * (T{1} - (*y)[i]);
    }
  });
}

template <typename T>
Var<T> reshape(const Var<T>& a, Shape shape) {
  Tensor<T> out = a.value().reshaped(std::move(shape));
  Tape<T>* tape = detail::common_tape<T>({&a});
  if (!tape) return Var<T>::constant(std::move(out));
  return tape->record(std::move(out), [a](Tape<T>& t, std::span<const T> g) {
    auto& d = t.grad_buffer(a.id());
    for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
  });
}

// ------------------------------------------------------------- reductions

template <typename T>
Var<T> sum(const Var<T>& a) {
  const double s = kernels::sum_plane(a.value().data().data(), a.numel());
  Tensor<T> out = Tensor<T>::scalar(static_cast<T>(s));
  Tape<T>* tape = detail::common_tape<T>({&a});
  if (!tape) return Var<T>::constant(std::move(out));
  return tape->record(std::move(out), [a](Tape<T>& t, std::span<const T> g) {
    auto& d = t.grad_buffer(a.id());
    for (auto& v : d) v += g[0];
  });
}

template <typename T>
Var<T> mean(const Var<T>& a) {
  const double n = static_cast<double>(a.numel());
  const double s = kernels::sum_plane(a.value().data().data(), a.numel());
  Tensor<T> out = Tensor<T>::scalar(static_cast<T>(s / n));
  Tape<T>* tape = detail::common_tape<T>({&a});
  if (!tape) return Var<T>::constant(std::move(out));
  return tape->record(std::move(out), [a, n](Tape<T>& t, std::span<const T> g) {
    auto& d = t.grad_buffer(a.id());
    const T gi = static_cast<T>(static_cast<double>(g[0]) / n);
    for (auto& v : d) v += gi;
  });
}

// C x H x W -> C, mean over each channel plane.
template <typename T>
Var<T> channel_mean(const Var<T>& a) {
  require_rank(a.shape(), 3, "channel_mean");
  const std::size_t c = a.shape()[0], n = a.shape()[1] * a.shape()[2];
  Tensor<T> out({c});
  for (std::size_t ch = 0; ch < c; ++ch) {
    out[ch] = static_cast<T>(
        kernels::sum_plane(a.value().data().data() + ch * n, n) /
        static_cast<double>(n));
  }
  Tape<T>* tape = detail::common_tape<T>({&a});
  if (!tape) return Var<T>::constant(std::move(out));
  return tape->record(std::move(out), [a, c, n](Tape<T>& t, std::span<const T> g) {
    auto& d = t.grad_buffer(a.id());
    for (std::size_t ch = 0; ch < c; ++ch) {
      const T gi = static_cast<T>(static_cast<double>(g[ch]) / static_cast<double>(n));
      for (std::size_t i = 0; i < n; ++i) d[ch * n + i] += gi;
    }
  });
}

// Element i of a tensor as a scalar.
template <typename T>
Var<T> pick(const Var<T>& a, std::size_t index) {
  if (index >= a.numel()) throw ShapeError("pick: index out of range");
  Tensor<T> out = Tensor<T>::scalar(a.value()[index]);
  Tape<T>* tape = detail::common_tape<T>({&a});
  if (!tape) return Var<T>::constant(std::move(out));
  return tape->record(std::move(out), [a, index](Tape<T>& t, std::span<const T> g) {
    t.grad_buffer(a.id())[index] += g[0];
  });
}

// Contiguous range [offset, offset + length) of the flattened tensor.
template <typename T>
Var<T> slice(const Var<T>& a, std::size_t offset, std::size_t length) {
  if (offset + length > a.numel()) throw ShapeError("slice: range out of bounds");
  const auto src = a.value().data();
  Tensor<T> out({length}, std::vector<T>(src.begin() + static_cast<long>(offset),
                                         src.begin() + static_cast<long>(offset + length)));
  Tape<T>* tape = detail::common_tape<T>({&a});
  if (!tape) return Var<T>::constant(std::move(out));
  return tape->record(std::move(out), [a, offset](Tape<T>& t, std::span<const T> g) {
    auto& d = t.grad_buffer(a.id());
    for (std::size_t i = 0; i < g.size(); ++i) d[offset + i] += g[i];
  });
}

// Scalar loss computed outside the tape (value and gradient w.r.t. `a` are
// supplied by the caller). Lets an external model drive backpropagation.
template <typename T>
Var<T> external_loss(const Var<T>& a, T value, Tensor<T> grad) {
  require_same_shape(a.shape(), grad.shape(), "external_loss");
  Tensor<T> out = Tensor<T>::scalar(value);
  Tape<T>* tape = detail::common_tape<T>({&a});
  if (!tape) return Var<T>::constant(std::move(out));
  auto gp = std::make_shared<const Tensor<T>>(std::move(grad));
  return tape->record(std::move(out), [a, gp](Tape<T>& t, std::span<const T> g) {
    auto& d = t.grad_buffer(a.id());
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[0] * (*gp)[i];
  });
}

// ------------------------------------------------------------ image layers

template <typename T>
Var<T> conv2d(const Var<T>& input, const Var<T>& weight, const Var<T>& bias,
              std::size_t stride, std::size_t padding) {
  Tensor<T> out = kernels::conv2d_forward(input.value(), weight.value(),
                                          bias.value(), stride, padding);
  Tape<T>* tape = detail::common_tape<T>({&input, &weight, &bias});
  if (!tape) return Var<T>::constant(std::move(out));
  return tape->record(std::move(out), [input, weight, bias, stride, padding](
                                          Tape<T>& t, std::span<const T> g) {
    kernels::conv2d_backward(input.value(), weight.value(), stride, padding, g,
                             detail::grad_of(t, input), detail::grad_of(t, weight),
                             detail::grad_of(t, bias));
  });
}

template <typename T>
Var<T> instance_norm(const Var<T>& input, const Var<T>& gamma,
                     const Var<T>& beta, double eps = 1e-5) {
  Tape<T>* tape = detail::common_tape<T>({&input, &gamma, &beta});
  if (!tape) {
    return Var<T>::constant(kernels::instance_norm_forward(
        input.value(), gamma.value(), beta.value(), eps, nullptr));
  }
  auto saved = std::make_shared<kernels::InstanceNormSaved<T>>();
  Tensor<T> out = kernels::instance_norm_forward(input.value(), gamma.value(),
                                                 beta.value(), eps, saved.get());
  return tape->record(std::move(out), [input, gamma, beta, saved](
                                          Tape<T>& t, std::span<const T> g) {
    kernels::instance_norm_backward(*saved, gamma.value(), g,
                                    detail::grad_of(t, input),
                                    detail::grad_of(t, gamma),
                                    detail::grad_of(t, beta));
  });
}

template <typename T>
Var<T> bilinear_resize(const Var<T>& input, std::size_t out_h, std::size_t out_w) {
  Tensor<T> out = kernels::bilinear_forward(input.value(), out_h, out_w);
  Tape<T>* tape = detail::common_tape<T>({&input});
  if (!tape) return Var<T>::constant(std::move(out));
  return tape->record(std::move(out), [input, out_h, out_w](Tape<T>& t,
                                                           std::span<const T> g) {
    kernels::bilinear_backward(input.shape(), g, out_h, out_w,
                               t.grad_buffer(input.id()));
  });
}

template <typename T>
Var<T> max_pool2d(const Var<T>& input, std::size_t kernel) {
  Tape<T>* tape = detail::common_tape<T>({&input});
  if (!tape) {
    return Var<T>::constant(kernels::max_pool_forward(input.value(), kernel, nullptr));
  }
  auto argmax = std::make_shared<std::vector<std::size_t>>();
  Tensor<T> out = kernels::max_pool_forward(input.value(), kernel, argmax.get());
  return tape->record(std::move(out), [input, argmax](Tape<T>& t,
                                                     std::span<const T> g) {
    auto& d = t.grad_buffer(input.id());
    for (std::size_t i = 0; i < g.size(); ++i) d[(*argmax)[i]] += g[i];
  });
}

template <typename T>
Var<T> adaptive_avg_pool(const Var<T>& input, std::size_t out_h, std::size_t out_w) {
  Tensor<T> out = kernels::adaptive_avg_pool_forward(input.value(), out_h, out_w);
  Tape<T>* tape = detail::common_tape<T>({&input});
  if (!tape) return Var<T>::constant(std::move(out));
  return tape->record(std::move(out), [input, out_h, out_w](Tape<T>& t,
                                                           std::span<const T> g) {
    kernels::adaptive_avg_pool_backward(input.shape(), g, out_h, out_w,
                                        t.grad_buffer(input.id()));
  });
}

// Fully connected layer: y = W x + b, x flattened to length N, W is M x N.
template <typename T>
Var<T> linear(const Var<T>& input, const Var<T>& weight, const Var<T>& bias) {
  require_rank(weight.shape(), 2, "linear weight");
  const std::size_t m = weight.shape()[0], n = weight.shape()[1];
  if (input.numel() != n) {
    throw ShapeError("linear: input of " + std::to_string(input.numel()) +
                     " values, weight expects " + std::to_string(n));
  }
  if (bias.numel() != m) throw ShapeError("linear: bias length mismatch");
  Tensor<T> out({m});
  const T* x = input.value().data().data();
  const T* w = weight.value().data().data();
  for (std::size_t i = 0; i < m; ++i) {
    out[i] = kernels::dot(w + i * n, x, n) + bias.value()[i];
  }
  Tape<T>* tape = detail::common_tape<T>({&input, &weight, &bias});
  if (!tape) return Var<T>::constant(std::move(out));
  return tape->record(std::move(out), [input, weight, bias, m, n](
                                          Tape<T>& t, std::span<const T> g) {
    const T* x = input.value().data().data();
    const T* w = weight.value().data().data();
    if (auto* d = detail::grad_of(t, weight)) {
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) (*d)[i * n + j] += g[i] * x[j];
      }
    }
    if (auto* d = detail::grad_of(t, input)) {
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) (*d)[j] += g[i] * w[i * n + j];
      }
    }
    if (auto* d = detail::grad_of(t, bias)) {
      for (std::size_t i = 0; i < m; ++i) (*d)[i] += g[i];
    }
  });
}

// y[c] = gains[c] * x[c] for a C x H x W image (diagonal colour matrix).
template <typename T>
Var<T> scale_channels(const Var<T>& image, const Var<T>& gains) {
  require_rank(image.shape(), 3, "scale_channels image");
  const std::size_t c = image.shape()[0], n = image.shape()[1] * image.shape()[2];
  if (gains.numel() != c) throw ShapeError("scale_channels: need one gain per channel");
  Tensor<T> out(image.shape());
  for (std::size_t ch = 0; ch < c; ++ch) {
    const T gch = gains.value()[ch];
    for (std::size_t i = 0; i < n; ++i) out[ch * n + i] = gch * image.value()[ch * n + i];
  }
  Tape<T>* tape = detail::common_tape<T>({&image, &gains});
  if (!tape) return Var<T>::constant(std::move(out));
  return tape->record(std::move(out), [image, gains, c, n](Tape<T>& t,
                                                          std::span<const T> g) {
    if (auto* d = detail::grad_of(t, image)) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        const T gch = gains.value()[ch];
        for (std::size_t i = 0; i < n; ++i) (*d)[ch * n + i] += g[ch * n + i] * gch;
      }
    }
    if (auto* d = detail::grad_of(t, gains)) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
          s += static_cast<double>(g[ch * n + i]) *
               static_cast<double>(image.value()[ch * n + i]);
        }
        (*d)[ch] += static_cast<T>(s);
      }
    }
  });
}

// y = M x per pixel for a 3 x H x W image; M has 9 entries, row-major.
template <typename T>
Var<T> mix_channels(const Var<T>& image, const Var<T>& matrix) {
  require_rank(image.shape(), 3, "mix_channels image");
  if (image.shape()[0] != 3) throw ShapeError("mix_channels: image must have 3 channels");
  if (matrix.numel() != 9) throw ShapeError("mix_channels: matrix must have 9 entries");
  const std::size_t n = image.shape()[1] * image.shape()[2];
  const T* m = matrix.value().data().data();
  const T* x = image.value().data().data();
  Tensor<T> out(image.shape());
  for (std::size_t r = 0; r < 3; ++r) {
    T* y = out.data().data() + r * n;
    for (std::size_t i = 0; i < n; ++i) {
      y[i] = m[r * 3] * x[i] + m[r * 3 + 1] * x[n + i] + m[r * 3 + 2] * x[2 * n + i];
    }
  }
  Tape<T>* tape = detail::common_tape<T>({&image, &matrix});
  if (!tape) return Var<T>::constant(std::move(out));
  return tape->record(std::move(out), [image, matrix, n](Tape<T>& t,
                                                        std::span<const T> g) {
    const T* m = matrix.value().data().data();
    const T* x = image.value().data().data();
    if (auto* d = detail::grad_of(t, image)) {
      for (std::size_t j = 0; j < 3; ++j) {
        for (std::size_t i = 0; i < n; ++i) {
          (*d)[j * n + i] +=
              m[j] * g[i] + m[3 + j] * g[n + i] + m[6 + j] * g[2 * n + i];
        }
      }
    }
    if (auto* d = detail::grad_of(t, matrix)) {
      for (std::size_t r = 0; r < 3; ++r) {
        for (std::size_t j = 0; j < 3; ++j) {
          double s = 0.0;
          for (std::size_t i = 0; i < n; ++i) {
            s += static_cast<double>(g[r * n + i]) * static_cast<double>(x[j * n + i]);
          }
          (*d)[r * 3 + j] += static_cast<T>(s);
        }
      }
    }
  });
}

}  // namespace genisp
