#pragma once

// ConvWB and ConvCC: image-to-parameter networks regressing a diagonal
// white-balance matrix (3 gains) and a full 3x3 colour-correction matrix.
// Both share one architecture and differ only in the width of the last MLP
// layer.

#include <array>
#include <cmath>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "genisp/autodiff.hpp"

namespace genisp {

template <typename T>
using ParamRefs = std::vector<std::pair<std::string, Tensor<T>*>>;

// Leaf Vars on `tape` for each parameter, or constants when tape is null.
template <typename T>
std::vector<Var<T>> bind_params(const ParamRefs<T>& params, Tape<T>* tape) {
  std::vector<Var<T>> out;
  out.reserve(params.size());
  for (const auto& [name, t] : params) {
    out.push_back(tape ? tape->leaf(*t) : Var<T>::constant(*t));
  }
  return out;
}

// He-uniform weights for a layer followed by leaky ReLU; zero bias.
template <typename T>
void he_uniform(Tensor<T>& weight, std::size_t fan_in, std::mt19937_64& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (auto& v : weight.storage()) v = static_cast<T>(dist(rng));
}

struct WbGains {
  std::array<double, 3> w{1.0, 1.0, 1.0};
};

struct CcMatrix {
  std::array<double, 9> c{1, 0, 0, 0, 1, 0, 0, 0, 1};

  static CcMatrix identity() { return {}; }
};

template <typename T>
class ParamNet {
 public:
  static constexpr std::size_t kInputSize = 256;
  static constexpr std::size_t kC1 = 16, kC2 = 32, kC3 = 128, kHidden = 32;

  explicit ParamNet(std::size_t head_width = 3)
      : head_width_(head_width),
        conv1_w_({kC1, 3, 7, 7}), conv1_b_({kC1}),
        conv2_w_({kC2, kC1, 5, 5}), conv2_b_({kC2}),
        conv3_w_({kC3, kC2, 3, 3}), conv3_b_({kC3}),
        fc1_w_({kHidden, kC3}), fc1_b_({kHidden}),
        fc2_w_({head_width, kHidden}), fc2_b_({head_width}) {}

  std::size_t head_width() const { return head_width_; }

  // Random feature extractor; zero head weights with `head_bias` so the
  // module regresses exactly `head_bias` for any input.
  void init(std::mt19937_64& rng, const std::vector<T>& head_bias) {
    he_uniform(conv1_w_, 3 * 7 * 7, rng);
    he_uniform(conv2_w_, kC1 * 5 * 5, rng);
    he_uniform(conv3_w_, kC2 * 3 * 3, rng);
    he_uniform(fc1_w_, kC3, rng);
    for (Tensor<T>* b : {&conv1_b_, &conv2_b_, &conv3_b_, &fc1_b_}) {
      b->storage().assign(b->numel(), T{0});
    }
    fc2_w_.storage().assign(fc2_w_.numel(), T{0});
    fc2_b_ = Tensor<T>({head_width_}, head_bias);
  }

  ParamRefs<T> parameters(const std::string& prefix) {
    return {{prefix + ".conv1.weight", &conv1_w_}, {prefix + ".conv1.bias", &conv1_b_},
            {prefix + ".conv2.weight", &conv2_w_}, {prefix + ".conv2.bias", &conv2_b_},
            {prefix + ".conv3.weight", &conv3_w_}, {prefix + ".conv3.bias", &conv3_b_},
            {prefix + ".fc1.weight", &fc1_w_},     {prefix + ".fc1.bias", &fc1_b_},
            {prefix + ".fc2.weight", &fc2_w_},     {prefix + ".fc2.bias", &fc2_b_}};
  }

  static constexpr std::size_t kNumParams = 10;

  // image: 3 x h x w. p: bound parameters in parameters() order.
  static Var<T> forward(const Var<T>& image, std::span<const Var<T>> p) {
    require_rank(image.shape(), 3, "ParamNet input");
    if (image.shape()[0] != 3) throw ShapeError("ParamNet: expected 3-channel image");
    Var<T> x = bilinear_resize(image, kInputSize, kInputSize);
    x = leaky_relu(conv2d(x, p[0], p[1], 2, 3));
    x = max_pool2d(x, 2);
    x = leaky_relu(conv2d(x, p[2], p[3], 2, 2));
    x = max_pool2d(x, 2);
    x = leaky_relu(conv2d(x, p[4], p[5], 2, 1));
    x = adaptive_avg_pool(x, 1, 1);
    x = leaky_relu(linear(x, p[6], p[7]));
    return linear(x, p[8], p[9]);
  }

  // Untracked forward with this module's current weights.
  std::vector<T> regress(const Tensor<T>& image) {
    auto bound = bind_params<T>(parameters(""), nullptr);
    const Var<T> out = forward(Var<T>::constant(image), bound);
    return {out.value().data().begin(), out.value().data().end()};
  }

 private:
  std::size_t head_width_;
  Tensor<T> conv1_w_, conv1_b_, conv2_w_, conv2_b_, conv3_w_, conv3_b_;
  Tensor<T> fc1_w_, fc1_b_, fc2_w_, fc2_b_;
};

template <typename T>
ParamNet<T> make_convwb() {
  return ParamNet<T>(3);
}

template <typename T>
ParamNet<T> make_convcc() {
  return ParamNet<T>(9);
}

template <typename T>
WbGains convwb_forward(const Tensor<T>& image, ParamNet<T>& weights) {
  const auto v = weights.regress(image);
  return {{static_cast<double>(v[0]), static_cast<double>(v[1]), static_cast<double>(v[2])}};
}

template <typename T>
CcMatrix convcc_forward(const Tensor<T>& image, ParamNet<T>& weights) {
  const auto v = weights.regress(image);
  CcMatrix m;
  for (std::size_t i = 0; i < 9; ++i) m.c[i] = static_cast<double>(v[i]);
  return m;
}

template <typename T>
Tensor<T> apply_wb(const Tensor<T>& image, const WbGains& g) {
  Tensor<T> gains({3}, std::vector<T>{static_cast<T>(g.w[0]), static_cast<T>(g.w[1]),
                                      static_cast<T>(g.w[2])});
  return scale_channels(Var<T>::constant(image), Var<T>::constant(std::move(gains))).value();
}

template <typename T>
Tensor<T> apply_cc(const Tensor<T>& image, const CcMatrix& m) {
  std::vector<T> entries(9);
  for (std::size_t i = 0; i < 9; ++i) entries[i] = static_cast<T>(m.c[i]);
  return mix_channels(Var<T>::constant(image),
                      Var<T>::constant(Tensor<T>({3, 3}, std::move(entries))))
      .value();
}

}  // namespace genisp
