#pragma once

#include <random>
#include <string>

#include "genisp/color_modules.hpp"

namespace genisp {

// Shallow residual ConvNet: out = x + f(x). InstanceNorm after the first two
// convolutions removes global brightness and contrast from the features.
template <typename T>
class EnhanceNet {
 public:
  static constexpr std::size_t kC1 = 16, kC2 = 32, kC3 = 16;
  static constexpr std::size_t kNumParams = 12;
  static constexpr double kNormEps = 1e-5;

  EnhanceNet()
      : conv1_w_({kC1, 3, 3, 3}), conv1_b_({kC1}), norm1_g_({kC1}, T{1}), norm1_b_({kC1}),
        conv2_w_({kC2, kC1, 3, 3}), conv2_b_({kC2}), norm2_g_({kC2}, T{1}), norm2_b_({kC2}),
        conv3_w_({kC3, kC2, 3, 3}), conv3_b_({kC3}),
        conv4_w_({3, kC3, 1, 1}), conv4_b_({3}) {}

  // Last conv starts at zero so the net is the identity at initialisation.
  void init(std::mt19937_64& rng) {
    he_uniform(conv1_w_, 3 * 9, rng);
    he_uniform(conv2_w_, kC1 * 9, rng);
    he_uniform(conv3_w_, kC2 * 9, rng);
    for (Tensor<T>* b : {&conv1_b_, &conv2_b_, &conv3_b_, &conv4_b_, &conv4_w_,
                         &norm1_b_, &norm2_b_}) {
      b->storage().assign(b->numel(), T{0});
    }
    norm1_g_.storage().assign(kC1, T{1});
    norm2_g_.storage().assign(kC2, T{1});
  }

  ParamRefs<T> parameters(const std::string& prefix) {
    return {{prefix + ".conv1.weight", &conv1_w_}, {prefix + ".conv1.bias", &conv1_b_},
            {prefix + ".norm1.weight", &norm1_g_}, {prefix + ".norm1.bias", &norm1_b_},
            {prefix + ".conv2.weight", &conv2_w_}, {prefix + ".conv2.bias", &conv2_b_},
            {prefix + ".norm2.weight", &norm2_g_}, {prefix + ".norm2.bias", &norm2_b_},
            {prefix + ".conv3.weight", &conv3_w_}, {prefix + ".conv3.bias", &conv3_b_},
            {prefix + ".conv4.weight", &conv4_w_}, {prefix + ".conv4.bias", &conv4_b_}};
  }

  // Activations after the first InstanceNorm (before the non-linearity).
  static Var<T> first_norm(const Var<T>& image, std::span<const Var<T>> p) {
    return instance_norm(conv2d(image, p[0], p[1], 1, 1), p[2], p[3], kNormEps);
  }

  static Var<T> forward(const Var<T>& image, std::span<const Var<T>> p) {
    require_rank(image.shape(), 3, "EnhanceNet input");
    if (image.shape()[0] != 3) throw ShapeError("EnhanceNet: expected 3-channel image");
    Var<T> x = leaky_relu(first_norm(image, p));
    x = leaky_relu(instance_norm(conv2d(x, p[4], p[5], 1, 1), p[6], p[7], kNormEps));
    x = leaky_relu(conv2d(x, p[8], p[9], 1, 1));
    x = conv2d(x, p[10], p[11], 1, 0);
    return add(image, x);
  }

  Tensor<T> enhance(const Tensor<T>& image) {
    auto bound = bind_params<T>(parameters(""), nullptr);
    return forward(Var<T>::constant(image), bound).value();
  }

 private:
  Tensor<T> conv1_w_, conv1_b_, norm1_g_, norm1_b_;
  Tensor<T> conv2_w_, conv2_b_, norm2_g_, norm2_b_;
  Tensor<T> conv3_w_, conv3_b_, conv4_w_, conv4_b_;
};

template <typename T>
Tensor<T> enhance_forward(const Tensor<T>& image, EnhanceNet<T>& weights) {
  return weights.enhance(image);
}

}  // namespace genisp
