#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <string>

#include "genisp/color_modules.hpp"
#include "genisp/enhancement_net.hpp"

namespace genisp {

struct StageToggles {
  bool use_convwb = true;
  bool use_convcc = true;
};

template <typename T>
struct IspOutput {
  Var<T> enhanced;
  std::optional<Var<T>> wb_gains;   // 3 values when ConvWB ran
  std::optional<Var<T>> cc_matrix;  // 9 values when ConvCC ran
  Var<T> color_corrected;           // input to the enhancement net
};

// ConvWB -> ConvCC -> enhancement net, operating on a 3-channel linear image.
template <typename T>
class GenIspModel {
 public:
  GenIspModel() : convwb_(make_convwb<T>()), convcc_(make_convcc<T>()) {}

  explicit GenIspModel(std::uint64_t seed) : GenIspModel() { init(seed); }

  void init(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    convwb_.init(rng, {T{1}, T{1}, T{1}});
    convcc_.init(rng, {T{1}, T{0}, T{0}, T{0}, T{1}, T{0}, T{0}, T{0}, T{1}});
    enhance_.init(rng);
  }

  ParamNet<T>& convwb() { return convwb_; }
  ParamNet<T>& convcc() { return convcc_; }
  EnhanceNet<T>& enhance() { return enhance_; }

  // Every trainable tensor, in a fixed order: convwb, convcc, enhance.
  ParamRefs<T> parameters() {
    ParamRefs<T> out = convwb_.parameters("convwb");
    for (auto& p : convcc_.parameters("convcc")) out.push_back(p);
    for (auto& p : enhance_.parameters("enhance")) out.push_back(p);
    return out;
  }

  std::size_t num_parameters() {
    std::size_t n = 0;
    for (const auto& [name, t] : parameters()) n += t->numel();
    return n;
  }

  // `bound` holds Vars for parameters(), as produced by bind_params.
  static IspOutput<T> forward(const Var<T>& image, std::span<const Var<T>> bound,
                              const StageToggles& toggles) {
    constexpr std::size_t nwb = ParamNet<T>::kNumParams;
    IspOutput<T> out;
    Var<T> x = image;
    if (toggles.use_convwb) {
      Var<T> gains = ParamNet<T>::forward(x, bound.subspan(0, nwb));
      x = scale_channels(x, gains);
      out.wb_gains = gains;
    }
    if (toggles.use_convcc) {
      Var<T> m = ParamNet<T>::forward(x, bound.subspan(nwb, nwb));
      x = mix_channels(x, m);
      out.cc_matrix = m;
    }
    out.color_corrected = x;
    out.enhanced = EnhanceNet<T>::forward(x, bound.subspan(2 * nwb));
    return out;
  }

  // Untracked inference.
  Tensor<T> run(const Tensor<T>& image, const StageToggles& toggles = {}) {
    auto bound = bind_params<T>(parameters(), nullptr);
    return forward(Var<T>::constant(image), bound, toggles).enhanced.value();
  }

  template <typename U>
  GenIspModel<U> cast() {
    GenIspModel<U> other;
    auto src = parameters();
    auto dst = other.parameters();
    for (std::size_t i = 0; i < src.size(); ++i) *dst[i].second = src[i].second->template cast<U>();
    return other;
  }

 private:
  ParamNet<T> convwb_;
  ParamNet<T> convcc_;
  EnhanceNet<T> enhance_;
};

}  // namespace genisp
