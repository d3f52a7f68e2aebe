#pragma once

// Minimal raw pre-processing: level normalisation, Bayer packing, green
// averaging, colour space transform and the detector resize policy.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "genisp/kernels.hpp"
#include "genisp/tensor.hpp"

namespace genisp {

enum class Cfa { RGGB, BGGR, GRBG, GBRG };

inline std::optional<Cfa> parse_cfa(std::string_view s) {
  if (s == "RGGB") return Cfa::RGGB;
  if (s == "BGGR") return Cfa::BGGR;
  if (s == "GRBG") return Cfa::GRBG;
  if (s == "GBRG") return Cfa::GBRG;
  return std::nullopt;
}

inline std::string_view cfa_name(Cfa cfa) {
  switch (cfa) {
    case Cfa::RGGB: return "RGGB";
    case Cfa::BGGR: return "BGGR";
    case Cfa::GRBG: return "GRBG";
    case Cfa::GBRG: return "GBRG";
  }
  return "????";
}

// Packed channel index (0=R, 1=G1, 2=G2, 3=B) for each site of the 2x2 tile
// in raster order. G1 is the first green in raster order.
inline std::array<std::size_t, 4> cfa_site_channels(Cfa cfa) {
  switch (cfa) {
    case Cfa::RGGB: return {0, 1, 2, 3};
    case Cfa::BGGR: return {3, 1, 2, 0};
    case Cfa::GRBG: return {1, 0, 3, 2};
    case Cfa::GBRG: return {1, 3, 0, 2};
  }
  throw std::invalid_argument("unknown CFA pattern");
}

// 3x3 raw-RGB -> CIE XYZ matrix, row-major, applied to column vectors.
struct CstMatrix {
  std::array<float, 9> m{};

  static CstMatrix identity() { return {{1, 0, 0, 0, 1, 0, 0, 0, 1}}; }

  bool finite() const {
    return std::all_of(m.begin(), m.end(), [](float v) { return std::isfinite(v); });
  }
  friend bool operator==(const CstMatrix&, const CstMatrix&) = default;
};

class FrameError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct BayerFrame {
  std::uint32_t width = 0;
  std::uint32_t height = 0;
  Cfa cfa = Cfa::RGGB;
  std::vector<std::uint16_t> samples;       // height x width, row-major
  std::array<std::uint16_t, 4> black_level{};  // per tile site, raster order
  std::uint16_t white_level = 0;
  std::optional<CstMatrix> cst;

  void set_black_level(std::uint16_t level) { black_level.fill(level); }

  bool uniform_black_level() const {
    return std::all_of(black_level.begin(), black_level.end(),
                       [&](std::uint16_t b) { return b == black_level[0]; });
  }

  std::uint16_t sample(std::size_t y, std::size_t x) const {
    return samples[y * width + x];
  }

  void validate() const {
    if (width == 0 || height == 0 || width % 2 || height % 2) {
      throw FrameError("frame dimensions must be positive and even, got " +
                       std::to_string(width) + "x" + std::to_string(height));
    }
    if (samples.size() != static_cast<std::size_t>(width) * height) {
      throw FrameError("frame sample count does not match dimensions");
    }
    for (std::uint16_t b : black_level) {
      if (white_level <= b) {
        throw FrameError("white level " + std::to_string(white_level) +
                         " must exceed black level " + std::to_string(b));
      }
    }
    if (cst && !cst->finite()) throw FrameError("CST matrix has non-finite entries");
  }

  friend bool operator==(const BayerFrame&, const BayerFrame&) = default;
};

// Mosaic with samples linearised to [0,1].
struct NormalizedFrame {
  std::uint32_t width = 0;
  std::uint32_t height = 0;
  Cfa cfa = Cfa::RGGB;
  std::vector<float> samples;
  std::optional<CstMatrix> cst;
};

inline NormalizedFrame normalize_levels(const BayerFrame& frame) {
  frame.validate();
  NormalizedFrame out{frame.width, frame.height, frame.cfa, {}, frame.cst};
  out.samples.resize(frame.samples.size());
  for (std::size_t y = 0; y < frame.height; ++y) {
    for (std::size_t x = 0; x < frame.width; ++x) {
      const double black = frame.black_level[(y % 2) * 2 + (x % 2)];
      const double range = static_cast<double>(frame.white_level) - black;
      const double v = (static_cast<double>(frame.sample(y, x)) - black) / range;
      out.samples[y * frame.width + x] = static_cast<float>(std::clamp(v, 0.0, 1.0));
    }
  }
  return out;
}

// 2x2 tiles -> 4 x H/2 x W/2 in canonical (R, G1, G2, B) order.
template <typename T = float>
Tensor<T> pack_bayer(const NormalizedFrame& frame) {
  if (frame.width % 2 || frame.height % 2 || frame.width == 0 || frame.height == 0) {
    throw FrameError("pack_bayer: frame dimensions must be positive and even");
  }
  if (frame.samples.size() != static_cast<std::size_t>(frame.width) * frame.height) {
    throw FrameError("pack_bayer: sample count does not match dimensions");
  }
  const auto sites = cfa_site_channels(frame.cfa);
  const std::size_t h = frame.height / 2, w = frame.width / 2;
  Tensor<T> out({4, h, w});
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t s = 0; s < 4; ++s) {
        const std::size_t sy = 2 * y + s / 2, sx = 2 * x + s % 2;
        out.at(sites[s], y, x) =
            static_cast<T>(frame.samples[sy * frame.width + sx]);
      }
    }
  }
  return out;
}

// Inverse of pack_bayer.
template <typename T>
NormalizedFrame unpack_bayer(const Tensor<T>& packed, Cfa cfa) {
  require_rank(packed.shape(), 3, "unpack_bayer");
  if (packed.dim(0) != 4) throw ShapeError("unpack_bayer: expected 4 channels");
  const std::size_t h = packed.dim(1), w = packed.dim(2);
  NormalizedFrame out{static_cast<std::uint32_t>(2 * w),
                      static_cast<std::uint32_t>(2 * h), cfa, {}, std::nullopt};
  out.samples.resize(4 * h * w);
  const auto sites = cfa_site_channels(cfa);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t s = 0; s < 4; ++s) {
        const std::size_t sy = 2 * y + s / 2, sx = 2 * x + s % 2;
        out.samples[sy * 2 * w + sx] = static_cast<float>(packed.at(sites[s], y, x));
      }
    }
  }
  return out;
}

// (R, G1, G2, B) -> (R, (G1+G2)/2, B).
template <typename T>
Tensor<T> average_greens(const Tensor<T>& packed) {
  require_rank(packed.shape(), 3, "average_greens");
  if (packed.dim(0) != 4) {
    throw ShapeError("average_greens: expected 4 packed channels, got " +
                     shape_str(packed.shape()));
  }
  const std::size_t n = packed.dim(1) * packed.dim(2);
  Tensor<T> out({3, packed.dim(1), packed.dim(2)});
  const T* p = packed.data().data();
  T* o = out.data().data();
  for (std::size_t i = 0; i < n; ++i) {
    o[i] = p[i];
    o[n + i] = (p[n + i] + p[2 * n + i]) * T{0.5};
    o[2 * n + i] = p[3 * n + i];
  }
  return out;
}

// Per-pixel left multiplication by the CST matrix. No clamping.
template <typename T>
Tensor<T> apply_cst(const Tensor<T>& image, const CstMatrix& cst) {
  require_rank(image.shape(), 3, "apply_cst");
  if (image.dim(0) != 3) throw ShapeError("apply_cst: expected 3 channels");
  if (cst == CstMatrix::identity()) return image;
  const std::size_t n = image.dim(1) * image.dim(2);
  Tensor<T> out(image.shape());
  const T* x = image.data().data();
  for (std::size_t r = 0; r < 3; ++r) {
    const T m0 = cst.m[r * 3], m1 = cst.m[r * 3 + 1], m2 = cst.m[r * 3 + 2];
    T* y = out.data().data() + r * n;
    for (std::size_t i = 0; i < n; ++i) y[i] = m0 * x[i] + m1 * x[n + i] + m2 * x[2 * n + i];
  }
  return out;
}

struct ResizePolicy {
  std::size_t max_long = 1333;
  std::size_t max_short = 800;
};

// Output (height, width) under the keep-aspect policy; never upscales.
inline std::pair<std::size_t, std::size_t> keep_aspect_size(std::size_t h, std::size_t w,
                                                            const ResizePolicy& p = {}) {
  if (h == 0 || w == 0) throw ShapeError("resize_keep_aspect: empty image");
  const double long_side = static_cast<double>(std::max(h, w));
  const double short_side = static_cast<double>(std::min(h, w));
  const double s = std::min({static_cast<double>(p.max_long) / long_side,
                             static_cast<double>(p.max_short) / short_side, 1.0});
  auto scaled = [s](std::size_t d) {
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(static_cast<double>(d) * s)));
  };
  return {scaled(h), scaled(w)};
}

template <typename T>
Tensor<T> resize_keep_aspect(const Tensor<T>& image, const ResizePolicy& p = {}) {
  require_rank(image.shape(), 3, "resize_keep_aspect");
  const auto [oh, ow] = keep_aspect_size(image.dim(1), image.dim(2), p);
  if (oh == image.dim(1) && ow == image.dim(2)) return image;
  return kernels::bilinear_forward(image, oh, ow);
}

struct PreprocessOptions {
  bool use_cst = true;
  bool resize = true;
  ResizePolicy policy{};
};

// Sensor frame -> 3-channel linear image fed to the neural stages.
template <typename T = float>
Tensor<T> preprocess(const BayerFrame& frame, const PreprocessOptions& opt = {}) {
  Tensor<T> img = average_greens(pack_bayer<T>(normalize_levels(frame)));
  if (opt.use_cst && frame.cst) img = apply_cst(img, *frame.cst);
  if (opt.resize) img = resize_keep_aspect(img, opt.policy);
  return img;
}

}  // namespace genisp
