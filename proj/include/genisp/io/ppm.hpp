#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "genisp/io/graw.hpp"
#include "genisp/tensor.hpp"

namespace genisp::io {

// Binary PPM (P6). Values are clamped to [0,1], scaled to maxval and rounded
// half away from zero. 16-bit samples are big-endian, as P6 requires.
template <typename T>
std::vector<std::uint8_t> encode_ppm(const Tensor<T>& image, int bit_depth = 8) {
  require_rank(image.shape(), 3, "encode_ppm");
  if (image.dim(0) != 3) throw ShapeError("encode_ppm: expected 3 channels");
  if (bit_depth != 8 && bit_depth != 16) {
    throw std::invalid_argument("encode_ppm: bit depth must be 8 or 16");
  }
  const std::size_t h = image.dim(1), w = image.dim(2);
  const unsigned maxval = bit_depth == 8 ? 255u : 65535u;
  const std::string header =
      "P6\n" + std::to_string(w) + " " + std::to_string(h) + "\n" + std::to_string(maxval) + "\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.reserve(out.size() + h * w * 3 * (bit_depth / 8));
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t c = 0; c < 3; ++c) {
        double v = static_cast<double>(image.at(c, y, x));
        v = v > 0.0 ? std::min(v, 1.0) : 0.0;
        const auto q = static_cast<unsigned>(std::round(v * maxval));
        if (bit_depth == 16) out.push_back(static_cast<std::uint8_t>(q >> 8));
        out.push_back(static_cast<std::uint8_t>(q & 0xff));
      }
    }
  }
  return out;
}

template <typename T>
void export_image(const Tensor<T>& image, const std::string& path, int bit_depth = 8) {
  write_file(path, encode_ppm(image, bit_depth));
}

}  // namespace genisp::io
