#pragma once

// Forward and backward kernels for the differentiable ops. All loops run in a
// fixed order so that results are reproducible bit for bit; reductions over
// image planes accumulate in double.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <type_traits>
#include <vector>

#include "genisp/tensor.hpp"

namespace genisp::kernels {

inline constexpr double kLeakySlope = 0.01;

// Dot product with a fixed 8-lane split, reduced in a fixed order.
template <typename T>
T dot(const T* a, const T* b, std::size_t n) {
  T acc[8] = {};
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    for (std::size_t j = 0; j < 8; ++j) acc[j] += a[i + j] * b[i + j];
  }
  for (std::size_t j = 0; i < n; ++i, ++j) acc[j] += a[i] * b[i];
  return ((acc[0] + acc[1]) + (acc[2] + acc[3])) +
         ((acc[4] + acc[5]) + (acc[6] + acc[7]));
}

template <typename T>
double sum_plane(const T* a, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += static_cast<double>(a[i]);
  return s;
}

// ---------------------------------------------------------------- conv2d

struct ConvGeometry {
  std::size_t c_in, h, w, c_out, k, stride, pad, h_out, w_out;

  // Output columns whose input column ix = ox*stride + kx - pad is in range.
  void col_range(std::size_t kx, std::size_t& lo, std::size_t& hi) const {
    const long s = static_cast<long>(stride);
    const long off = static_cast<long>(kx) - static_cast<long>(pad);
    long first = off >= 0 ? 0 : (-off + s - 1) / s;
    long last = (static_cast<long>(w) - 1 - off);
    last = last < 0 ? -1 : last / s;
    last = std::min(last, static_cast<long>(w_out) - 1);
    if (first > last) {
      lo = hi = 0;
      return;
    }
    lo = static_cast<std::size_t>(first);
    hi = static_cast<std::size_t>(last) + 1;
  }
};

inline ConvGeometry conv_geometry(const Shape& in, const Shape& weight,
                                  std::size_t stride, std::size_t pad) {
  require_rank(in, 3, "conv2d input");
  require_rank(weight, 4, "conv2d weight");
  if (stride == 0) throw ShapeError("conv2d: stride must be positive");
  if (weight[1] != in[0]) {
    throw ShapeError("conv2d: input has " + std::to_string(in[0]) +
                     " channels but weight expects " +
                     std::to_string(weight[1]) + " (weight shape " +
                     shape_str(weight) + ")");
  }
  if (weight[2] != weight[3]) {
    throw ShapeError("conv2d: kernel must be square, got " + shape_str(weight));
  }
  const std::size_t k = weight[2];
  if (k > in[1] + 2 * pad || k > in[2] + 2 * pad) {
    throw ShapeError("conv2d: kernel " + std::to_string(k) +
                     " larger than padded input " + shape_str(in));
  }
  ConvGeometry g{in[0], in[1], in[2], weight[0], k, stride, pad, 0, 0};
  g.h_out = (in[1] + 2 * pad - k) / stride + 1;
  g.w_out = (in[2] + 2 * pad - k) / stride + 1;
  return g;
}

template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& in, const Tensor<T>& weight,
                         const Tensor<T>& bias, std::size_t stride,
                         std::size_t pad) {
  const ConvGeometry g = conv_geometry(in.shape(), weight.shape(), stride, pad);
  if (bias.numel() != g.c_out) {
    throw ShapeError("conv2d: bias length " + std::to_string(bias.numel()) +
                     " != output channels " + std::to_string(g.c_out));
  }
  Tensor<T> out({g.c_out, g.h_out, g.w_out});
  const T* x = in.data().data();
  const T* wt = weight.data().data();
  T* y = out.data().data();
  for (std::size_t oc = 0; oc < g.c_out; ++oc) {
    for (std::size_t oy = 0; oy < g.h_out; ++oy) {
      T* yrow = y + (oc * g.h_out + oy) * g.w_out;
      std::fill(yrow, yrow + g.w_out, bias[oc]);
      for (std::size_t ic = 0; ic < g.c_in; ++ic) {
        for (std::size_t ky = 0; ky < g.k; ++ky) {
          const long iy = static_cast<long>(oy * g.stride + ky) -
                          static_cast<long>(g.pad);
          if (iy < 0 || iy >= static_cast<long>(g.h)) continue;
          const T* xrow = x + (ic * g.h + static_cast<std::size_t>(iy)) * g.w;
          const T* wrow = wt + ((oc * g.c_in + ic) * g.k + ky) * g.k;
          for (std::size_t kx = 0; kx < g.k; ++kx) {
            std::size_t lo, hi;
            g.col_range(kx, lo, hi);
            const T wv = wrow[kx];
            const long off = static_cast<long>(kx) - static_cast<long>(g.pad);
            if (g.stride == 1) {
              const T* src = xrow + (static_cast<long>(lo) + off);
              T* dst = yrow + lo;
              for (std::size_t i = 0; i < hi - lo; ++i) dst[i] += wv * src[i];
            } else {
              for (std::size_t ox = lo; ox < hi; ++ox) {
                yrow[ox] += wv * xrow[static_cast<long>(ox * g.stride) + off];
              }
            }
          }
        }
      }
    }
  }
  return out;
}

// Accumulates into grad_in / grad_w / grad_b (any may be empty to skip).
template <typename T>
void conv2d_backward(const Tensor<T>& in, const Tensor<T>& weight,
                     std::size_t stride, std::size_t pad,
                     std::span<const T> grad_out, std::vector<T>* grad_in,
                     std::vector<T>* grad_w, std::vector<T>* grad_b) {
  const ConvGeometry g = conv_geometry(in.shape(), weight.shape(), stride, pad);
  const T* x = in.data().data();
  const T* wt = weight.data().data();
  const T* dy = grad_out.data();
  const std::size_t plane = g.h_out * g.w_out;
  if (grad_b) {
    for (std::size_t oc = 0; oc < g.c_out; ++oc) {
      (*grad_b)[oc] += static_cast<T>(sum_plane(dy + oc * plane, plane));
    }
  }
  std::vector<T> gather(g.w_out);
  for (std::size_t oc = 0; oc < g.c_out; ++oc) {
    for (std::size_t oy = 0; oy < g.h_out; ++oy) {
      const T* dyrow = dy + (oc * g.h_out + oy) * g.w_out;
      for (std::size_t ic = 0; ic < g.c_in; ++ic) {
        for (std::size_t ky = 0; ky < g.k; ++ky) {
          const long iy = static_cast<long>(oy * g.stride + ky) -
                          static_cast<long>(g.pad);
          if (iy < 0 || iy >= static_cast<long>(g.h)) continue;
          const std::size_t row_off =
              (ic * g.h + static_cast<std::size_t>(iy)) * g.w;
          const std::size_t w_off = ((oc * g.c_in + ic) * g.k + ky) * g.k;
          for (std::size_t kx = 0; kx < g.k; ++kx) {
            std::size_t lo, hi;
            g.col_range(kx, lo, hi);
            if (lo >= hi) continue;
            const long off = static_cast<long>(kx) - static_cast<long>(g.pad);
            if (g.stride == 1) {
              if (grad_w) {
                (*grad_w)[w_off + kx] +=
                    dot(dyrow + lo, x + row_off + (static_cast<long>(lo) + off),
                        hi - lo);
              }
              if (grad_in) {
                const T wv = wt[w_off + kx];
                T* dst = grad_in->data() + row_off + (static_cast<long>(lo) + off);
                const T* src = dyrow + lo;
                for (std::size_t i = 0; i < hi - lo; ++i) dst[i] += wv * src[i];
              }
            } else {
              if (grad_w) {
                for (std::size_t ox = lo; ox < hi; ++ox) {
                  gather[ox - lo] =
                      x[row_off + static_cast<long>(ox * g.stride) + off];
                }
                (*grad_w)[w_off + kx] += dot(dyrow + lo, gather.data(), hi - lo);
              }
              if (grad_in) {
                const T wv = wt[w_off + kx];
                T* dst = grad_in->data() + row_off;
                for (std::size_t ox = lo; ox < hi; ++ox) {
                  dst[static_cast<long>(ox * g.stride) + off] += wv * dyrow[ox];
                }
              }
            }
          }
        }
      }
    }
  }
}

// ---------------------------------------------------------- instance norm

template <typename T>
struct InstanceNormSaved {
  Tensor<T> normalized;        // x_hat
  std::vector<double> inv_std;  // per channel
};

template <typename T>
Tensor<T> instance_norm_forward(const Tensor<T>& in, const Tensor<T>& gamma,
                                const Tensor<T>& beta, double eps,
                                std::type_identity_t<InstanceNormSaved<T>>* saved) {
  require_rank(in.shape(), 3, "instance_norm input");
  const std::size_t c = in.dim(0), n = in.dim(1) * in.dim(2);
  if (n == 0) throw ShapeError("instance_norm: empty spatial extent");
  if (gamma.numel() != c || beta.numel() != c) {
    throw ShapeError("instance_norm: gamma/beta length must equal channels");
  }
  if (!(eps > 0.0)) throw std::invalid_argument("instance_norm: eps must be > 0");
  Tensor<T> out(in.shape());
  Tensor<T> xhat(in.shape());
  std::vector<double> inv_std(c);
  for (std::size_t ch = 0; ch < c; ++ch) {
    const T* x = in.data().data() + ch * n;
    const double mean = sum_plane(x, n) / static_cast<double>(n);
    double var = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double d = static_cast<double>(x[i]) - mean;
      var += d * d;
    }
    var /= static_cast<double>(n);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[ch] = is;
    T* xh = xhat.data().data() + ch * n;
    T* y = out.data().data() + ch * n;
    for (std::size_t i = 0; i < n; ++i) {
      xh[i] = static_cast<T>((static_cast<double>(x[i]) - mean) * is);
      y[i] = gamma[ch] * xh[i] + beta[ch];
    }
  }
  if (saved) {
    saved->normalized = std::move(xhat);
    saved->inv_std = std::move(inv_std);
  }
  return out;
}

template <typename T>
void instance_norm_backward(const InstanceNormSaved<T>& saved,
                            const Tensor<T>& gamma, std::span<const T> grad_out,
                            std::vector<T>* grad_in, std::vector<T>* grad_gamma,
                            std::vector<T>* grad_beta) {
  const Shape& s = saved.normalized.shape();
  const std::size_t c = s[0], n = s[1] * s[2];
  for (std::size_t ch = 0; ch < c; ++ch) {
    const T* xh = saved.normalized.data().data() + ch * n;
    const T* dy = grad_out.data() + ch * n;
    double sum_dy = 0.0, sum_dy_xh = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      sum_dy += static_cast<double>(dy[i]);
      sum_dy_xh += static_cast<double>(dy[i]) * static_cast<double>(xh[i]);
    }
    if (grad_gamma) (*grad_gamma)[ch] += static_cast<T>(sum_dy_xh);
    if (grad_beta) (*grad_beta)[ch] += static_cast<T>(sum_dy);
    if (grad_in) {
      const double g = static_cast<double>(gamma[ch]);
      const double scale = g * saved.inv_std[ch] / static_cast<double>(n);
      T* dx = grad_in->data() + ch * n;
      for (std::size_t i = 0; i < n; ++i) {
        dx[i] += static_cast<T>(
            scale * (static_cast<double>(n) * static_cast<double>(dy[i]) -
                     sum_dy - static_cast<double>(xh[i]) * sum_dy_xh));
      }
    }
  }
}

// --------------------------------------------------------------- resizing

// Half-pixel-center sampling table along one axis.
struct ResizeAxis {
  std::vector<std::size_t> i0, i1;
  std::vector<double> t;
};

inline ResizeAxis resize_axis(std::size_t in, std::size_t out) {
  ResizeAxis a;
  a.i0.resize(out);
  a.i1.resize(out);
  a.t.resize(out);
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t d = 0; d < out; ++d) {
    double src = (static_cast<double>(d) + 0.5) * scale - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(in - 1));
    const auto lo = static_cast<std::size_t>(std::floor(src));
    a.i0[d] = lo;
    a.i1[d] = std::min(lo + 1, in - 1);
    a.t[d] = src - static_cast<double>(lo);
  }
  return a;
}

template <typename T>
Tensor<T> bilinear_forward(const Tensor<T>& in, std::size_t out_h,
                           std::size_t out_w) {
  require_rank(in.shape(), 3, "bilinear_resize input");
  if (out_h == 0 || out_w == 0) {
    throw ShapeError("bilinear_resize: output dimensions must be positive");
  }
  const std::size_t c = in.dim(0), h = in.dim(1), w = in.dim(2);
  if (h == 0 || w == 0) throw ShapeError("bilinear_resize: empty input");
  const ResizeAxis ay = resize_axis(h, out_h), ax = resize_axis(w, out_w);
  Tensor<T> out({c, out_h, out_w});
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t y = 0; y < out_h; ++y) {
      const T ty = static_cast<T>(ay.t[y]);
      for (std::size_t x = 0; x < out_w; ++x) {
        const T tx = static_cast<T>(ax.t[x]);
        const T top = std::lerp(in.at(ch, ay.i0[y], ax.i0[x]),
                                in.at(ch, ay.i0[y], ax.i1[x]), tx);
        const T bot = std::lerp(in.at(ch, ay.i1[y], ax.i0[x]),
                                in.at(ch, ay.i1[y], ax.i1[x]), tx);
        out.at(ch, y, x) = std::lerp(top, bot, ty);
      }
    }
  }
  return out;
}

template <typename T>
void bilinear_backward(const Shape& in_shape, std::span<const T> grad_out,
                       std::size_t out_h, std::size_t out_w,
                       std::vector<T>& grad_in) {
  const std::size_t c = in_shape[0], h = in_shape[1], w = in_shape[2];
  const ResizeAxis ay = resize_axis(h, out_h), ax = resize_axis(w, out_w);
  for (std::size_t ch = 0; ch < c; ++ch) {
    T* g = grad_in.data() + ch * h * w;
    for (std::size_t y = 0; y < out_h; ++y) {
      const T ty = static_cast<T>(ay.t[y]);
      for (std::size_t x = 0; x < out_w; ++x) {
        const T tx = static_cast<T>(ax.t[x]);
        const T d = grad_out[(ch * out_h + y) * out_w + x];
        const T top = d * (T{1} - ty), bot = d * ty;
        g[ay.i0[y] * w + ax.i0[x]] += top * (T{1} - tx);
        g[ay.i0[y] * w + ax.i1[x]] += top * tx;
        g[ay.i1[y] * w + ax.i0[x]] += bot * (T{1} - tx);
        g[ay.i1[y] * w + ax.i1[x]] += bot * tx;
      }
    }
  }
}

// ---------------------------------------------------------------- pooling

template <typename T>
Tensor<T> max_pool_forward(const Tensor<T>& in, std::size_t k,
                           std::vector<std::size_t>* argmax) {
  require_rank(in.shape(), 3, "max_pool2d input");
  if (k == 0) throw ShapeError("max_pool2d: kernel must be positive");
  const std::size_t c = in.dim(0), h = in.dim(1), w = in.dim(2);
  const std::size_t oh = h / k, ow = w / k;
  if (oh == 0 || ow == 0) {
    throw ShapeError("max_pool2d: input " + shape_str(in.shape()) +
                     " smaller than kernel " + std::to_string(k));
  }
  Tensor<T> out({c, oh, ow});
  if (argmax) argmax->assign(out.numel(), 0);
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t y = 0; y < oh; ++y) {
      for (std::size_t x = 0; x < ow; ++x) {
        std::size_t best = (ch * h + y * k) * w + x * k;
        for (std::size_t dy = 0; dy < k; ++dy) {
          for (std::size_t dx = 0; dx < k; ++dx) {
            const std::size_t idx = (ch * h + y * k + dy) * w + x * k + dx;
            if (in[idx] > in[best]) best = idx;
          }
        }
        const std::size_t o = (ch * oh + y) * ow + x;
        out[o] = in[best];
        if (argmax) (*argmax)[o] = best;
      }
    }
  }
  return out;
}

inline std::size_t adaptive_start(std::size_t i, std::size_t in,
                                  std::size_t out) {
  return (i * in) / out;
}
inline std::size_t adaptive_end(std::size_t i, std::size_t in,
                                std::size_t out) {
  return ((i + 1) * in + out - 1) / out;
}

template <typename T>
Tensor<T> adaptive_avg_pool_forward(const Tensor<T>& in, std::size_t oh,
                                    std::size_t ow) {
  require_rank(in.shape(), 3, "adaptive_avg_pool input");
  const std::size_t c = in.dim(0), h = in.dim(1), w = in.dim(2);
  if (oh == 0 || ow == 0 || h == 0 || w == 0) {
    throw ShapeError("adaptive_avg_pool: empty input or output");
  }
  Tensor<T> out({c, oh, ow});
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t y = 0; y < oh; ++y) {
      const std::size_t y0 = adaptive_start(y, h, oh), y1 = adaptive_end(y, h, oh);
      for (std::size_t x = 0; x < ow; ++x) {
        const std::size_t x0 = adaptive_start(x, w, ow),
                          x1 = adaptive_end(x, w, ow);
        double s = 0.0;
        for (std::size_t yy = y0; yy < y1; ++yy) {
          for (std::size_t xx = x0; xx < x1; ++xx) s += in.at(ch, yy, xx);
        }
        out.at(ch, y, x) =
            static_cast<T>(s / static_cast<double>((y1 - y0) * (x1 - x0)));
      }
    }
  }
  return out;
}

template <typename T>
void adaptive_avg_pool_backward(const Shape& in_shape, std::span<const T> gout,
                                std::size_t oh, std::size_t ow,
                                std::vector<T>& grad_in) {
  const std::size_t c = in_shape[0], h = in_shape[1], w = in_shape[2];
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t y = 0; y < oh; ++y) {
      const std::size_t y0 = adaptive_start(y, h, oh), y1 = adaptive_end(y, h, oh);
      for (std::size_t x = 0; x < ow; ++x) {
        const std::size_t x0 = adaptive_start(x, w, ow),
                          x1 = adaptive_end(x, w, ow);
        const T g = gout[(ch * oh + y) * ow + x] /
                    static_cast<T>((y1 - y0) * (x1 - x0));
        for (std::size_t yy = y0; yy < y1; ++yy) {
          for (std::size_t xx = x0; xx < x1; ++xx) {
            grad_in[(ch * h + yy) * w + xx] += g;
          }
        }
      }
    }
  }
}

}  // namespace genisp::kernels
