#include "camid/nn/layers.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>

namespace camid::nn {

std::string shape_string(const Shape& shape) {
  std::string s = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  return s + ")";
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d < 0) throw Error(Errc::ShapeMismatch, "negative extent in " + shape_string(shape));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

namespace {

template <typename T>
using RowMajor = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Output pixels are processed in bands of whole output rows, sized so the
// band's im2col buffer stays cache resident.
constexpr int kBandColumns = 256;

int band_rows(int wo) { return std::max(1, kBandColumns / std::max(1, wo)); }

// col has shape (C*K*K, (y1-y0)*wo) for output rows [y0, y1) of one sample;
// rows ordered (c, ky, kx).
template <typename T>
void im2col_band(const T* sample, int channels, int h, int w, int k, int stride, int pad, int wo,
                 int y0, int y1, T* col) {
  const std::size_t cols = static_cast<std::size_t>(y1 - y0) * wo;
  for (int c = 0; c < channels; ++c) {
    const T* src = sample + static_cast<std::size_t>(c) * h * w;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        T* d = col + (static_cast<std::size_t>(c * k + ky) * k + kx) * cols;
        for (int y = y0; y < y1; ++y, d += wo) {
          const int iy = y * stride - pad + ky;
          if (iy < 0 || iy >= h) {
            std::fill(d, d + wo, T{0});
            continue;
          }
          const T* row = src + static_cast<std::size_t>(iy) * w;
          if (stride == 1) {
            // Valid x satisfy 0 <= x - pad + kx < w.
            const int lo = std::clamp(pad - kx, 0, wo);
            const int hi = std::clamp(w + pad - kx, lo, wo);
            std::fill(d, d + lo, T{0});
            std::copy(row + lo - pad + kx, row + hi - pad + kx, d + lo);
            std::fill(d + hi, d + wo, T{0});
            continue;
          }
          for (int x = 0; x < wo; ++x) {
            const int ix = x * stride - pad + kx;
            d[x] = (ix >= 0 && ix < w) ? row[ix] : T{0};
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_band_add(const T* col, T* sample, int channels, int h, int w, int k, int stride, int pad,
                     int wo, int y0, int y1) {
  const std::size_t cols = static_cast<std::size_t>(y1 - y0) * wo;
  for (int c = 0; c < channels; ++c) {
    T* dst = sample + static_cast<std::size_t>(c) * h * w;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const T* s = col + (static_cast<std::size_t>(c * k + ky) * k + kx) * cols;
        for (int y = y0; y < y1; ++y, s += wo) {
          const int iy = y * stride - pad + ky;
          if (iy < 0 || iy >= h) continue;
          T* row = dst + static_cast<std::size_t>(iy) * w;
          if (stride == 1) {
            const int lo = std::clamp(pad - kx, 0, wo);
            const int hi = std::clamp(w + pad - kx, lo, wo);
            T* r = row - pad + kx;
            for (int x = lo; x < hi; ++x) r[x] += s[x];
            continue;
          }
          for (int x = 0; x < wo; ++x) {
            const int ix = x * stride - pad + kx;
            if (ix >= 0 && ix < w) row[ix] += s[x];
          }
        }
      }
    }
  }
}

template <typename T>
Planes<T> const_planes(const Tensor<T>& t) {
  return planes_of(const_cast<Tensor<T>&>(t));
}

void check_conv_shapes(const Shape& in, const Shape& w, const Shape& b) {
  require_rank(in, 4, "conv2d input");
  require_rank(w, 4, "conv2d weight");
  require_rank(b, 1, "conv2d bias");
  if (w[1] != in[1] || w[2] != w[3] || b[0] != w[0]) {
    throw Error(Errc::ShapeMismatch, "conv2d input " + shape_string(in) + " weight " +
                                         shape_string(w) + " bias " + shape_string(b));
  }
}

// Stride-1 "same" convolutions skip im2col. The input is copied into a
// zero-bordered plane of width wp = w + 2*pad, so tap (ky, kx) of the whole
// band is one strided view at offset (y0 + ky) * wp + kx, and the
// convolution becomes K*K accumulated GEMMs. Outputs are computed on the
// padded width and the wp - w junk columns are discarded.
bool use_shifted(int kernel, int stride, int pad) { return stride == 1 && 2 * pad == kernel - 1; }

template <typename T>
struct PaddedLayout {
  int wp;
  std::size_t plane;  // includes one slack row for the rightmost taps
  int rows;           // output rows per band
};

template <typename T>
PaddedLayout<T> padded_layout(int h, int w, int pad) {
  const int wp = w + 2 * pad;
  const std::size_t plane =
      pad == 0 ? static_cast<std::size_t>(h) * w : static_cast<std::size_t>(h + 2 * pad + 1) * wp;
  return {wp, plane, band_rows(wp)};
}

// Eigen's vectorized reductions peel by pointer alignment, so their summation
// order depends on where the allocator put the buffer. Plain loops keep bias
// gradients bit-reproducible.
template <typename T>
void add_row_sums(const T* data, int rows, Eigen::Index cols, Eigen::Index stride, T* out) {
  for (int r = 0; r < rows; ++r) {
    const T* row = data + r * stride;
    T s{0};
    for (Eigen::Index c = 0; c < cols; ++c) s += row[c];
    out[r] += s;
  }
}

// packed[k] is the (O, C) matrix of tap k = ky * K + kx.
template <typename T>
void pack_taps(const T* weight, int out_channels, int channels, int kernel, AlignedVector<T>& packed) {
  const int taps = kernel * kernel;
  packed.resize(static_cast<std::size_t>(taps) * out_channels * channels);
  for (int o = 0; o < out_channels; ++o) {
    for (int c = 0; c < channels; ++c) {
      for (int k = 0; k < taps; ++k) {
        packed[(static_cast<std::size_t>(k) * out_channels + o) * channels + c] =
            weight[(static_cast<std::size_t>(o) * channels + c) * taps + k];
      }
    }
  }
}

template <typename T>
void copy_padded(const T* sample, int channels, int h, int w, int pad, const PaddedLayout<T>& l,
                 T* dst) {
  for (int c = 0; c < channels; ++c) {
    const T* src = sample + static_cast<std::size_t>(c) * h * w;
    T* d = dst + c * l.plane + static_cast<std::size_t>(pad) * l.wp + pad;
    for (int y = 0; y < h; ++y) std::copy_n(src + static_cast<std::size_t>(y) * w, w, d + y * l.wp);
  }
}

template <typename T>
void shifted_forward(const Planes<T>& in, const T* weight, const T* bias, int out_channels,
                     int kernel, int pad, const Planes<T>& out, Scratch<T>& scratch) {
  using ConstStrided = Eigen::Map<const RowMajor<T>, 0, Eigen::OuterStride<>>;
  const int h = in.height;
  const int w = in.width;
  const int channels = in.channels;
  const auto l = padded_layout<T>(h, w, pad);
  pack_taps(weight, out_channels, channels, kernel, scratch.packed);
  if (pad > 0) scratch.col.assign(static_cast<std::size_t>(channels) * l.plane, T{0});
  scratch.gemm.resize(static_cast<std::size_t>(out_channels) * l.rows * l.wp);
  const std::size_t tap_size = static_cast<std::size_t>(out_channels) * channels;

  for (int n = 0; n < in.batch; ++n) {
    const T* x = in.sample(n);
    if (pad > 0) {
      copy_padded(x, channels, h, w, pad, l, scratch.col.data());
      x = scratch.col.data();
    }
    T* dst = out.sample(n);
    for (int y0 = 0; y0 < h; y0 += l.rows) {
      const int y1 = std::min(h, y0 + l.rows);
      const Eigen::Index cols = static_cast<Eigen::Index>(y1 - y0) * l.wp;
      Eigen::Map<RowMajor<T>> acc(scratch.gemm.data(), out_channels, cols);
      for (int ky = 0; ky < kernel; ++ky) {
        for (int kx = 0; kx < kernel; ++kx) {
          const int k = ky * kernel + kx;
          Eigen::Map<const RowMajor<T>> wk(scratch.packed.data() + k * tap_size, out_channels,
                                           channels);
          ConstStrided xk(x + static_cast<std::size_t>(y0 + ky) * l.wp + kx, channels, cols,
                          Eigen::OuterStride<>(static_cast<Eigen::Index>(l.plane)));
          if (k == 0) {
            acc.noalias() = wk * xk;
          } else {
            acc.noalias() += wk * xk;
          }
        }
      }
      for (int o = 0; o < out_channels; ++o) {
        const T b = bias[o];
        const T* a = scratch.gemm.data() + static_cast<std::size_t>(o) * cols;
        T* d = dst + o * out.plane();
        for (int y = y0; y < y1; ++y) {
          const T* ar = a + static_cast<std::size_t>(y - y0) * l.wp;
          T* dr = d + static_cast<std::size_t>(y) * w;
          for (int xx = 0; xx < w; ++xx) dr[xx] = ar[xx] + b;
        }
      }
    }
  }
}

template <typename T>
void shifted_backward(const Planes<T>& in, const T* weight, int out_channels, int kernel, int pad,
                      const Planes<T>& dout, T* dweight, T* dbias, const Planes<T>& din,
                      Scratch<T>& scratch) {
  using ConstStrided = Eigen::Map<const RowMajor<T>, 0, Eigen::OuterStride<>>;
  using Strided = Eigen::Map<RowMajor<T>, 0, Eigen::OuterStride<>>;
  const int h = in.height;
  const int w = in.width;
  const int channels = in.channels;
  const int taps = kernel * kernel;
  const auto l = padded_layout<T>(h, w, pad);
  const bool want_din = din.base != nullptr;
  const std::size_t tap_size = static_cast<std::size_t>(out_channels) * channels;
  pack_taps(weight, out_channels, channels, kernel, scratch.packed);
  scratch.dpacked.assign(static_cast<std::size_t>(taps) * tap_size, T{0});
  if (pad > 0) scratch.col.assign(static_cast<std::size_t>(channels) * l.plane, T{0});
  if (want_din) scratch.dcol.resize(static_cast<std::size_t>(channels) * l.plane);
  // Junk columns of the gradient band are zeroed so they contribute nothing.
  scratch.gemm.resize(static_cast<std::size_t>(out_channels) * l.rows * l.wp);
  const auto stride = Eigen::OuterStride<>(static_cast<Eigen::Index>(l.plane));

  for (int n = 0; n < in.batch; ++n) {
    const T* x = in.sample(n);
    if (pad > 0) {
      copy_padded(x, channels, h, w, pad, l, scratch.col.data());
      x = scratch.col.data();
    }
    if (want_din) std::fill(scratch.dcol.begin(), scratch.dcol.end(), T{0});
    const T* g_src = dout.sample(n);
    for (int y0 = 0; y0 < h; y0 += l.rows) {
      const int y1 = std::min(h, y0 + l.rows);
      const Eigen::Index cols = static_cast<Eigen::Index>(y1 - y0) * l.wp;
      for (int o = 0; o < out_channels; ++o) {
        T* gr = scratch.gemm.data() + static_cast<std::size_t>(o) * cols;
        const T* sr = g_src + o * dout.plane();
        for (int y = y0; y < y1; ++y) {
          T* row = gr + static_cast<std::size_t>(y - y0) * l.wp;
          std::copy_n(sr + static_cast<std::size_t>(y) * w, w, row);
          std::fill(row + w, row + l.wp, T{0});
        }
      }
      Eigen::Map<const RowMajor<T>> g(scratch.gemm.data(), out_channels, cols);
      add_row_sums(scratch.gemm.data(), out_channels, cols, cols, dbias);
      for (int ky = 0; ky < kernel; ++ky) {
        for (int kx = 0; kx < kernel; ++kx) {
          const int k = ky * kernel + kx;
          const std::size_t off = static_cast<std::size_t>(y0 + ky) * l.wp + kx;
          ConstStrided xk(x + off, channels, cols, stride);
          Eigen::Map<RowMajor<T>> dwk(scratch.dpacked.data() + k * tap_size, out_channels, channels);
          dwk.noalias() += g * xk.transpose();
          if (want_din) {
            Eigen::Map<const RowMajor<T>> wk(scratch.packed.data() + k * tap_size, out_channels,
                                             channels);
            Strided dxk(scratch.dcol.data() + off, channels, cols, stride);
            dxk.noalias() += wk.transpose() * g;
          }
        }
      }
    }
    if (want_din) {
      T* dst = din.sample(n);
      for (int c = 0; c < channels; ++c) {
        const T* s = scratch.dcol.data() + c * l.plane + static_cast<std::size_t>(pad) * l.wp + pad;
        T* d = dst + c * din.plane();
        for (int y = 0; y < h; ++y) {
          const T* sr = s + static_cast<std::size_t>(y) * l.wp;
          T* dr = d + static_cast<std::size_t>(y) * w;
          for (int xx = 0; xx < w; ++xx) dr[xx] += sr[xx];
        }
      }
    }
  }
  for (int o = 0; o < out_channels; ++o) {
    for (int c = 0; c < channels; ++c) {
      for (int k = 0; k < taps; ++k) {
        dweight[(static_cast<std::size_t>(o) * channels + c) * taps + k] +=
            scratch.dpacked[(static_cast<std::size_t>(k) * out_channels + o) * channels + c];
      }
    }
  }
}

}  // namespace

int conv_output_size(int in, int kernel, int stride, int pad) {
  return (in + 2 * pad - kernel) / stride + 1;
}

template <typename T>
void conv_forward(const Planes<T>& in, const T* weight, const T* bias, int out_channels, int kernel,
                  int stride, int pad, const Planes<T>& out, Scratch<T>& scratch) {
  if (use_shifted(kernel, stride, pad)) {
    shifted_forward(in, weight, bias, out_channels, kernel, pad, out, scratch);
    return;
  }
  using Strided = Eigen::Map<RowMajor<T>, 0, Eigen::OuterStride<>>;
  const int ho = out.height;
  const int wo = out.width;
  const auto p = static_cast<Eigen::Index>(out.plane());
  const auto ckk = static_cast<Eigen::Index>(in.channels) * kernel * kernel;
  const int rows = band_rows(wo);
  scratch.col.resize(static_cast<std::size_t>(ckk) * rows * wo);
  Eigen::Map<const RowMajor<T>> w(weight, out_channels, ckk);
  Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> b(bias, out_channels);

  for (int n = 0; n < in.batch; ++n) {
    for (int y0 = 0; y0 < ho; y0 += rows) {
      const int y1 = std::min(ho, y0 + rows);
      const Eigen::Index cols = static_cast<Eigen::Index>(y1 - y0) * wo;
      im2col_band(in.sample(n), in.channels, in.height, in.width, kernel, stride, pad, wo, y0, y1,
                  scratch.col.data());
      Eigen::Map<const RowMajor<T>> col(scratch.col.data(), ckk, cols);
      Strided result(out.sample(n) + static_cast<std::size_t>(y0) * wo, out_channels, cols,
                     Eigen::OuterStride<>(p));
      result.noalias() = w * col;
      result.colwise() += b;
    }
  }
}

template <typename T>
void conv_backward(const Planes<T>& in, const T* weight, int out_channels, int kernel, int stride,
                   int pad, const Planes<T>& dout, T* dweight, T* dbias, const Planes<T>& din,
                   Scratch<T>& scratch) {
  if (use_shifted(kernel, stride, pad)) {
    shifted_backward(in, weight, out_channels, kernel, pad, dout, dweight, dbias, din, scratch);
    return;
  }
  using ConstStrided = Eigen::Map<const RowMajor<T>, 0, Eigen::OuterStride<>>;
  const int ho = dout.height;
  const int wo = dout.width;
  const auto p = static_cast<Eigen::Index>(dout.plane());
  const auto ckk = static_cast<Eigen::Index>(in.channels) * kernel * kernel;
  const int rows = band_rows(wo);
  scratch.col.resize(static_cast<std::size_t>(ckk) * rows * wo);
  Eigen::Map<const RowMajor<T>> w(weight, out_channels, ckk);
  Eigen::Map<RowMajor<T>> dw(dweight, out_channels, ckk);

  for (int n = 0; n < in.batch; ++n) {
    for (int y0 = 0; y0 < ho; y0 += rows) {
      const int y1 = std::min(ho, y0 + rows);
      const Eigen::Index cols = static_cast<Eigen::Index>(y1 - y0) * wo;
      ConstStrided g(dout.sample(n) + static_cast<std::size_t>(y0) * wo, out_channels, cols,
                     Eigen::OuterStride<>(p));
      add_row_sums(dout.sample(n) + static_cast<std::size_t>(y0) * wo, out_channels, cols, p, dbias);
      im2col_band(in.sample(n), in.channels, in.height, in.width, kernel, stride, pad, wo, y0, y1,
                  scratch.col.data());
      Eigen::Map<RowMajor<T>> col(scratch.col.data(), ckk, cols);
      dw.noalias() += g * col.transpose();
      if (din.base != nullptr) {
        col.noalias() = w.transpose() * g;  // col buffer reused for d(col)
        col2im_band_add(scratch.col.data(), din.sample(n), din.channels, din.height, din.width,
                        kernel, stride, pad, wo, y0, y1);
      }
    }
  }
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias, int stride,
                 int pad) {
  check_conv_shapes(input.shape(), weight.shape(), bias.shape());
  const int k = weight.dim(2);
  const int ho = conv_output_size(input.dim(2), k, stride, pad);
  const int wo = conv_output_size(input.dim(3), k, stride, pad);
  if (ho < 1 || wo < 1 || stride < 1 || pad < 0) {
    throw Error(Errc::ShapeMismatch, "conv2d produces an empty output for " +
                                         shape_string(input.shape()));
  }
  Tensor<T> out({input.dim(0), weight.dim(0), ho, wo});
  Scratch<T> scratch;
  conv_forward(const_planes(input), weight.data(), bias.data(), weight.dim(0), k, stride, pad,
               planes_of(out), scratch);
  return out;
}

template <typename T>
Conv2dGrads<T> conv2d_backward(const Tensor<T>& input, const Tensor<T>& weight,
                               const Tensor<T>& dout, int stride, int pad) {
  check_conv_shapes(input.shape(), weight.shape(), Shape{weight.dim(0)});
  require_rank(dout.shape(), 4, "conv2d dout");
  const int k = weight.dim(2);
  if (dout.dim(0) != input.dim(0) || dout.dim(1) != weight.dim(0) ||
      dout.dim(2) != conv_output_size(input.dim(2), k, stride, pad) ||
      dout.dim(3) != conv_output_size(input.dim(3), k, stride, pad)) {
    throw Error(Errc::ShapeMismatch, "conv2d dout " + shape_string(dout.shape()));
  }
  Conv2dGrads<T> g{Tensor<T>(input.shape()), Tensor<T>(weight.shape()), Tensor<T>({weight.dim(0)})};
  Scratch<T> scratch;
  conv_backward(const_planes(input), weight.data(), weight.dim(0), k, stride, pad,
                const_planes(dout), g.weight.data(), g.bias.data(), planes_of(g.input), scratch);
  return g;
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) out[i] = x[i] > T{0} ? x[i] : T{0};
  return out;
}

template <typename T>
Tensor<T> relu_backward(const Tensor<T>& x, const Tensor<T>& dout) {
  if (x.shape() != dout.shape()) throw Error(Errc::ShapeMismatch, "relu_backward shapes differ");
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) out[i] = x[i] > T{0} ? dout[i] : T{0};
  return out;
}

template <typename T>
Tensor<T> avg_pool2(const Tensor<T>& x) {
  require_rank(x.shape(), 4, "avg_pool2");
  const int ho = x.dim(2) / 2;
  const int wo = x.dim(3) / 2;
  if (ho < 1 || wo < 1) throw Error(Errc::ShapeMismatch, "avg_pool2 input too small");
  Tensor<T> out({x.dim(0), x.dim(1), ho, wo});
  for (int n = 0; n < x.dim(0); ++n) {
    for (int c = 0; c < x.dim(1); ++c) {
      for (int y = 0; y < ho; ++y) {
        for (int xx = 0; xx < wo; ++xx) {
          out.at(n, c, y, xx) = T(0.25) * (x.at(n, c, 2 * y, 2 * xx) + x.at(n, c, 2 * y, 2 * xx + 1) +
                                           x.at(n, c, 2 * y + 1, 2 * xx) +
                                           x.at(n, c, 2 * y + 1, 2 * xx + 1));
        }
      }
    }
  }
  return out;
}

template <typename T>
Tensor<T> avg_pool2_backward(const Shape& input_shape, const Tensor<T>& dout) {
  require_rank(input_shape, 4, "avg_pool2_backward");
  Tensor<T> din(input_shape);
  for (int n = 0; n < dout.dim(0); ++n) {
    for (int c = 0; c < dout.dim(1); ++c) {
      for (int y = 0; y < dout.dim(2); ++y) {
        for (int x = 0; x < dout.dim(3); ++x) {
          const T g = T(0.25) * dout.at(n, c, y, x);
          din.at(n, c, 2 * y, 2 * x) = g;
          din.at(n, c, 2 * y, 2 * x + 1) = g;
          din.at(n, c, 2 * y + 1, 2 * x) = g;
          din.at(n, c, 2 * y + 1, 2 * x + 1) = g;
        }
      }
    }
  }
  return din;
}

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
  require_rank(x.shape(), 4, "global_avg_pool");
  const std::size_t p = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
  Tensor<T> out({x.dim(0), x.dim(1)});
  for (int n = 0; n < x.dim(0); ++n) {
    for (int c = 0; c < x.dim(1); ++c) {
      const T* src = &x.at(n, c, 0, 0);
      double sum = 0.0;
      for (std::size_t i = 0; i < p; ++i) sum += src[i];
      out.at(n, c) = static_cast<T>(sum / static_cast<double>(p));
    }
  }
  return out;
}

template <typename T>
Tensor<T> global_avg_pool_backward(const Shape& input_shape, const Tensor<T>& dout) {
  require_rank(input_shape, 4, "global_avg_pool_backward");
  Tensor<T> din(input_shape);
  const std::size_t p = static_cast<std::size_t>(input_shape[2]) * input_shape[3];
  for (int n = 0; n < input_shape[0]; ++n) {
    for (int c = 0; c < input_shape[1]; ++c) {
      const T g = dout.at(n, c) / static_cast<T>(p);
      std::fill_n(&din.at(n, c, 0, 0), p, g);
    }
  }
  return din;
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  require_rank(x.shape(), 2, "linear input");
  require_rank(weight.shape(), 2, "linear weight");
  if (weight.dim(1) != x.dim(1) || bias.numel() != static_cast<std::size_t>(weight.dim(0))) {
    throw Error(Errc::ShapeMismatch, "linear input " + shape_string(x.shape()) + " weight " +
                                         shape_string(weight.shape()));
  }
  Tensor<T> out({x.dim(0), weight.dim(0)});
  Eigen::Map<const RowMajor<T>> xm(x.data(), x.dim(0), x.dim(1));
  Eigen::Map<const RowMajor<T>> wm(weight.data(), weight.dim(0), weight.dim(1));
  Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> bm(bias.data(), weight.dim(0));
  Eigen::Map<RowMajor<T>> om(out.data(), x.dim(0), weight.dim(0));
  om.noalias() = xm * wm.transpose();
  om.rowwise() += bm;
  return out;
}

template <typename T>
LinearGrads<T> linear_backward(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& dout) {
  if (dout.dim(0) != x.dim(0) || dout.dim(1) != weight.dim(0)) {
    throw Error(Errc::ShapeMismatch, "linear dout " + shape_string(dout.shape()));
  }
  LinearGrads<T> g{Tensor<T>(x.shape()), Tensor<T>(weight.shape()), Tensor<T>({weight.dim(0)})};
  Eigen::Map<const RowMajor<T>> xm(x.data(), x.dim(0), x.dim(1));
  Eigen::Map<const RowMajor<T>> wm(weight.data(), weight.dim(0), weight.dim(1));
  Eigen::Map<const RowMajor<T>> dm(dout.data(), dout.dim(0), dout.dim(1));
  Eigen::Map<RowMajor<T>>(g.input.data(), x.dim(0), x.dim(1)).noalias() = dm * wm;
  Eigen::Map<RowMajor<T>>(g.weight.data(), weight.dim(0), weight.dim(1)).noalias() =
      dm.transpose() * xm;
  for (int n = 0; n < x.dim(0); ++n) {
    for (int o = 0; o < weight.dim(0); ++o) g.bias[static_cast<std::size_t>(o)] += dout.at(n, o);
  }
  return g;
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& logits) {
  require_rank(logits.shape(), 2, "softmax");
  Tensor<T> out(logits.shape());
  const int classes = logits.dim(1);
  for (int n = 0; n < logits.dim(0); ++n) {
    double mx = logits.at(n, 0);
    for (int c = 1; c < classes; ++c) mx = std::max(mx, static_cast<double>(logits.at(n, c)));
    double sum = 0.0;
    std::vector<double> e(static_cast<std::size_t>(classes));
    for (int c = 0; c < classes; ++c) {
      e[static_cast<std::size_t>(c)] = std::exp(static_cast<double>(logits.at(n, c)) - mx);
      sum += e[static_cast<std::size_t>(c)];
    }
    for (int c = 0; c < classes; ++c) out.at(n, c) = static_cast<T>(e[static_cast<std::size_t>(c)] / sum);
  }
  return out;
}

namespace {

void check_loss_shapes(const Shape& probs, const Shape& onehot) {
  require_rank(probs, 2, "cross_entropy probs");
  if (probs != onehot) {
    throw Error(Errc::ShapeMismatch, "cross_entropy probs " + shape_string(probs) + " vs onehot " +
                                         shape_string(onehot));
  }
}

}  // namespace

template <typename T>
double cross_entropy(const Tensor<T>& probs, const Tensor<T>& onehot, LossKind kind) {
  check_loss_shapes(probs.shape(), onehot.shape());
  const int batch = probs.dim(0);
  if (batch == 0) return 0.0;
  double total = 0.0;
  for (int n = 0; n < batch; ++n) {
    for (int c = 0; c < probs.dim(1); ++c) {
      const double p = std::clamp(static_cast<double>(probs.at(n, c)), kProbabilityClamp,
                                  1.0 - kProbabilityClamp);
      const double y = onehot.at(n, c);
      total -= y * std::log(p);
      if (kind == LossKind::PerClassBinary) total -= (1.0 - y) * std::log(1.0 - p);
    }
  }
  return total / batch;
}

template <typename T>
Tensor<T> cross_entropy_logit_grad(const Tensor<T>& probs, const Tensor<T>& onehot, LossKind kind) {
  check_loss_shapes(probs.shape(), onehot.shape());
  const int batch = probs.dim(0);
  const int classes = probs.dim(1);
  Tensor<T> out(probs.shape());
  std::vector<double> g(static_cast<std::size_t>(classes));
  for (int n = 0; n < batch; ++n) {
    double dot = 0.0;
    for (int c = 0; c < classes; ++c) {
      const double p = probs.at(n, c);
      const double y = onehot.at(n, c);
      double d = 0.0;
      // Zero derivative where the clamp is active.
      if (p > kProbabilityClamp && p < 1.0 - kProbabilityClamp) {
        d = -y / p;
        if (kind == LossKind::PerClassBinary) d += (1.0 - y) / (1.0 - p);
      }
      g[static_cast<std::size_t>(c)] = d;
      dot += d * p;
    }
    for (int c = 0; c < classes; ++c) {
      const double p = probs.at(n, c);
      out.at(n, c) = static_cast<T>(p * (g[static_cast<std::size_t>(c)] - dot) / batch);
    }
  }
  return out;
}

// ------------------------------------------------------------ dense block

namespace detail {

template <typename T>
void relu_channels(const Tensor<T>& pre, Tensor<T>& post, int first, int count) {
  const std::size_t plane = static_cast<std::size_t>(pre.dim(2)) * pre.dim(3);
  for (int n = 0; n < pre.dim(0); ++n) {
    const T* src = &pre.at(n, first, 0, 0);
    T* dst = &post.at(n, first, 0, 0);
    const std::size_t len = plane * static_cast<std::size_t>(count);
    for (std::size_t i = 0; i < len; ++i) dst[i] = src[i] > T{0} ? src[i] : T{0};
  }
}

// dpre += dpost * (pre > 0) over a channel range.
template <typename T>
void mask_add_channels(const Tensor<T>& pre, const Tensor<T>& dpost, Tensor<T>& dpre, int first,
                       int count) {
  const std::size_t plane = static_cast<std::size_t>(pre.dim(2)) * pre.dim(3);
  for (int n = 0; n < pre.dim(0); ++n) {
    const T* p = &pre.at(n, first, 0, 0);
    const T* g = &dpost.at(n, first, 0, 0);
    T* d = &dpre.at(n, first, 0, 0);
    const std::size_t len = plane * static_cast<std::size_t>(count);
    for (std::size_t i = 0; i < len; ++i) {
      if (p[i] > T{0}) d[i] += g[i];
    }
  }
}

template <typename T>
void dense_block_run(Tensor<T>& pre, Tensor<T>& post, int c0, const DenseBlockConfig& cfg,
                     const std::vector<const T*>& weights, const std::vector<const T*>& biases,
                     Scratch<T>& scratch) {
  relu_channels(pre, post, 0, c0);
  const int k = cfg.growth_rate;
  for (int i = 0; i < cfg.num_layers; ++i) {
    const int cin = c0 + i * k;
    conv_forward(planes_of(post, 0, cin), weights[static_cast<std::size_t>(i)],
                 biases[static_cast<std::size_t>(i)], k, 3, 1, 1, planes_of(pre, cin, k), scratch);
    relu_channels(pre, post, cin, k);
  }
}

template <typename T>
void dense_block_unwind(const Tensor<T>& pre, const Tensor<T>& post, Tensor<T>& dpre, int c0,
                        const DenseBlockConfig& cfg, const std::vector<const T*>& weights,
                        const std::vector<T*>& dweights, const std::vector<T*>& dbiases,
                        Scratch<T>& scratch) {
  const int k = cfg.growth_rate;
  Tensor<T> dpost(pre.shape());
  auto& post_mut = const_cast<Tensor<T>&>(post);
  for (int i = cfg.num_layers - 1; i >= 0; --i) {
    const int cin = c0 + i * k;
    mask_add_channels(pre, dpost, dpre, cin, k);
    const auto idx = static_cast<std::size_t>(i);
    conv_backward(planes_of(post_mut, 0, cin), weights[idx], k, 3, 1, 1, planes_of(dpre, cin, k),
                  dweights[idx], dbiases[idx], planes_of(dpost, 0, cin), scratch);
  }
  mask_add_channels(pre, dpost, dpre, 0, c0);
}

}  // namespace detail

namespace {

template <typename T>
void check_block(const Tensor<T>& input, const DenseBlockConfig& cfg,
                 const DenseBlockParams<T>& params) {
  require_rank(input.shape(), 4, "dense block input");
  if (cfg.num_layers < 0 || cfg.growth_rate < 1 ||
      params.weights.size() != static_cast<std::size_t>(cfg.num_layers) ||
      params.biases.size() != params.weights.size()) {
    throw Error(Errc::ShapeMismatch, "dense block parameter count does not match config");
  }
  for (int i = 0; i < cfg.num_layers; ++i) {
    const Shape expected{cfg.growth_rate, input.dim(1) + i * cfg.growth_rate, 3, 3};
    const auto& w = params.weights[static_cast<std::size_t>(i)];
    if (w.shape() != expected || params.biases[static_cast<std::size_t>(i)].numel() !=
                                     static_cast<std::size_t>(cfg.growth_rate)) {
      throw Error(Errc::ShapeMismatch, "dense layer " + std::to_string(i) + " weight " +
                                           shape_string(w.shape()) + ", expected " +
                                           shape_string(expected));
    }
  }
}

template <typename T>
Tensor<T> block_buffer(const Tensor<T>& input, const DenseBlockConfig& cfg) {
  const int c0 = input.dim(1);
  Tensor<T> pre({input.dim(0), c0 + cfg.num_layers * cfg.growth_rate, input.dim(2), input.dim(3)});
  const std::size_t chunk = static_cast<std::size_t>(c0) * input.dim(2) * input.dim(3);
  for (int n = 0; n < input.dim(0); ++n) {
    std::copy_n(input.data() + n * chunk, chunk, &pre.at(n, 0, 0, 0));
  }
  return pre;
}

template <typename T>
std::vector<const T*> pointers(const std::vector<Tensor<T>>& ts) {
  std::vector<const T*> out;
  for (const auto& t : ts) out.push_back(t.data());
  return out;
}

}  // namespace

template <typename T>
Tensor<T> dense_block_forward(const Tensor<T>& input, const DenseBlockConfig& cfg,
                              const DenseBlockParams<T>& params) {
  check_block(input, cfg, params);
  Tensor<T> pre = block_buffer(input, cfg);
  Tensor<T> post(pre.shape());
  Scratch<T> scratch;
  detail::dense_block_run(pre, post, input.dim(1), cfg, pointers(params.weights),
                          pointers(params.biases), scratch);
  return pre;
}

template <typename T>
DenseBlockGrads<T> dense_block_backward(const Tensor<T>& input, const DenseBlockConfig& cfg,
                                        const DenseBlockParams<T>& params, const Tensor<T>& dout) {
  check_block(input, cfg, params);
  Tensor<T> pre = block_buffer(input, cfg);
  if (dout.shape() != pre.shape()) {
    throw Error(Errc::ShapeMismatch, "dense block dout " + shape_string(dout.shape()));
  }
  Tensor<T> post(pre.shape());
  Scratch<T> scratch;
  const int c0 = input.dim(1);
  const auto w = pointers(params.weights);
  detail::dense_block_run(pre, post, c0, cfg, w, pointers(params.biases), scratch);

  DenseBlockGrads<T> grads;
  std::vector<T*> dw;
  std::vector<T*> db;
  for (std::size_t i = 0; i < params.weights.size(); ++i) {
    grads.params.weights.emplace_back(params.weights[i].shape());
    grads.params.biases.emplace_back(params.biases[i].shape());
  }
  for (std::size_t i = 0; i < params.weights.size(); ++i) {
    dw.push_back(grads.params.weights[i].data());
    db.push_back(grads.params.biases[i].data());
  }
  Tensor<T> dpre = dout;
  detail::dense_block_unwind(pre, post, dpre, c0, cfg, w, dw, db, scratch);

  grads.input = Tensor<T>(input.shape());
  const std::size_t chunk = static_cast<std::size_t>(c0) * input.dim(2) * input.dim(3);
  for (int n = 0; n < input.dim(0); ++n) {
    std::copy_n(&dpre.at(n, 0, 0, 0), chunk, grads.input.data() + n * chunk);
  }
  return grads;
}

#define CAMID_INSTANTIATE(T)                                                                      \
  template void conv_forward<T>(const Planes<T>&, const T*, const T*, int, int, int, int,        \
                                const Planes<T>&, Scratch<T>&);                                   \
  template void conv_backward<T>(const Planes<T>&, const T*, int, int, int, int, const Planes<T>&, \
                                 T*, T*, const Planes<T>&, Scratch<T>&);                          \
  template Tensor<T> conv2d<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, int, int);   \
  template Conv2dGrads<T> conv2d_backward<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, \
                                             int, int);                                           \
  template Tensor<T> relu<T>(const Tensor<T>&);                                                   \
  template Tensor<T> relu_backward<T>(const Tensor<T>&, const Tensor<T>&);                        \
  template Tensor<T> avg_pool2<T>(const Tensor<T>&);                                              \
  template Tensor<T> avg_pool2_backward<T>(const Shape&, const Tensor<T>&);                       \
  template Tensor<T> global_avg_pool<T>(const Tensor<T>&);                                        \
  template Tensor<T> global_avg_pool_backward<T>(const Shape&, const Tensor<T>&);                 \
  template Tensor<T> linear<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);             \
  template LinearGrads<T> linear_backward<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&); \
  template Tensor<T> softmax<T>(const Tensor<T>&);                                                \
  template double cross_entropy<T>(const Tensor<T>&, const Tensor<T>&, LossKind);                 \
  template Tensor<T> cross_entropy_logit_grad<T>(const Tensor<T>&, const Tensor<T>&, LossKind);   \
  template Tensor<T> dense_block_forward<T>(const Tensor<T>&, const DenseBlockConfig&,            \
                                            const DenseBlockParams<T>&);                          \
  template DenseBlockGrads<T> dense_block_backward<T>(const Tensor<T>&, const DenseBlockConfig&,  \
                                                      const DenseBlockParams<T>&,                 \
                                                      const Tensor<T>&);                          \
  template void detail::dense_block_run<T>(Tensor<T>&, Tensor<T>&, int, const DenseBlockConfig&,  \
                                           const std::vector<const T*>&,                          \
                                           const std::vector<const T*>&, Scratch<T>&);            \
  template void detail::dense_block_unwind<T>(const Tensor<T>&, const Tensor<T>&, Tensor<T>&,     \
                                              int, const DenseBlockConfig&,                       \
                                              const std::vector<const T*>&,                       \
                                              const std::vector<T*>&, const std::vector<T*>&,     \
                                              Scratch<T>&);

CAMID_INSTANTIATE(float)
CAMID_INSTANTIATE(double)

#undef CAMID_INSTANTIATE

}  // namespace camid::nn
