#pragma once

#include <algorithm>
#include <cstddef>
#include <cstring>
#include <string>
#include <vector>

#include "dynapyr/tensor.hpp"

namespace dynapyr {

/// One square 2-D convolution. Lateral-block convolutions always use
/// stride 1 with padding d*(k-1)/2; only the backbone strides.
struct ConvSpec {
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;
  std::size_t kernel = 1;
  std::size_t dilation = 1;
  std::size_t padding = 0;
  std::size_t stride = 1;

  /// Padding that keeps the spatial size at stride 1.
  static constexpr std::size_t same_padding(std::size_t kernel, std::size_t dilation) {
    return dilation * (kernel - 1) / 2;
  }

  static ConvSpec same(std::size_t in, std::size_t out, std::size_t kernel, std::size_t dilation = 1) {
    return ConvSpec{in, out, kernel, dilation, same_padding(kernel, dilation), 1};
  }

  bool preserves_size() const noexcept { return stride == 1 && padding == same_padding(kernel, dilation); }

  std::size_t span() const noexcept { return dilation * (kernel - 1) + 1; }

  std::size_t out_extent(std::size_t in) const {
    if (in + 2 * padding < span()) {
      throw ShapeError("conv2d: input extent " + std::to_string(in) + " too small for dilated kernel span " +
                       std::to_string(span()));
    }
    return (in + 2 * padding - span()) / stride + 1;
  }

  Shape weight_shape() const { return {out_channels, in_channels, kernel, kernel}; }
  Shape bias_shape() const { return {out_channels}; }

  void validate() const {
    if (in_channels == 0) throw ShapeError("ConvSpec: in_channels must be positive");
    if (out_channels == 0) throw ShapeError("ConvSpec: out_channels must be positive");
    if (kernel == 0 || kernel % 2 == 0) throw ShapeError("ConvSpec: kernel must be odd and positive, got " + std::to_string(kernel));
    if (dilation == 0) throw ShapeError("ConvSpec: dilation must be positive");
    if (stride == 0) throw ShapeError("ConvSpec: stride must be positive");
  }

  friend bool operator==(const ConvSpec&, const ConvSpec&) = default;
};

namespace detail {

// Output rows y in [lo, hi) read input row y*stride + offset inside [0, extent).
struct TapRange {
  std::ptrdiff_t lo;
  std::ptrdiff_t hi;
};

inline TapRange tap_range(std::ptrdiff_t offset, std::ptrdiff_t stride, std::ptrdiff_t extent, std::ptrdiff_t out_extent) {
  // smallest y with y*stride + offset >= 0
  std::ptrdiff_t lo = offset >= 0 ? 0 : (-offset + stride - 1) / stride;
  // largest y with y*stride + offset <= extent - 1
  const std::ptrdiff_t top = extent - 1 - offset;
  std::ptrdiff_t hi = top < 0 ? 0 : top / stride + 1;
  lo = std::min(lo, out_extent);
  hi = std::clamp(hi, lo, out_extent);
  return {lo, hi};
}

}  // namespace detail

inline void check_conv_operands(const Tensor& x, const ConvSpec& spec, const Tensor& w, const Tensor& b) {
  spec.validate();
  require_rank(x, 3, "conv2d", "input");
  if (x.channels() != spec.in_channels) {
    throw ShapeError("conv2d: input channels " + std::to_string(x.channels()) + " != spec in_channels " +
                     std::to_string(spec.in_channels));
  }
  if (w.shape() != spec.weight_shape()) {
    throw ShapeError("conv2d: weight shape " + shape_string(w.shape()) + " != expected " + shape_string(spec.weight_shape()));
  }
  if (b.shape() != spec.bias_shape()) {
    throw ShapeError("conv2d: bias shape " + shape_string(b.shape()) + " != expected " + shape_string(spec.bias_shape()));
  }
}

/// Cross-correlation with zero padding, evaluated tap by tap. Taps that fall
/// outside the input are skipped, which is the same as reading zero.
inline Tensor conv2d_direct(const Tensor& x, const ConvSpec& spec, const Tensor& w, const Tensor& b) {
  check_conv_operands(x, spec, w, b);
  const auto H = static_cast<std::ptrdiff_t>(x.height());
  const auto W = static_cast<std::ptrdiff_t>(x.width());
  const auto Ho = static_cast<std::ptrdiff_t>(spec.out_extent(x.height()));
  const auto Wo = static_cast<std::ptrdiff_t>(spec.out_extent(x.width()));
  const auto k = static_cast<std::ptrdiff_t>(spec.kernel);
  const auto d = static_cast<std::ptrdiff_t>(spec.dilation);
  const auto p = static_cast<std::ptrdiff_t>(spec.padding);
  const auto s = static_cast<std::ptrdiff_t>(spec.stride);

  Tensor out({spec.out_channels, static_cast<std::size_t>(Ho), static_cast<std::size_t>(Wo)});
  for (std::size_t oc = 0; oc < spec.out_channels; ++oc) {
    double* op = out.plane(oc).data();
    std::fill(op, op + Ho * Wo, b[oc]);
    for (std::size_t ic = 0; ic < spec.in_channels; ++ic) {
      const double* ip = x.plane(ic).data();
      const double* wp = w.data() + (oc * spec.in_channels + ic) * spec.kernel * spec.kernel;
      for (std::ptrdiff_t ky = 0; ky < k; ++ky) {
        const std::ptrdiff_t oy = ky * d - p;
        const auto yr = detail::tap_range(oy, s, H, Ho);
        for (std::ptrdiff_t kx = 0; kx < k; ++kx) {
          const std::ptrdiff_t ox = kx * d - p;
          const auto xr = detail::tap_range(ox, s, W, Wo);
          const double wv = wp[ky * k + kx];
          for (std::ptrdiff_t y = yr.lo; y < yr.hi; ++y) {
            double* orow = op + y * Wo;
            const std::ptrdiff_t irow = (y * s + oy) * W + ox;
            if (s == 1) {
              for (std::ptrdiff_t xx = xr.lo; xx < xr.hi; ++xx) orow[xx] += wv * ip[irow + xx];
            } else {
              for (std::ptrdiff_t xx = xr.lo; xx < xr.hi; ++xx) orow[xx] += wv * ip[irow + xx * s];
            }
          }
        }
      }
    }
  }
  return out;
}

/// Gradients of conv2d_direct, accumulated. Any of grad_x / grad_w / grad_b may be null.
inline void conv2d_backward_direct(const Tensor& x, const ConvSpec& spec, const Tensor& w, const Tensor& grad_out, Tensor* grad_x,
                            Tensor* grad_w, Tensor* grad_b) {
  const auto H = static_cast<std::ptrdiff_t>(x.height());
  const auto W = static_cast<std::ptrdiff_t>(x.width());
  const auto Ho = static_cast<std::ptrdiff_t>(grad_out.height());
  const auto Wo = static_cast<std::ptrdiff_t>(grad_out.width());
  const auto k = static_cast<std::ptrdiff_t>(spec.kernel);
  const auto d = static_cast<std::ptrdiff_t>(spec.dilation);
  const auto p = static_cast<std::ptrdiff_t>(spec.padding);
  const auto s = static_cast<std::ptrdiff_t>(spec.stride);

  for (std::size_t oc = 0; oc < spec.out_channels; ++oc) {
    const double* gp = grad_out.plane(oc).data();
    if (grad_b) {
      double acc = 0.0;
      for (std::ptrdiff_t i = 0; i < Ho * Wo; ++i) acc += gp[i];
      (*grad_b)[oc] += acc;
    }
    for (std::size_t ic = 0; ic < spec.in_channels; ++ic) {
      const double* ip = x.plane(ic).data();
      double* gip = grad_x ? grad_x->plane(ic).data() : nullptr;
      const std::size_t wbase = (oc * spec.in_channels + ic) * spec.kernel * spec.kernel;
      for (std::ptrdiff_t ky = 0; ky < k; ++ky) {
        const std::ptrdiff_t oy = ky * d - p;
        const auto yr = detail::tap_range(oy, s, H, Ho);
        for (std::ptrdiff_t kx = 0; kx < k; ++kx) {
          const std::ptrdiff_t ox = kx * d - p;
          const auto xr = detail::tap_range(ox, s, W, Wo);
          const double wv = w[wbase + ky * k + kx];
          double gw = 0.0;
          for (std::ptrdiff_t y = yr.lo; y < yr.hi; ++y) {
            const double* grow = gp + y * Wo;
            const std::ptrdiff_t irow = (y * s + oy) * W + ox;
            if (s == 1) {
              for (std::ptrdiff_t xx = xr.lo; xx < xr.hi; ++xx) gw += grow[xx] * ip[irow + xx];
              if (gip) {
                for (std::ptrdiff_t xx = xr.lo; xx < xr.hi; ++xx) gip[irow + xx] += wv * grow[xx];
              }
            } else {
              for (std::ptrdiff_t xx = xr.lo; xx < xr.hi; ++xx) gw += grow[xx] * ip[irow + xx * s];
              if (gip) {
                for (std::ptrdiff_t xx = xr.lo; xx < xr.hi; ++xx) gip[irow + xx * s] += wv * grow[xx];
              }
            }
          }
          if (grad_w) (*grad_w)[wbase + ky * k + kx] += gw;
        }
      }
    }
  }
}

namespace detail {

// Unfolds x into a (C_in * k * k) x (Ho * Wo) matrix; padded taps are zero.
inline void im2col(const Tensor& x, const ConvSpec& spec, std::ptrdiff_t Ho, std::ptrdiff_t Wo, std::vector<double>& col) {
  const auto H = static_cast<std::ptrdiff_t>(x.height());
  const auto W = static_cast<std::ptrdiff_t>(x.width());
  const auto k = static_cast<std::ptrdiff_t>(spec.kernel);
  const auto d = static_cast<std::ptrdiff_t>(spec.dilation);
  const auto p = static_cast<std::ptrdiff_t>(spec.padding);
  const auto s = static_cast<std::ptrdiff_t>(spec.stride);
  const std::ptrdiff_t P = Ho * Wo;
  col.assign(spec.in_channels * spec.kernel * spec.kernel * static_cast<std::size_t>(P), 0.0);
  double* row = col.data();
  for (std::size_t ic = 0; ic < spec.in_channels; ++ic) {
    const double* ip = x.plane(ic).data();
    for (std::ptrdiff_t ky = 0; ky < k; ++ky) {
      const auto yr = tap_range(ky * d - p, s, H, Ho);
      for (std::ptrdiff_t kx = 0; kx < k; ++kx, row += P) {
        const std::ptrdiff_t ox = kx * d - p;
        const auto xr = tap_range(ox, s, W, Wo);
        for (std::ptrdiff_t y = yr.lo; y < yr.hi; ++y) {
          const std::ptrdiff_t irow = (y * s + ky * d - p) * W + ox;
          for (std::ptrdiff_t xx = xr.lo; xx < xr.hi; ++xx) row[y * Wo + xx] = ip[irow + xx * s];
        }
      }
    }
  }
}

// Scatter-adds an unfolded gradient back onto grad_x.
inline void col2im_add(const std::vector<double>& col, const ConvSpec& spec, std::ptrdiff_t Ho, std::ptrdiff_t Wo, Tensor& grad_x) {
  const auto H = static_cast<std::ptrdiff_t>(grad_x.height());
  const auto W = static_cast<std::ptrdiff_t>(grad_x.width());
  const auto k = static_cast<std::ptrdiff_t>(spec.kernel);
  const auto d = static_cast<std::ptrdiff_t>(spec.dilation);
  const auto p = static_cast<std::ptrdiff_t>(spec.padding);
  const auto s = static_cast<std::ptrdiff_t>(spec.stride);
  const std::ptrdiff_t P = Ho * Wo;
  const double* row = col.data();
  for (std::size_t ic = 0; ic < spec.in_channels; ++ic) {
    double* gp = grad_x.plane(ic).data();
    for (std::ptrdiff_t ky = 0; ky < k; ++ky) {
      const auto yr = tap_range(ky * d - p, s, H, Ho);
      for (std::ptrdiff_t kx = 0; kx < k; ++kx, row += P) {
        const std::ptrdiff_t ox = kx * d - p;
        const auto xr = tap_range(ox, s, W, Wo);
        for (std::ptrdiff_t y = yr.lo; y < yr.hi; ++y) {
          const std::ptrdiff_t irow = (y * s + ky * d - p) * W + ox;
          for (std::ptrdiff_t xx = xr.lo; xx < xr.hi; ++xx) gp[irow + xx * s] += row[y * Wo + xx];
        }
      }
    }
  }
}

}  // namespace detail

namespace detail {

inline constexpr std::size_t kTileRows = 4;   // output channels (forward) or unfolded rows (grad_x)
inline constexpr std::size_t kTileCols = 16;  // output positions per tile

using lane8 = double __attribute__((vector_size(64)));

// out[r][c] += sum_j apack[j * Rows + r] * b[j * ldb + c], summed over j in
// ascending order. The packed block and explicit vector accumulators keep
// the tile in registers regardless of how the optimiser treats the caller.
template <std::size_t Rows, std::size_t Cols>
inline void gemm_tile(const double* __restrict apack, const double* __restrict b, std::size_t ldb, std::size_t n,
                      double* __restrict out, std::size_t ldo) {
  if constexpr (Cols % 8 == 0) {
    constexpr std::size_t V = Cols / 8;
    lane8 acc[Rows][V];
    for (std::size_t r = 0; r < Rows; ++r)
      for (std::size_t v = 0; v < V; ++v) std::memcpy(&acc[r][v], out + r * ldo + 8 * v, sizeof(lane8));
    for (std::size_t j = 0; j < n; ++j) {
      lane8 bv[V];
      for (std::size_t v = 0; v < V; ++v) std::memcpy(&bv[v], b + j * ldb + 8 * v, sizeof(lane8));
      const double* ar = apack + j * Rows;
      for (std::size_t r = 0; r < Rows; ++r)
        for (std::size_t v = 0; v < V; ++v) acc[r][v] += ar[r] * bv[v];
    }
    for (std::size_t r = 0; r < Rows; ++r)
      for (std::size_t v = 0; v < V; ++v) std::memcpy(out + r * ldo + 8 * v, &acc[r][v], sizeof(lane8));
  } else {
    double acc[Rows][Cols];
    for (std::size_t r = 0; r < Rows; ++r)
      for (std::size_t c = 0; c < Cols; ++c) acc[r][c] = out[r * ldo + c];
    for (std::size_t j = 0; j < n; ++j) {
      const double* br = b + j * ldb;
      const double* ar = apack + j * Rows;
      for (std::size_t r = 0; r < Rows; ++r)
        for (std::size_t c = 0; c < Cols; ++c) acc[r][c] += ar[r] * br[c];
    }
    for (std::size_t r = 0; r < Rows; ++r)
      for (std::size_t c = 0; c < Cols; ++c) out[r * ldo + c] = acc[r][c];
  }
}

template <std::size_t Rows>
inline void gemm_row_block(const double* apack, std::size_t cols, std::size_t n, const double* b, std::size_t ldb, double* out,
                           std::size_t ldo) {
  std::size_t c = 0;
  for (; c + kTileCols <= cols; c += kTileCols) gemm_tile<Rows, kTileCols>(apack, b + c, ldb, n, out + c, ldo);
  for (; c + 4 <= cols; c += 4) gemm_tile<Rows, 4>(apack, b + c, ldb, n, out + c, ldo);
  for (; c < cols; ++c) gemm_tile<Rows, 1>(apack, b + c, ldb, n, out + c, ldo);
}

// out (rows x cols, row stride ldo) += A (rows x n) * B (n x cols), with A
// addressed as a[r * lda + j * a_step] and B row-major with stride ldb.
inline void gemm_accumulate(std::size_t rows, std::size_t cols, std::size_t n, const double* a, std::size_t lda, std::size_t a_step,
                            const double* b, std::size_t ldb, double* out, std::size_t ldo) {
  thread_local std::vector<double> apack;
  apack.resize(n * kTileRows);
  std::size_t r = 0;
  for (; r + kTileRows <= rows; r += kTileRows) {
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t q = 0; q < kTileRows; ++q) apack[j * kTileRows + q] = a[(r + q) * lda + j * a_step];
    gemm_row_block<kTileRows>(apack.data(), cols, n, b, ldb, out + r * ldo, ldo);
  }
  for (; r < rows; ++r) {
    for (std::size_t j = 0; j < n; ++j) apack[j] = a[r * lda + j * a_step];
    gemm_row_block<1>(apack.data(), cols, n, b, ldb, out + r * ldo, ldo);
  }
}

// Per-thread unfold buffer. Reusing it avoids a fresh large allocation (and
// its page faults) on every call.
inline std::vector<double>& col_scratch() {
  thread_local std::vector<double> buffer;
  return buffer;
}

inline std::vector<double>& transpose_scratch() {
  thread_local std::vector<double> buffer;
  return buffer;
}

}  // namespace detail

/// Cross-correlation with zero padding (out-of-bounds taps read zero),
/// computed as a weight-matrix times unfolded-input product.
inline Tensor conv2d(const Tensor& x, const ConvSpec& spec, const Tensor& w, const Tensor& b) {
  check_conv_operands(x, spec, w, b);
  const auto Ho = static_cast<std::ptrdiff_t>(spec.out_extent(x.height()));
  const auto Wo = static_cast<std::ptrdiff_t>(spec.out_extent(x.width()));
  const auto P = static_cast<std::size_t>(Ho * Wo);
  const std::size_t K = spec.in_channels * spec.kernel * spec.kernel;
  auto& col = detail::col_scratch();
  detail::im2col(x, spec, Ho, Wo, col);

  Tensor out({spec.out_channels, static_cast<std::size_t>(Ho), static_cast<std::size_t>(Wo)});
  for (std::size_t oc = 0; oc < spec.out_channels; ++oc) std::fill_n(out.plane(oc).data(), P, b[oc]);
  detail::gemm_accumulate(spec.out_channels, P, K, w.data(), K, 1, col.data(), P, out.data(), P);
  return out;
}

/// Accumulates conv2d gradients. Any of grad_x / grad_w / grad_b may be null.
inline void conv2d_backward(const Tensor& x, const ConvSpec& spec, const Tensor& w, const Tensor& grad_out, Tensor* grad_x,
                            Tensor* grad_w, Tensor* grad_b) {
  const auto Ho = static_cast<std::ptrdiff_t>(grad_out.height());
  const auto Wo = static_cast<std::ptrdiff_t>(grad_out.width());
  const auto P = static_cast<std::size_t>(Ho * Wo);
  const std::size_t K = spec.in_channels * spec.kernel * spec.kernel;

  if (grad_b) {
    for (std::size_t oc = 0; oc < spec.out_channels; ++oc) {
      double acc = 0.0;
      for (double g : grad_out.plane(oc)) acc += g;
      (*grad_b)[oc] += acc;
    }
  }
  if (!grad_w && !grad_x) return;

  auto& col = detail::col_scratch();
  detail::im2col(x, spec, Ho, Wo, col);
  if (grad_w) {
    // grad_w (out x K) += grad_out (out x P) * col^T (P x K)
    auto& col_t = detail::transpose_scratch();
    col_t.resize(P * K);
    for (std::size_t kk = 0; kk < K; ++kk)
      for (std::size_t p = 0; p < P; ++p) col_t[p * K + kk] = col[kk * P + p];
    detail::gemm_accumulate(spec.out_channels, K, P, grad_out.data(), P, 1, col_t.data(), K, grad_w->data(), K);
  }
  if (grad_x) {
    // unfolded grad (K x P) = w^T (K x out) * grad_out (out x P)
    std::fill(col.begin(), col.end(), 0.0);
    detail::gemm_accumulate(K, P, spec.out_channels, w.data(), 1, K, grad_out.data(), P, col.data(), P);
    detail::col2im_add(col, spec, Ho, Wo, *grad_x);
  }
}

}  // namespace dynapyr
