#pragma once

// OpenMP kernels used by the network engine. Every parallel loop partitions
// independent outputs and keeps a fixed inner summation order, so results do
// not depend on the thread count.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <vector>

#include "scrl/kernels/geometry.hpp"

namespace scrl::kernels {

using index_t = std::int64_t;

namespace detail {

// One register tile of C = init + A * B: RB rows of A against JB columns of
// B. The sum over the inner index runs in order, so every element is
// computed the same way whatever the tiling or thread count.
template <class T, size_t RB, size_t JB>
inline void gemm_tile(const T* a, size_t lda, const T* b, size_t ldb, T* c, size_t ldc,
                      const T* init, size_t init_ld, size_t q, size_t rows, size_t cols) {
  T acc[RB][JB];
  for (size_t r = 0; r < RB; ++r)
    for (size_t j = 0; j < JB; ++j)
      acc[r][j] = (r < rows && j < cols && init) ? init[r * init_ld + j] : T(0);
  if (rows == RB && cols == JB) {
    for (size_t k = 0; k < q; ++k) {
      // One-hot and post-ReLU inputs are mostly zero.
      bool zero = true;
      for (size_t r = 0; r < RB; ++r) zero = zero && a[r * lda + k] == T(0);
      if (zero) continue;
      const T* bk = b + k * ldb;
      for (size_t r = 0; r < RB; ++r) {
        const T av = a[r * lda + k];
#pragma omp simd
        for (size_t j = 0; j < JB; ++j) acc[r][j] += av * bk[j];
      }
    }
  } else {
    for (size_t k = 0; k < q; ++k) {
      const T* bk = b + k * ldb;
      for (size_t r = 0; r < rows; ++r) {
        const T av = a[r * lda + k];
        for (size_t j = 0; j < cols; ++j) acc[r][j] += av * bk[j];
      }
    }
  }
  for (size_t r = 0; r < rows; ++r)
    for (size_t j = 0; j < cols; ++j) c[r * ldc + j] = acc[r][j];
}

// C[m, p] = init + A[m, q] * B[q, p]. `init` is either a row broadcast to
// every row (init_ld = 0) or a full [m, p] matrix (init_ld = p), or null.
template <class T>
void gemm(const T* a, const T* b, T* c, size_t m, size_t q, size_t p, const T* init,
          size_t init_ld) {
  constexpr size_t RB = 4;
  constexpr size_t JB = 256 / sizeof(T);
  constexpr size_t JN = 64 / sizeof(T);  // one vector register
  const size_t row_blocks = (m + RB - 1) / RB;
  // Wide strips, then register-wide strips for the remainder, then a scalar tail.
  const size_t wide = p / JB, narrow = (p - wide * JB) / JN;
  const size_t tail = p - wide * JB - narrow * JN;
  const size_t strips = wide + narrow + (tail ? 1 : 0);
  // Column strips outermost so a strip of B stays cached across row blocks.
#pragma omp parallel for schedule(static)
  for (index_t t = 0; t < static_cast<index_t>(row_blocks * strips); ++t) {
    const size_t strip = static_cast<size_t>(t) / row_blocks;
    const size_t r0 = (static_cast<size_t>(t) % row_blocks) * RB;
    const size_t rows = std::min(RB, m - r0);
    const size_t j0 = strip < wide ? strip * JB : wide * JB + (strip - wide) * JN;
    const T* ini = init ? init + (init_ld ? r0 * init_ld : 0) + j0 : nullptr;
    if (strip < wide) {
      gemm_tile<T, RB, JB>(a + r0 * q, q, b + j0, p, c + r0 * p + j0, p, ini, init_ld, q, rows, JB);
    } else {
      const size_t cols = strip < wide + narrow ? JN : tail;
      gemm_tile<T, RB, JN>(a + r0 * q, q, b + j0, p, c + r0 * p + j0, p, ini, init_ld, q, rows,
                           cols);
    }
  }
}

template <class T>
std::vector<T> transpose(const T* x, size_t rows, size_t cols) {
  std::vector<T> t(rows * cols);
#pragma omp parallel for schedule(static)
  for (index_t c = 0; c < static_cast<index_t>(cols); ++c)
    for (size_t r = 0; r < rows; ++r) t[c * rows + r] = x[r * cols + c];
  return t;
}

}  // namespace detail

// y[n, out] = x[n, in] * w[in, out] + b
template <class T>
void dense_forward(const T* x, const T* w, const T* b, T* y, size_t n, size_t in, size_t out) {
  detail::gemm(x, w, y, n, in, out, b, 0);
}

// dx[n, in] = dy[n, out] * w^T
template <class T>
void dense_backward_input(const T* dy, const T* w, T* dx, size_t n, size_t in, size_t out) {
  const auto wt = detail::transpose(w, in, out);
  detail::gemm(dy, wt.data(), dx, n, out, in, static_cast<const T*>(nullptr), 0);
}

// dw[in, out] += x^T * dy, db[out] += column sums of dy
template <class T>
void dense_backward_params(const T* x, const T* dy, T* dw, T* db, size_t n, size_t in,
                           size_t out) {
  const auto xt = detail::transpose(x, n, in);
  detail::gemm(xt.data(), dy, dw, in, n, out, static_cast<const T*>(dw), out);
  if (db) {
    for (size_t r = 0; r < n; ++r) {
      const T* dyr = dy + r * out;
#pragma omp simd
      for (size_t j = 0; j < out; ++j) db[j] += dyr[j];
    }
  }
}

template <class T>
void layer_norm_forward(const T* x, const T* gain, const T* bias, T* y, double* mean,
                        double* rstd, size_t n, size_t f) {
#pragma omp parallel for schedule(static)
  for (index_t r = 0; r < static_cast<index_t>(n); ++r) {
    const T* xr = x + r * f;
    double m = 0;
    for (size_t j = 0; j < f; ++j) m += xr[j];
    m /= static_cast<double>(f);
    double v = 0;
    for (size_t j = 0; j < f; ++j) v += (xr[j] - m) * (xr[j] - m);
    v /= static_cast<double>(f);
    const double s = 1.0 / std::sqrt(v + kLayerNormEps);
    mean[r] = m;
    rstd[r] = s;
    T* yr = y + r * f;
    for (size_t j = 0; j < f; ++j) yr[j] = static_cast<T>(gain[j] * ((xr[j] - m) * s) + bias[j]);
  }
}

template <class T>
void layer_norm_backward(const T* x, const T* dy, const T* gain, const double* mean,
                         const double* rstd, T* dx, T* dgain, T* dbias, size_t n, size_t f) {
  const double inv_f = 1.0 / static_cast<double>(f);
#pragma omp parallel for schedule(static)
  for (index_t r = 0; r < static_cast<index_t>(n); ++r) {
    const T* xr = x + r * f;
    const T* dyr = dy + r * f;
    double sum_g = 0, sum_gx = 0;
    for (size_t j = 0; j < f; ++j) {
      const double xhat = (xr[j] - mean[r]) * rstd[r];
      const double g = static_cast<double>(dyr[j]) * gain[j];
      sum_g += g;
      sum_gx += g * xhat;
    }
    for (size_t j = 0; j < f; ++j) {
      const double xhat = (xr[j] - mean[r]) * rstd[r];
      const double g = static_cast<double>(dyr[j]) * gain[j];
      dx[r * f + j] = static_cast<T>(rstd[r] * (g - sum_g * inv_f - xhat * sum_gx * inv_f));
    }
  }
  // Parameter gradients reduce over rows; keep the row order fixed.
  for (size_t r = 0; r < n; ++r) {
    const T* xr = x + r * f;
    const T* dyr = dy + r * f;
    for (size_t j = 0; j < f; ++j) {
      const double xhat = (xr[j] - mean[r]) * rstd[r];
      dgain[j] += static_cast<T>(dyr[j] * xhat);
      dbias[j] += dyr[j];
    }
  }
}

template <class T>
void relu_forward(const T* x, T* y, size_t count) {
#pragma omp parallel for simd schedule(static)
  for (index_t i = 0; i < static_cast<index_t>(count); ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
}

template <class T>
void relu_backward(const T* x, const T* dy, T* dx, size_t count) {
#pragma omp parallel for simd schedule(static)
  for (index_t i = 0; i < static_cast<index_t>(count); ++i) dx[i] = x[i] > T(0) ? dy[i] : T(0);
}

// Unfolds a batch of HWC images into patch rows ordered (ky, kx, c):
// cols is [n * out_h * out_w, kernel * kernel * in_c].
template <class T>
void im2col(const T* x, T* cols, size_t n, const ConvGeometry& g) {
  const size_t oh = g.out_h(), ow = g.out_w(), patch = g.patch();
#pragma omp parallel for schedule(static)
  for (index_t s = 0; s < static_cast<index_t>(n); ++s) {
    const T* xs = x + s * g.in_size();
    for (size_t oy = 0; oy < oh; ++oy) {
      for (size_t ox = 0; ox < ow; ++ox) {
        T* c = cols + ((s * oh + oy) * ow + ox) * patch;
        for (size_t ky = 0; ky < g.kernel; ++ky) {
          const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
          for (size_t kx = 0; kx < g.kernel; ++kx) {
            const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
            T* dst = c + (ky * g.kernel + kx) * g.in_c;
            if (iy < 0 || iy >= static_cast<long>(g.in_h) || ix < 0 ||
                ix >= static_cast<long>(g.in_w)) {
              for (size_t ic = 0; ic < g.in_c; ++ic) dst[ic] = T(0);
            } else {
              const T* src = xs + (iy * g.in_w + ix) * g.in_c;
              for (size_t ic = 0; ic < g.in_c; ++ic) dst[ic] = src[ic];
            }
          }
        }
      }
    }
  }
}

// Adjoint of im2col: overwrites dx with the folded patch gradients.
template <class T>
void col2im(const T* dcols, T* dx, size_t n, const ConvGeometry& g) {
  const size_t oh = g.out_h(), ow = g.out_w(), patch = g.patch();
#pragma omp parallel for schedule(static)
  for (index_t s = 0; s < static_cast<index_t>(n); ++s) {
    T* dxs = dx + s * g.in_size();
    for (size_t i = 0; i < g.in_size(); ++i) dxs[i] = T(0);
    for (size_t oy = 0; oy < oh; ++oy) {
      for (size_t ox = 0; ox < ow; ++ox) {
        const T* c = dcols + ((s * oh + oy) * ow + ox) * patch;
        for (size_t ky = 0; ky < g.kernel; ++ky) {
          const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
          if (iy < 0 || iy >= static_cast<long>(g.in_h)) continue;
          for (size_t kx = 0; kx < g.kernel; ++kx) {
            const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
            if (ix < 0 || ix >= static_cast<long>(g.in_w)) continue;
            const T* src = c + (ky * g.kernel + kx) * g.in_c;
            T* dst = dxs + (iy * g.in_w + ix) * g.in_c;
            for (size_t ic = 0; ic < g.in_c; ++ic) dst[ic] += src[ic];
          }
        }
      }
    }
  }
}

// Convolution as im2col followed by a dense product; `cols` is caller-owned
// scratch of n * out_h * out_w * patch elements and is left holding the patches.
template <class T>
void conv2d_forward(const T* x, const T* w, const T* b, T* y, size_t n, const ConvGeometry& g,
                    std::vector<T>& cols) {
  const size_t rows = n * g.out_h() * g.out_w();
  cols.resize(rows * g.patch());
  im2col(x, cols.data(), n, g);
  dense_forward(cols.data(), w, b, y, rows, g.patch(), g.out_c);
}

// `cols` must hold the patches from the matching forward call.
template <class T>
void conv2d_backward(const std::vector<T>& cols, const T* w, const T* dy, T* dx, T* dw, T* db,
                     size_t n, const ConvGeometry& g) {
  const size_t rows = n * g.out_h() * g.out_w();
  dense_backward_params(cols.data(), dy, dw, db, rows, g.patch(), g.out_c);
  if (dx) {
    std::vector<T> dcols(rows * g.patch());
    dense_backward_input(dy, w, dcols.data(), rows, g.patch(), g.out_c);
    col2im(dcols.data(), dx, n, g);
  }
}

template <class T>
void inner_products(const T* a, const T* b, T* logits, size_t n, size_t m, size_t d) {
#pragma omp parallel for schedule(static)
  for (index_t i = 0; i < static_cast<index_t>(n); ++i) {
    const T* ai = a + i * d;
    for (size_t j = 0; j < m; ++j) {
      const T* bj = b + j * d;
      T acc = 0;
#pragma omp simd reduction(+ : acc)
      for (size_t k = 0; k < d; ++k) acc += ai[k] * bj[k];
      logits[i * m + j] = acc;
    }
  }
}

}  // namespace scrl::kernels
