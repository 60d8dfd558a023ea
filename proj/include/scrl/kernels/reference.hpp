#pragma once

// Straightforward serial kernels. These are the readable definitions the
// parallel versions in parallel.hpp are tested and benchmarked against.

#include <cmath>
#include <cstddef>

#include "scrl/kernels/geometry.hpp"

namespace scrl::kernels::reference {

// y[n,out] = x[n,in] * w[in,out] + b[out]; b may be null.
template <class T>
void dense_forward(const T* x, const T* w, const T* b, T* y, size_t n, size_t in, size_t out) {
  for (size_t r = 0; r < n; ++r) {
    for (size_t j = 0; j < out; ++j) {
      T acc = b ? b[j] : T(0);
      for (size_t k = 0; k < in; ++k) acc += x[r * in + k] * w[k * out + j];
      y[r * out + j] = acc;
    }
  }
}

// dx[n,in] = dy[n,out] * w[in,out]^T
template <class T>
void dense_backward_input(const T* dy, const T* w, T* dx, size_t n, size_t in, size_t out) {
  for (size_t r = 0; r < n; ++r) {
    for (size_t k = 0; k < in; ++k) {
      T acc = 0;
      for (size_t j = 0; j < out; ++j) acc += dy[r * out + j] * w[k * out + j];
      dx[r * in + k] = acc;
    }
  }
}

// dw[in,out] += x^T dy; db[out] += column sums of dy (db may be null).
template <class T>
void dense_backward_params(const T* x, const T* dy, T* dw, T* db, size_t n, size_t in,
                           size_t out) {
  for (size_t k = 0; k < in; ++k) {
    for (size_t j = 0; j < out; ++j) {
      T acc = 0;
      for (size_t r = 0; r < n; ++r) acc += x[r * in + k] * dy[r * out + j];
      dw[k * out + j] += acc;
    }
  }
  if (db) {
    for (size_t j = 0; j < out; ++j) {
      T acc = 0;
      for (size_t r = 0; r < n; ++r) acc += dy[r * out + j];
      db[j] += acc;
    }
  }
}

// Row-wise layer normalization; saves per-row mean and reciprocal std.
template <class T>
void layer_norm_forward(const T* x, const T* gain, const T* bias, T* y, double* mean,
                        double* rstd, size_t n, size_t f) {
  for (size_t r = 0; r < n; ++r) {
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
    for (size_t j = 0; j < f; ++j) {
      y[r * f + j] = static_cast<T>(gain[j] * ((xr[j] - m) * s) + bias[j]);
    }
  }
}

template <class T>
void layer_norm_backward(const T* x, const T* dy, const T* gain, const double* mean,
                         const double* rstd, T* dx, T* dgain, T* dbias, size_t n, size_t f) {
  for (size_t r = 0; r < n; ++r) {
    const T* xr = x + r * f;
    const T* dyr = dy + r * f;
    double sum_g = 0, sum_gx = 0;
    for (size_t j = 0; j < f; ++j) {
      const double xhat = (xr[j] - mean[r]) * rstd[r];
      const double g = static_cast<double>(dyr[j]) * gain[j];
      sum_g += g;
      sum_gx += g * xhat;
    }
    const double inv_f = 1.0 / static_cast<double>(f);
    for (size_t j = 0; j < f; ++j) {
      const double xhat = (xr[j] - mean[r]) * rstd[r];
      const double g = static_cast<double>(dyr[j]) * gain[j];
      dx[r * f + j] = static_cast<T>(rstd[r] * (g - sum_g * inv_f - xhat * sum_gx * inv_f));
      dgain[j] += static_cast<T>(dyr[j] * xhat);
      dbias[j] += dyr[j];
    }
  }
}

template <class T>
void relu_forward(const T* x, T* y, size_t count) {
  for (size_t i = 0; i < count; ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
}

template <class T>
void relu_backward(const T* x, const T* dy, T* dx, size_t count) {
  for (size_t i = 0; i < count; ++i) dx[i] = x[i] > T(0) ? dy[i] : T(0);
}

// Direct convolution over a batch of HWC images. w is [k][k][in_c][out_c].
template <class T>
void conv2d_forward(const T* x, const T* w, const T* b, T* y, size_t n, const ConvGeometry& g) {
  const size_t oh = g.out_h(), ow = g.out_w();
  for (size_t s = 0; s < n; ++s) {
    const T* xs = x + s * g.in_size();
    T* ys = y + s * g.out_size();
    for (size_t oy = 0; oy < oh; ++oy) {
      for (size_t ox = 0; ox < ow; ++ox) {
        for (size_t oc = 0; oc < g.out_c; ++oc) {
          T acc = b[oc];
          for (size_t ky = 0; ky < g.kernel; ++ky) {
            const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
            if (iy < 0 || iy >= static_cast<long>(g.in_h)) continue;
            for (size_t kx = 0; kx < g.kernel; ++kx) {
              const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
              if (ix < 0 || ix >= static_cast<long>(g.in_w)) continue;
              for (size_t ic = 0; ic < g.in_c; ++ic) {
                acc += xs[(iy * g.in_w + ix) * g.in_c + ic] *
                       w[((ky * g.kernel + kx) * g.in_c + ic) * g.out_c + oc];
              }
            }
          }
          ys[(oy * ow + ox) * g.out_c + oc] = acc;
        }
      }
    }
  }
}

// Accumulates dw, db and overwrites dx (dx may be null).
template <class T>
void conv2d_backward(const T* x, const T* w, const T* dy, T* dx, T* dw, T* db, size_t n,
                     const ConvGeometry& g) {
  const size_t oh = g.out_h(), ow = g.out_w();
  if (dx) {
    for (size_t i = 0; i < n * g.in_size(); ++i) dx[i] = T(0);
  }
  for (size_t s = 0; s < n; ++s) {
    const T* xs = x + s * g.in_size();
    const T* dys = dy + s * g.out_size();
    T* dxs = dx ? dx + s * g.in_size() : nullptr;
    for (size_t oy = 0; oy < oh; ++oy) {
      for (size_t ox = 0; ox < ow; ++ox) {
        for (size_t oc = 0; oc < g.out_c; ++oc) {
          const T d = dys[(oy * ow + ox) * g.out_c + oc];
          db[oc] += d;
          for (size_t ky = 0; ky < g.kernel; ++ky) {
            const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
            if (iy < 0 || iy >= static_cast<long>(g.in_h)) continue;
            for (size_t kx = 0; kx < g.kernel; ++kx) {
              const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
              if (ix < 0 || ix >= static_cast<long>(g.in_w)) continue;
              for (size_t ic = 0; ic < g.in_c; ++ic) {
                const size_t xi = (iy * g.in_w + ix) * g.in_c + ic;
                const size_t wi = ((ky * g.kernel + kx) * g.in_c + ic) * g.out_c + oc;
                dw[wi] += xs[xi] * d;
                if (dxs) dxs[xi] += w[wi] * d;
              }
            }
          }
        }
      }
    }
  }
}

// logits[n,m] = a[n,d] * b[m,d]^T
template <class T>
void inner_products(const T* a, const T* b, T* logits, size_t n, size_t m, size_t d) {
  for (size_t i = 0; i < n; ++i) {
    for (size_t j = 0; j < m; ++j) {
      T acc = 0;
      for (size_t k = 0; k < d; ++k) acc += a[i * d + k] * b[j * d + k];
      logits[i * m + j] = acc;
    }
  }
}

}  // namespace scrl::kernels::reference
