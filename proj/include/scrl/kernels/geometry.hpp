#pragma once

#include <cstddef>

namespace scrl::kernels {

// Square-kernel 2-D convolution over HWC images, cross-correlation, zero padding.
struct ConvGeometry {
  size_t in_h = 0, in_w = 0, in_c = 0;
  size_t kernel = 1, stride = 1, pad = 0;
  size_t out_c = 0;

  size_t out_h() const { return (in_h + 2 * pad - kernel) / stride + 1; }
  size_t out_w() const { return (in_w + 2 * pad - kernel) / stride + 1; }
  size_t patch() const { return kernel * kernel * in_c; }
  size_t in_size() const { return in_h * in_w * in_c; }
  size_t out_size() const { return out_h() * out_w() * out_c; }
};

inline constexpr double kLayerNormEps = 1e-5;

}  // namespace scrl::kernels
