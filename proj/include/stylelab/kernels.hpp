#pragma once

#include <cstdint>

// Hot compute loops. The functions in stylelab::kernels are OpenMP-parallel;
// stylelab::kernels::ref holds naive serial implementations with the same
// per-element accumulation order, so results are bit-identical between the
// two (the build disables FP contraction). The ref versions back the kernel
// tests and the bench_kernels tool.
namespace stylelab::kernels {

// Geometry of a 2-D cross-correlation. Weights are laid out
// cout x cin x k x k, activations channel-major (c x h x w), all row-major.
// Padding is symmetric zero padding; output extents use the floor convention.
struct ConvGeom {
  int64_t cin = 0, h = 0, w = 0;
  int64_t cout = 0, k = 1;
  int64_t stride = 1;
  int64_t pad = 0;

  int64_t oh() const { return (h + 2 * pad - k) / stride + 1; }
  int64_t ow() const { return (w + 2 * pad - k) / stride + 1; }
};

template <typename T>
void conv2d_fwd(const ConvGeom& g, const T* x, const T* w, const T* bias, T* y);

template <typename T>
void conv2d_bwd_input(const ConvGeom& g, const T* gy, const T* w, T* gx);

template <typename T>
void conv2d_bwd_weight(const ConvGeom& g, const T* gy, const T* x, T* gw);

template <typename T>
void conv2d_bwd_bias(const ConvGeom& g, const T* gy, T* gb);

// c[m x n] = a[m x k] * b[k x n]
template <typename T>
void matmul(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n);

namespace ref {

template <typename T>
void conv2d_fwd(const ConvGeom& g, const T* x, const T* w, const T* bias, T* y);

template <typename T>
void conv2d_bwd_input(const ConvGeom& g, const T* gy, const T* w, T* gx);

template <typename T>
void conv2d_bwd_weight(const ConvGeom& g, const T* gy, const T* x, T* gw);

template <typename T>
void conv2d_bwd_bias(const ConvGeom& g, const T* gy, T* gb);

template <typename T>
void matmul(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n);

}  // namespace ref

}  // namespace stylelab::kernels
