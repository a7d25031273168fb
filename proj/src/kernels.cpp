#include "stylelab/kernels.hpp"

#include <algorithm>
#include <cstring>

namespace stylelab::kernels {

namespace {

inline int64_t ceil_div(int64_t a, int64_t b) {
  return a >= 0 ? (a + b - 1) / b : -((-a) / b);
}

inline int64_t floor_div(int64_t a, int64_t b) {
  return a >= 0 ? a / b : -((-a + b - 1) / b);
}

// Range of output coordinates o such that o*stride - pad + kk lands inside
// [0, extent).
inline void valid_out_range(int64_t kk, int64_t pad, int64_t stride,
                            int64_t extent, int64_t out_extent, int64_t* lo,
                            int64_t* hi) {
  *lo = std::max<int64_t>(0, ceil_div(pad - kk, stride));
  *hi = std::min(out_extent, floor_div(extent - 1 - kk + pad, stride) + 1);
}

}  // namespace

template <typename T>
void conv2d_fwd(const ConvGeom& g, const T* x, const T* w, const T* bias,
                T* y) {
  const int64_t oh = g.oh(), ow = g.ow();
  const int64_t in_plane = g.h * g.w, out_plane = oh * ow;
#pragma omp parallel for schedule(static)
  for (int64_t oc = 0; oc < g.cout; ++oc) {
    T* yc = y + oc * out_plane;
    const T b = bias ? bias[oc] : T(0);
    for (int64_t i = 0; i < out_plane; ++i) yc[i] = b;
    for (int64_t ic = 0; ic < g.cin; ++ic) {
      const T* xc = x + ic * in_plane;
      const T* wk = w + ((oc * g.cin + ic) * g.k) * g.k;
      for (int64_t kh = 0; kh < g.k; ++kh) {
        int64_t oh_lo, oh_hi;
        valid_out_range(kh, g.pad, g.stride, g.h, oh, &oh_lo, &oh_hi);
        for (int64_t kw = 0; kw < g.k; ++kw) {
          const T wv = wk[kh * g.k + kw];
          int64_t ow_lo, ow_hi;
          valid_out_range(kw, g.pad, g.stride, g.w, ow, &ow_lo, &ow_hi);
          for (int64_t o = oh_lo; o < oh_hi; ++o) {
            const int64_t ih = o * g.stride - g.pad + kh;
            T* yrow = yc + o * ow;
            const T* xrow = xc + ih * g.w - g.pad + kw;
            if (g.stride == 1) {
              for (int64_t p = ow_lo; p < ow_hi; ++p) yrow[p] += wv * xrow[p];
            } else {
              for (int64_t p = ow_lo; p < ow_hi; ++p)
                yrow[p] += wv * xrow[p * g.stride];
            }
          }
        }
      }
    }
  }
}

template <typename T>
void conv2d_bwd_input(const ConvGeom& g, const T* gy, const T* w, T* gx) {
  const int64_t oh = g.oh(), ow = g.ow();
  const int64_t in_plane = g.h * g.w, out_plane = oh * ow;
#pragma omp parallel for schedule(static)
  for (int64_t ic = 0; ic < g.cin; ++ic) {
    T* gxc = gx + ic * in_plane;
    std::memset(gxc, 0, sizeof(T) * in_plane);
    for (int64_t oc = 0; oc < g.cout; ++oc) {
      const T* gyc = gy + oc * out_plane;
      const T* wk = w + ((oc * g.cin + ic) * g.k) * g.k;
      for (int64_t kh = 0; kh < g.k; ++kh) {
        int64_t oh_lo, oh_hi;
        valid_out_range(kh, g.pad, g.stride, g.h, oh, &oh_lo, &oh_hi);
        for (int64_t kw = 0; kw < g.k; ++kw) {
          const T wv = wk[kh * g.k + kw];
          int64_t ow_lo, ow_hi;
          valid_out_range(kw, g.pad, g.stride, g.w, ow, &ow_lo, &ow_hi);
          for (int64_t o = oh_lo; o < oh_hi; ++o) {
            const int64_t ih = o * g.stride - g.pad + kh;
            const T* gyrow = gyc + o * ow;
            T* gxrow = gxc + ih * g.w - g.pad + kw;
            if (g.stride == 1) {
              for (int64_t p = ow_lo; p < ow_hi; ++p) gxrow[p] += wv * gyrow[p];
            } else {
              for (int64_t p = ow_lo; p < ow_hi; ++p)
                gxrow[p * g.stride] += wv * gyrow[p];
            }
          }
        }
      }
    }
  }
}

template <typename T>
void conv2d_bwd_weight(const ConvGeom& g, const T* gy, const T* x, T* gw) {
  const int64_t oh = g.oh(), ow = g.ow();
  const int64_t in_plane = g.h * g.w, out_plane = oh * ow;
#pragma omp parallel for schedule(static)
  for (int64_t oc = 0; oc < g.cout; ++oc) {
    const T* gyc = gy + oc * out_plane;
    for (int64_t ic = 0; ic < g.cin; ++ic) {
      const T* xc = x + ic * in_plane;
      T* wk = gw + ((oc * g.cin + ic) * g.k) * g.k;
      for (int64_t kh = 0; kh < g.k; ++kh) {
        int64_t oh_lo, oh_hi;
        valid_out_range(kh, g.pad, g.stride, g.h, oh, &oh_lo, &oh_hi);
        for (int64_t kw = 0; kw < g.k; ++kw) {
          int64_t ow_lo, ow_hi;
          valid_out_range(kw, g.pad, g.stride, g.w, ow, &ow_lo, &ow_hi);
          T acc = 0;
          for (int64_t o = oh_lo; o < oh_hi; ++o) {
            const int64_t ih = o * g.stride - g.pad + kh;
            const T* gyrow = gyc + o * ow;
            const T* xrow = xc + ih * g.w - g.pad + kw;
            if (g.stride == 1) {
              for (int64_t p = ow_lo; p < ow_hi; ++p) acc += gyrow[p] * xrow[p];
            } else {
              for (int64_t p = ow_lo; p < ow_hi; ++p)
                acc += gyrow[p] * xrow[p * g.stride];
            }
          }
          wk[kh * g.k + kw] = acc;
        }
      }
    }
  }
}

template <typename T>
void conv2d_bwd_bias(const ConvGeom& g, const T* gy, T* gb) {
  const int64_t out_plane = g.oh() * g.ow();
#pragma omp parallel for schedule(static)
  for (int64_t oc = 0; oc < g.cout; ++oc) {
    T acc = 0;
    const T* gyc = gy + oc * out_plane;
    for (int64_t i = 0; i < out_plane; ++i) acc += gyc[i];
    gb[oc] = acc;
  }
}

template <typename T>
void matmul(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n) {
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < m; ++i) {
    const T* arow = a + i * k;
    T* crow = c + i * n;
    for (int64_t j = 0; j < n; ++j) crow[j] = T(0);
    for (int64_t kk = 0; kk < k; ++kk) {
      const T av = arow[kk];
      const T* brow = b + kk * n;
      for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

#define STYLELAB_INSTANTIATE(T)                                              \
  template void conv2d_fwd<T>(const ConvGeom&, const T*, const T*, const T*, \
                              T*);                                           \
  template void conv2d_bwd_input<T>(const ConvGeom&, const T*, const T*,     \
                                    T*);                                     \
  template void conv2d_bwd_weight<T>(const ConvGeom&, const T*, const T*,    \
                                     T*);                                    \
  template void conv2d_bwd_bias<T>(const ConvGeom&, const T*, T*);           \
  template void matmul<T>(const T*, const T*, T*, int64_t, int64_t, int64_t);

STYLELAB_INSTANTIATE(float)
STYLELAB_INSTANTIATE(double)
#undef STYLELAB_INSTANTIATE

}  // namespace stylelab::kernels
