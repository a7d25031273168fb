#include "stylelab/kernels.hpp"

// Naive per-element loops. Kept as the ground truth the parallel kernels are
// tested against; accumulation order per output element matches the parallel
// versions exactly.
namespace stylelab::kernels::ref {

template <typename T>
void conv2d_fwd(const ConvGeom& g, const T* x, const T* w, const T* bias,
                T* y) {
  const int64_t oh = g.oh(), ow = g.ow();
  for (int64_t oc = 0; oc < g.cout; ++oc) {
    for (int64_t o = 0; o < oh; ++o) {
      for (int64_t p = 0; p < ow; ++p) {
        T acc = bias ? bias[oc] : T(0);
        for (int64_t ic = 0; ic < g.cin; ++ic) {
          for (int64_t kh = 0; kh < g.k; ++kh) {
            const int64_t ih = o * g.stride - g.pad + kh;
            if (ih < 0 || ih >= g.h) continue;
            for (int64_t kw = 0; kw < g.k; ++kw) {
              const int64_t iw = p * g.stride - g.pad + kw;
              if (iw < 0 || iw >= g.w) continue;
              acc += w[((oc * g.cin + ic) * g.k + kh) * g.k + kw] *
                     x[(ic * g.h + ih) * g.w + iw];
            }
          }
        }
        y[(oc * oh + o) * ow + p] = acc;
      }
    }
  }
}

template <typename T>
void conv2d_bwd_input(const ConvGeom& g, const T* gy, const T* w, T* gx) {
  const int64_t oh = g.oh(), ow = g.ow();
  for (int64_t ic = 0; ic < g.cin; ++ic) {
    for (int64_t ih = 0; ih < g.h; ++ih) {
      for (int64_t iw = 0; iw < g.w; ++iw) {
        T acc = 0;
        for (int64_t oc = 0; oc < g.cout; ++oc) {
          for (int64_t kh = 0; kh < g.k; ++kh) {
            const int64_t num_h = ih + g.pad - kh;
            if (num_h < 0 || num_h % g.stride != 0) continue;
            const int64_t o = num_h / g.stride;
            if (o >= oh) continue;
            for (int64_t kw = 0; kw < g.k; ++kw) {
              const int64_t num_w = iw + g.pad - kw;
              if (num_w < 0 || num_w % g.stride != 0) continue;
              const int64_t p = num_w / g.stride;
              if (p >= ow) continue;
              acc += w[((oc * g.cin + ic) * g.k + kh) * g.k + kw] *
                     gy[(oc * oh + o) * ow + p];
            }
          }
        }
        gx[(ic * g.h + ih) * g.w + iw] = acc;
      }
    }
  }
}

template <typename T>
void conv2d_bwd_weight(const ConvGeom& g, const T* gy, const T* x, T* gw) {
  const int64_t oh = g.oh(), ow = g.ow();
  for (int64_t oc = 0; oc < g.cout; ++oc) {
    for (int64_t ic = 0; ic < g.cin; ++ic) {
      for (int64_t kh = 0; kh < g.k; ++kh) {
        for (int64_t kw = 0; kw < g.k; ++kw) {
          T acc = 0;
          for (int64_t o = 0; o < oh; ++o) {
            const int64_t ih = o * g.stride - g.pad + kh;
            if (ih < 0 || ih >= g.h) continue;
            for (int64_t p = 0; p < ow; ++p) {
              const int64_t iw = p * g.stride - g.pad + kw;
              if (iw < 0 || iw >= g.w) continue;
              acc += gy[(oc * oh + o) * ow + p] * x[(ic * g.h + ih) * g.w + iw];
            }
          }
          gw[((oc * g.cin + ic) * g.k + kh) * g.k + kw] = acc;
        }
      }
    }
  }
}

template <typename T>
void conv2d_bwd_bias(const ConvGeom& g, const T* gy, T* gb) {
  const int64_t out_plane = g.oh() * g.ow();
  for (int64_t oc = 0; oc < g.cout; ++oc) {
    T acc = 0;
    for (int64_t i = 0; i < out_plane; ++i) acc += gy[oc * out_plane + i];
    gb[oc] = acc;
  }
}

template <typename T>
void matmul(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n) {
  for (int64_t i = 0; i < m; ++i) {
    for (int64_t j = 0; j < n; ++j) {
      T acc = 0;
      for (int64_t kk = 0; kk < k; ++kk) acc += a[i * k + kk] * b[kk * n + j];
      c[i * n + j] = acc;
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

}  // namespace stylelab::kernels::ref
