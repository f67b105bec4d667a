#include "saq/kernels.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace saq::kernels {

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

namespace detail {

// Each parallel loop owns disjoint output slots and keeps the serial
// accumulation order inside a slot, so results are bit-identical to the
// serial reference regardless of thread count.

void gemm_omp(bool trans_a, bool trans_b, int m, int n, int k, const double* a,
              const double* b, double* c) {
  const int lda = trans_a ? m : k;
  const int ldb = trans_b ? k : n;
#pragma omp parallel for schedule(static)
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) {
      double acc = 0.0;
      for (int p = 0; p < k; ++p) {
        const double av = trans_a ? a[p * lda + i] : a[i * lda + p];
        const double bv = trans_b ? b[j * ldb + p] : b[p * ldb + j];
        acc += av * bv;
      }
      c[i * n + j] = acc;
    }
  }
}

void conv2d_forward_omp(const Conv2dGeom& g, const double* x, const double* w,
                        double* y) {
#pragma omp parallel for collapse(2) schedule(static)
  for (int n = 0; n < g.batch; ++n) {
    for (int f = 0; f < g.out_channels; ++f) {
      for (int oh = 0; oh < g.out_h; ++oh) {
        for (int ow = 0; ow < g.out_w; ++ow) {
          double acc = 0.0;
          for (int c = 0; c < g.in_channels; ++c) {
            for (int kh = 0; kh < g.kernel; ++kh) {
              const int ih = oh * g.stride + kh - g.pad;
              if (ih < 0 || ih >= g.in_h) continue;
              for (int kw = 0; kw < g.kernel; ++kw) {
                const int iw = ow * g.stride + kw - g.pad;
                if (iw < 0 || iw >= g.in_w) continue;
                acc += x[((n * g.in_channels + c) * g.in_h + ih) * g.in_w + iw] *
                       w[((f * g.in_channels + c) * g.kernel + kh) * g.kernel + kw];
              }
            }
          }
          y[((n * g.out_channels + f) * g.out_h + oh) * g.out_w + ow] = acc;
        }
      }
    }
  }
}

void conv2d_backward_input_omp(const Conv2dGeom& g, const double* dy, const double* w,
                               double* dx) {
#pragma omp parallel for collapse(2) schedule(static)
  for (int n = 0; n < g.batch; ++n) {
    for (int c = 0; c < g.in_channels; ++c) {
      for (int ih = 0; ih < g.in_h; ++ih) {
        for (int iw = 0; iw < g.in_w; ++iw) {
          double acc = 0.0;
          for (int f = 0; f < g.out_channels; ++f) {
            for (int kh = 0; kh < g.kernel; ++kh) {
              const int oh_num = ih + g.pad - kh;
              if (oh_num < 0 || oh_num % g.stride != 0) continue;
              const int oh = oh_num / g.stride;
              if (oh >= g.out_h) continue;
              for (int kw = 0; kw < g.kernel; ++kw) {
                const int ow_num = iw + g.pad - kw;
                if (ow_num < 0 || ow_num % g.stride != 0) continue;
                const int ow = ow_num / g.stride;
                if (ow >= g.out_w) continue;
                acc += dy[((n * g.out_channels + f) * g.out_h + oh) * g.out_w + ow] *
                       w[((f * g.in_channels + c) * g.kernel + kh) * g.kernel + kw];
              }
            }
          }
          dx[((n * g.in_channels + c) * g.in_h + ih) * g.in_w + iw] = acc;
        }
      }
    }
  }
}

void conv2d_backward_weight_omp(const Conv2dGeom& g, const double* dy, const double* x,
                                double* dw) {
#pragma omp parallel for collapse(2) schedule(static)
  for (int f = 0; f < g.out_channels; ++f) {
    for (int c = 0; c < g.in_channels; ++c) {
      for (int kh = 0; kh < g.kernel; ++kh) {
        for (int kw = 0; kw < g.kernel; ++kw) {
          double acc = 0.0;
          for (int n = 0; n < g.batch; ++n) {
            for (int oh = 0; oh < g.out_h; ++oh) {
              const int ih = oh * g.stride + kh - g.pad;
              if (ih < 0 || ih >= g.in_h) continue;
              for (int ow = 0; ow < g.out_w; ++ow) {
                const int iw = ow * g.stride + kw - g.pad;
                if (iw < 0 || iw >= g.in_w) continue;
                acc += dy[((n * g.out_channels + f) * g.out_h + oh) * g.out_w + ow] *
                       x[((n * g.in_channels + c) * g.in_h + ih) * g.in_w + iw];
              }
            }
          }
          dw[((f * g.in_channels + c) * g.kernel + kh) * g.kernel + kw] = acc;
        }
      }
    }
  }
}

}  // namespace detail

}  // namespace saq::kernels
