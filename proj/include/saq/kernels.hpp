#pragma once

#include <cstddef>

namespace saq::kernels {

// Runtime switch between the serial reference kernels and the OpenMP ones.
// Serial is the default; tests and deterministic runs keep it that way.
// The OpenMP kernels parallelize over disjoint output slots with a fixed
// inner accumulation order, so both paths produce bit-identical results.
void set_parallel(bool enabled);
bool parallel_enabled();
int max_threads();

// Geometry for 2-D cross-correlation with zero padding.
struct Conv2dGeom {
  int batch = 0;
  int in_channels = 0;
  int in_h = 0;
  int in_w = 0;
  int out_channels = 0;
  int kernel = 0;
  int stride = 1;
  int pad = 0;
  int out_h = 0;
  int out_w = 0;
};

// C[m x n] = op(A) * op(B), where op transposes when the flag is set.
// A is m x k after op, B is k x n after op. C is overwritten.
void gemm(bool trans_a, bool trans_b, int m, int n, int k, const double* a,
          const double* b, double* c);

// y[n, f, oh, ow] = sum_{c,kh,kw} x[n, c, ih, iw] * w[f, c, kh, kw]
void conv2d_forward(const Conv2dGeom& g, const double* x, const double* w, double* y);

// dx from dy and w.
void conv2d_backward_input(const Conv2dGeom& g, const double* dy, const double* w,
                           double* dx);

// dw from dy and x.
void conv2d_backward_weight(const Conv2dGeom& g, const double* dy, const double* x,
                            double* dw);

namespace detail {
// Serial reference implementations, kept callable for equivalence tests
// and the kernel benchmark.
void gemm_serial(bool trans_a, bool trans_b, int m, int n, int k, const double* a,
                 const double* b, double* c);
void conv2d_forward_serial(const Conv2dGeom& g, const double* x, const double* w,
                           double* y);
void conv2d_backward_input_serial(const Conv2dGeom& g, const double* dy,
                                  const double* w, double* dx);
void conv2d_backward_weight_serial(const Conv2dGeom& g, const double* dy,
                                   const double* x, double* dw);

// OpenMP implementations.
void gemm_omp(bool trans_a, bool trans_b, int m, int n, int k, const double* a,
              const double* b, double* c);
void conv2d_forward_omp(const Conv2dGeom& g, const double* x, const double* w,
                        double* y);
void conv2d_backward_input_omp(const Conv2dGeom& g, const double* dy, const double* w,
                               double* dx);
void conv2d_backward_weight_omp(const Conv2dGeom& g, const double* dy, const double* x,
                                double* dw);
}  // namespace detail

}  // namespace saq::kernels
