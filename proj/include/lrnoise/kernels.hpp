#ifndef LRNOISE_KERNELS_HPP
#define LRNOISE_KERNELS_HPP

#include <cstdint>

namespace lrnoise::kern {

/**
 * Dense inner-loop kernels behind the autodiff graph.
 *
 * Every kernel exists twice: a plain serial reference under kern::serial and
 * an OpenMP variant under kern::omp. Both share the same per-element
 * summation order, and the OpenMP partitioning never splits the accumulation
 * of a single output element across threads, so the two variants produce
 * bit-identical results (tests/test_kernels.cpp asserts this; the
 * bench_kernels tool times them against each other).
 *
 * Geometry conventions:
 *   conv2d     x[B,Cin,H,W] * w[Cout,Cin,KH,KW] -> y[B,Cout,HO,WO]
 *              HO = (H + 2*pad - KH)/stride + 1, likewise WO.
 *   matmul     C[M,N] = A[M,K] * B[K,N], row-major.
 */
struct Conv2dGeom {
    int batch, cin, h, w;
    int cout, kh, kw;
    int stride, pad;
    int ho() const { return (h + 2 * pad - kh) / stride + 1; }
    int wo() const { return (w + 2 * pad - kw) / stride + 1; }
};

namespace serial {
void matmul(const double* a, const double* b, double* c, int m, int k, int n);
// C[M,N] = A[M,K] * B[N,K]^T and C[K2,N] = A[M,K2]^T * B[M,N] (gradient paths)
void matmul_nt(const double* a, const double* b, double* c, int m, int k, int n);
void matmul_tn(const double* a, const double* b, double* c, int m, int k, int n);
void conv2d_fwd(const double* x, const double* w, double* y, const Conv2dGeom& g);
void conv2d_bwd_data(const double* gy, const double* w, double* gx, const Conv2dGeom& g);
void conv2d_bwd_weights(const double* gy, const double* x, double* gw, const Conv2dGeom& g);
void avg_pool2d_fwd(const double* x, double* y, int bc, int h, int w, int k);
void avg_pool2d_bwd(const double* gy, double* gx, int bc, int h, int w, int k);
}  // namespace serial

namespace omp {
void matmul(const double* a, const double* b, double* c, int m, int k, int n);
void matmul_nt(const double* a, const double* b, double* c, int m, int k, int n);
void matmul_tn(const double* a, const double* b, double* c, int m, int k, int n);
void conv2d_fwd(const double* x, const double* w, double* y, const Conv2dGeom& g);
void conv2d_bwd_data(const double* gy, const double* w, double* gx, const Conv2dGeom& g);
void conv2d_bwd_weights(const double* gy, const double* x, double* gw, const Conv2dGeom& g);
void avg_pool2d_fwd(const double* x, double* y, int bc, int h, int w, int k);
void avg_pool2d_bwd(const double* gy, double* gx, int bc, int h, int w, int k);
}  // namespace omp

/// Process-wide backend switch. Defaults to the OpenMP variants when the
/// library was built with OpenMP; flipping it routes every dispatch below
/// through the serial reference.
void set_parallel(bool enabled);
bool parallel_enabled();

void matmul(const double* a, const double* b, double* c, int m, int k, int n);
void matmul_nt(const double* a, const double* b, double* c, int m, int k, int n);
void matmul_tn(const double* a, const double* b, double* c, int m, int k, int n);
void conv2d_fwd(const double* x, const double* w, double* y, const Conv2dGeom& g);
void conv2d_bwd_data(const double* gy, const double* w, double* gx, const Conv2dGeom& g);
void conv2d_bwd_weights(const double* gy, const double* x, double* gw, const Conv2dGeom& g);
void avg_pool2d_fwd(const double* x, double* y, int bc, int h, int w, int k);
void avg_pool2d_bwd(const double* gy, double* gx, int bc, int h, int w, int k);

}  // namespace lrnoise::kern

#endif
