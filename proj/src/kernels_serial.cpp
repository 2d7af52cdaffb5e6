#include "kernels_detail.hpp"
#include "lrnoise/kernels.hpp"

namespace lrnoise::kern {

namespace serial {

void matmul(const double* a, const double* b, double* c, int m, int k, int n) {
    for (int i = 0; i < m; ++i) detail::matmul_row(a, b, c, i, k, n);
}

void matmul_nt(const double* a, const double* b, double* c, int m, int k, int n) {
    for (int i = 0; i < m; ++i) detail::matmul_nt_row(a, b, c, i, k, n);
}

void matmul_tn(const double* a, const double* b, double* c, int m, int k, int n) {
    for (int i = 0; i < k; ++i) detail::matmul_tn_row(a, b, c, i, m, k, n);
}

void conv2d_fwd(const double* x, const double* w, double* y, const Conv2dGeom& g) {
    for (int b = 0; b < g.batch; ++b)
        for (int co = 0; co < g.cout; ++co) detail::conv2d_fwd_plane(x, w, y, g, b, co);
}

void conv2d_bwd_data(const double* gy, const double* w, double* gx, const Conv2dGeom& g) {
    for (int b = 0; b < g.batch; ++b)
        for (int ci = 0; ci < g.cin; ++ci) detail::conv2d_bwd_data_plane(gy, w, gx, g, b, ci);
}

void conv2d_bwd_weights(const double* gy, const double* x, double* gw, const Conv2dGeom& g) {
    for (int co = 0; co < g.cout; ++co) detail::conv2d_bwd_weights_channel(gy, x, gw, g, co);
}

void avg_pool2d_fwd(const double* x, double* y, int bc, int h, int w, int k) {
    for (int p = 0; p < bc; ++p) detail::avg_pool2d_fwd_plane(x, y, p, h, w, k);
}

void avg_pool2d_bwd(const double* gy, double* gx, int bc, int h, int w, int k) {
    for (int p = 0; p < bc; ++p) detail::avg_pool2d_bwd_plane(gy, gx, p, h, w, k);
}

}  // namespace serial

namespace {
#ifdef _OPENMP
bool g_parallel = true;
#else
bool g_parallel = false;
#endif
}  // namespace

void set_parallel(bool enabled) {
#ifdef _OPENMP
    g_parallel = enabled;
#else
    g_parallel = false;
    (void)enabled;
#endif
}

bool parallel_enabled() { return g_parallel; }

void matmul(const double* a, const double* b, double* c, int m, int k, int n) {
    g_parallel ? omp::matmul(a, b, c, m, k, n) : serial::matmul(a, b, c, m, k, n);
}

void matmul_nt(const double* a, const double* b, double* c, int m, int k, int n) {
    g_parallel ? omp::matmul_nt(a, b, c, m, k, n) : serial::matmul_nt(a, b, c, m, k, n);
}

void matmul_tn(const double* a, const double* b, double* c, int m, int k, int n) {
    g_parallel ? omp::matmul_tn(a, b, c, m, k, n) : serial::matmul_tn(a, b, c, m, k, n);
}

void conv2d_fwd(const double* x, const double* w, double* y, const Conv2dGeom& g) {
    g_parallel ? omp::conv2d_fwd(x, w, y, g) : serial::conv2d_fwd(x, w, y, g);
}

void conv2d_bwd_data(const double* gy, const double* w, double* gx, const Conv2dGeom& g) {
    g_parallel ? omp::conv2d_bwd_data(gy, w, gx, g) : serial::conv2d_bwd_data(gy, w, gx, g);
}

void conv2d_bwd_weights(const double* gy, const double* x, double* gw, const Conv2dGeom& g) {
    g_parallel ? omp::conv2d_bwd_weights(gy, x, gw, g) : serial::conv2d_bwd_weights(gy, x, gw, g);
}

void avg_pool2d_fwd(const double* x, double* y, int bc, int h, int w, int k) {
    g_parallel ? omp::avg_pool2d_fwd(x, y, bc, h, w, k) : serial::avg_pool2d_fwd(x, y, bc, h, w, k);
}

void avg_pool2d_bwd(const double* gy, double* gx, int bc, int h, int w, int k) {
    g_parallel ? omp::avg_pool2d_bwd(gy, gx, bc, h, w, k) : serial::avg_pool2d_bwd(gy, gx, bc, h, w, k);
}

}  // namespace lrnoise::kern
