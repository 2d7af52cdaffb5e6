#include "kernels_detail.hpp"
#include "lrnoise/kernels.hpp"

// OpenMP variants. Work items are whole output slices (a matmul row, a
// conv output plane, a weight channel), so no output element is ever shared
// between threads and the accumulation order inside an element matches the
// serial reference exactly.

namespace lrnoise::kern::omp {

void matmul(const double* a, const double* b, double* c, int m, int k, int n) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < m; ++i) detail::matmul_row(a, b, c, i, k, n);
}

void matmul_nt(const double* a, const double* b, double* c, int m, int k, int n) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < m; ++i) detail::matmul_nt_row(a, b, c, i, k, n);
}

void matmul_tn(const double* a, const double* b, double* c, int m, int k, int n) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < k; ++i) detail::matmul_tn_row(a, b, c, i, m, k, n);
}

void conv2d_fwd(const double* x, const double* w, double* y, const Conv2dGeom& g) {
    const int planes = g.batch * g.cout;
#pragma omp parallel for schedule(static)
    for (int p = 0; p < planes; ++p)
        detail::conv2d_fwd_plane(x, w, y, g, p / g.cout, p % g.cout);
}

void conv2d_bwd_data(const double* gy, const double* w, double* gx, const Conv2dGeom& g) {
    const int planes = g.batch * g.cin;
#pragma omp parallel for schedule(static)
    for (int p = 0; p < planes; ++p)
        detail::conv2d_bwd_data_plane(gy, w, gx, g, p / g.cin, p % g.cin);
}

void conv2d_bwd_weights(const double* gy, const double* x, double* gw, const Conv2dGeom& g) {
#pragma omp parallel for schedule(static)
    for (int co = 0; co < g.cout; ++co) detail::conv2d_bwd_weights_channel(gy, x, gw, g, co);
}

void avg_pool2d_fwd(const double* x, double* y, int bc, int h, int w, int k) {
#pragma omp parallel for schedule(static)
    for (int p = 0; p < bc; ++p) detail::avg_pool2d_fwd_plane(x, y, p, h, w, k);
}

void avg_pool2d_bwd(const double* gy, double* gx, int bc, int h, int w, int k) {
#pragma omp parallel for schedule(static)
    for (int p = 0; p < bc; ++p) detail::avg_pool2d_bwd_plane(gy, gx, p, h, w, k);
}

}  // namespace lrnoise::kern::omp
