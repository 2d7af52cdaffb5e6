#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <vector>

#include "helpers.hpp"
#include "lrnoise/kernels.hpp"
#include "lrnoise/rng.hpp"

using namespace lrnoise;
using kern::Conv2dGeom;

namespace {

std::vector<double> random_vec(int64_t n, RngStream& rng) {
    std::vector<double> v(static_cast<size_t>(n));
    for (auto& x : v) x = rng.uniform(-1.0, 1.0);
    return v;
}

// Naive quadruple-loop convolution oracle.
std::vector<double> conv_oracle(const std::vector<double>& x, const std::vector<double>& w,
                                const Conv2dGeom& g) {
    const int ho = g.ho(), wo = g.wo();
    std::vector<double> y(static_cast<size_t>(g.batch) * g.cout * ho * wo, 0.0);
    for (int b = 0; b < g.batch; ++b)
        for (int co = 0; co < g.cout; ++co)
            for (int oh = 0; oh < ho; ++oh)
                for (int ow = 0; ow < wo; ++ow) {
                    double acc = 0.0;
                    for (int ci = 0; ci < g.cin; ++ci)
                        for (int fh = 0; fh < g.kh; ++fh)
                            for (int fw = 0; fw < g.kw; ++fw) {
                                int ih = oh * g.stride - g.pad + fh;
                                int iw = ow * g.stride - g.pad + fw;
                                if (ih < 0 || ih >= g.h || iw < 0 || iw >= g.w) continue;
                                acc += x[((static_cast<int64_t>(b) * g.cin + ci) * g.h + ih) * g.w +
                                         iw] *
                                       w[((static_cast<int64_t>(co) * g.cin + ci) * g.kh + fh) *
                                             g.kw +
                                         fw];
                            }
                    y[((static_cast<int64_t>(b) * g.cout + co) * ho + oh) * wo + ow] = acc;
                }
    return y;
}

}  // namespace

TEST_CASE("matmul matches naive oracle; serial and omp are bit-identical") {
    RngStream rng(11);
    for (auto [m, k, n] : std::vector<std::array<int, 3>>{{1, 1, 1}, {3, 5, 2}, {17, 9, 23}}) {
        auto a = random_vec(static_cast<int64_t>(m) * k, rng);
        auto b = random_vec(static_cast<int64_t>(k) * n, rng);
        std::vector<double> naive(static_cast<size_t>(m) * n, 0.0);
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j)
                for (int kk = 0; kk < k; ++kk)
                    naive[static_cast<size_t>(i) * n + j] += a[static_cast<size_t>(i) * k + kk] *
                                                             b[static_cast<size_t>(kk) * n + j];
        std::vector<double> cs(static_cast<size_t>(m) * n), cp(cs);
        kern::serial::matmul(a.data(), b.data(), cs.data(), m, k, n);
        kern::omp::matmul(a.data(), b.data(), cp.data(), m, k, n);
        CHECK(cs == cp);  // bitwise
        for (size_t i = 0; i < cs.size(); ++i)
            CHECK(cs[i] == doctest::Approx(naive[i]).epsilon(1e-12));
    }
}

TEST_CASE("matmul_nt and matmul_tn match explicit transposes") {
    RngStream rng(12);
    const int m = 7, k = 5, n = 4;
    auto a = random_vec(m * k, rng);   // [m,k]
    auto bt = random_vec(n * k, rng);  // [n,k], logical B^T
    std::vector<double> ref(static_cast<size_t>(m) * n, 0.0);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
            for (int kk = 0; kk < k; ++kk)
                ref[static_cast<size_t>(i) * n + j] +=
                    a[static_cast<size_t>(i) * k + kk] * bt[static_cast<size_t>(j) * k + kk];
    std::vector<double> cs(static_cast<size_t>(m) * n), cp(cs);
    kern::serial::matmul_nt(a.data(), bt.data(), cs.data(), m, k, n);
    kern::omp::matmul_nt(a.data(), bt.data(), cp.data(), m, k, n);
    CHECK(cs == cp);
    for (size_t i = 0; i < cs.size(); ++i) CHECK(cs[i] == doctest::Approx(ref[i]).epsilon(1e-12));

    // tn: C[k,n] = A[m,k]^T * B[m,n]
    auto bmat = random_vec(m * n, rng);
    std::vector<double> ref2(static_cast<size_t>(k) * n, 0.0);
    for (int i = 0; i < k; ++i)
        for (int j = 0; j < n; ++j)
            for (int mm = 0; mm < m; ++mm)
                ref2[static_cast<size_t>(i) * n + j] +=
                    a[static_cast<size_t>(mm) * k + i] * bmat[static_cast<size_t>(mm) * n + j];
    std::vector<double> ds(static_cast<size_t>(k) * n), dp(ds);
    kern::serial::matmul_tn(a.data(), bmat.data(), ds.data(), m, k, n);
    kern::omp::matmul_tn(a.data(), bmat.data(), dp.data(), m, k, n);
    CHECK(ds == dp);
    for (size_t i = 0; i < ds.size(); ++i) CHECK(ds[i] == doctest::Approx(ref2[i]).epsilon(1e-12));
}

TEST_CASE("conv2d forward matches oracle; variants bit-identical") {
    RngStream rng(13);
    for (auto geom : std::vector<Conv2dGeom>{
             {2, 3, 8, 8, 4, 3, 3, 1, 1},
             {1, 2, 6, 10, 3, 3, 3, 2, 1},
             {2, 1, 5, 5, 2, 1, 1, 1, 0},
         }) {
        auto x = random_vec(static_cast<int64_t>(geom.batch) * geom.cin * geom.h * geom.w, rng);
        auto w = random_vec(static_cast<int64_t>(geom.cout) * geom.cin * geom.kh * geom.kw, rng);
        auto ref = conv_oracle(x, w, geom);
        std::vector<double> ys(ref.size()), yp(ref.size());
        kern::serial::conv2d_fwd(x.data(), w.data(), ys.data(), geom);
        kern::omp::conv2d_fwd(x.data(), w.data(), yp.data(), geom);
        CHECK(ys == yp);
        for (size_t i = 0; i < ys.size(); ++i)
            CHECK(ys[i] == doctest::Approx(ref[i]).epsilon(1e-12));
    }
}

TEST_CASE("conv2d backward kernels: serial and omp bit-identical") {
    RngStream rng(14);
    Conv2dGeom g{2, 3, 8, 6, 4, 3, 3, 1, 1};
    auto x = random_vec(static_cast<int64_t>(g.batch) * g.cin * g.h * g.w, rng);
    auto w = random_vec(static_cast<int64_t>(g.cout) * g.cin * g.kh * g.kw, rng);
    auto gy = random_vec(static_cast<int64_t>(g.batch) * g.cout * g.ho() * g.wo(), rng);

    std::vector<double> gxs(x.size()), gxp(x.size());
    kern::serial::conv2d_bwd_data(gy.data(), w.data(), gxs.data(), g);
    kern::omp::conv2d_bwd_data(gy.data(), w.data(), gxp.data(), g);
    CHECK(gxs == gxp);

    std::vector<double> gws(w.size()), gwp(w.size());
    kern::serial::conv2d_bwd_weights(gy.data(), x.data(), gws.data(), g);
    kern::omp::conv2d_bwd_weights(gy.data(), x.data(), gwp.data(), g);
    CHECK(gws == gwp);
}

TEST_CASE("avg_pool matches direct window means; variants bit-identical") {
    RngStream rng(15);
    const int bc = 6, h = 8, w = 12, k = 2;
    auto x = random_vec(static_cast<int64_t>(bc) * h * w, rng);
    std::vector<double> ys(static_cast<size_t>(bc) * (h / k) * (w / k)), yp(ys);
    kern::serial::avg_pool2d_fwd(x.data(), ys.data(), bc, h, w, k);
    kern::omp::avg_pool2d_fwd(x.data(), yp.data(), bc, h, w, k);
    CHECK(ys == yp);
    for (int p = 0; p < bc; ++p)
        for (int oh = 0; oh < h / k; ++oh)
            for (int ow = 0; ow < w / k; ++ow) {
                double acc = 0.0;
                for (int dh = 0; dh < k; ++dh)
                    for (int dw = 0; dw < k; ++dw)
                        acc += x[(static_cast<size_t>(p) * h + oh * k + dh) * w + ow * k + dw];
                CHECK(ys[(static_cast<size_t>(p) * (h / k) + oh) * (w / k) + ow] ==
                      doctest::Approx(acc / (k * k)).epsilon(1e-12));
            }

    auto gy = random_vec(static_cast<int64_t>(bc) * (h / k) * (w / k), rng);
    std::vector<double> gxs(x.size()), gxp(x.size());
    kern::serial::avg_pool2d_bwd(gy.data(), gxs.data(), bc, h, w, k);
    kern::omp::avg_pool2d_bwd(gy.data(), gxp.data(), bc, h, w, k);
    CHECK(gxs == gxp);
}

TEST_CASE("dispatch respects the backend switch") {
    bool before = kern::parallel_enabled();
    kern::set_parallel(false);
    CHECK_FALSE(kern::parallel_enabled());
    RngStream rng(16);
    auto a = random_vec(4 * 3, rng);
    auto b = random_vec(3 * 2, rng);
    std::vector<double> c1(8), c2(8);
    kern::matmul(a.data(), b.data(), c1.data(), 4, 3, 2);
    kern::set_parallel(true);
    kern::matmul(a.data(), b.data(), c2.data(), 4, 3, 2);
    CHECK(c1 == c2);
    kern::set_parallel(before);
}
