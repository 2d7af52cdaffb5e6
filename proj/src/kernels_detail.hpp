#ifndef LRNOISE_KERNELS_DETAIL_HPP
#define LRNOISE_KERNELS_DETAIL_HPP

#include <algorithm>

#include "lrnoise/kernels.hpp"

// Per-work-item bodies shared by the serial and OpenMP kernel variants.
// A work item owns a disjoint output slice and accumulates it in a fixed
// order, which is what makes the two variants bit-identical.

namespace lrnoise::kern::detail {

// One output row of C = A * B.
inline void matmul_row(const double* a, const double* b, double* c, int i, int k, int n) {
    double* crow = c + static_cast<int64_t>(i) * n;
    std::fill(crow, crow + n, 0.0);
    const double* arow = a + static_cast<int64_t>(i) * k;
    for (int kk = 0; kk < k; ++kk) {
        double av = arow[kk];
        const double* brow = b + static_cast<int64_t>(kk) * n;
        for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
}

// One output row of C = A * B^T (B given as [N,K]).
inline void matmul_nt_row(const double* a, const double* b, double* c, int i, int k, int n) {
    double* crow = c + static_cast<int64_t>(i) * n;
    const double* arow = a + static_cast<int64_t>(i) * k;
    for (int j = 0; j < n; ++j) {
        const double* brow = b + static_cast<int64_t>(j) * k;
        double acc = 0.0;
        for (int kk = 0; kk < k; ++kk) acc += arow[kk] * brow[kk];
        crow[j] = acc;
    }
}

// One output row of C = A^T * B (A given as [M,K], C row index runs over K).
inline void matmul_tn_row(const double* a, const double* b, double* c, int i, int m, int k,
                          int n) {
    double* crow = c + static_cast<int64_t>(i) * n;
    std::fill(crow, crow + n, 0.0);
    for (int mm = 0; mm < m; ++mm) {
        double av = a[static_cast<int64_t>(mm) * k + i];
        const double* brow = b + static_cast<int64_t>(mm) * n;
        for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
}

// One (batch, cout) output plane of the forward convolution.
inline void conv2d_fwd_plane(const double* x, const double* w, double* y,
                             const Conv2dGeom& g, int b, int co) {
    const int ho = g.ho(), wo = g.wo();
    double* yplane = y + (static_cast<int64_t>(b) * g.cout + co) * ho * wo;
    std::fill(yplane, yplane + static_cast<int64_t>(ho) * wo, 0.0);
    for (int oh = 0; oh < ho; ++oh) {
        double* yrow = yplane + static_cast<int64_t>(oh) * wo;
        for (int ci = 0; ci < g.cin; ++ci) {
            const double* xch = x + (static_cast<int64_t>(b) * g.cin + ci) * g.h * g.w;
            const double* wch = w + ((static_cast<int64_t>(co) * g.cin + ci) * g.kh) * g.kw;
            for (int fh = 0; fh < g.kh; ++fh) {
                int ih = oh * g.stride - g.pad + fh;
                if (ih < 0 || ih >= g.h) continue;
                const double* xrow = xch + static_cast<int64_t>(ih) * g.w;
                const double* wrow = wch + static_cast<int64_t>(fh) * g.kw;
                for (int fw = 0; fw < g.kw; ++fw) {
                    double wv = wrow[fw];
                    int off = -g.pad + fw;
                    // clip ow so iw = ow*stride + off stays inside [0, w)
                    int lo = 0, hi = wo;
                    while (lo < hi && lo * g.stride + off < 0) ++lo;
                    while (hi > lo && (hi - 1) * g.stride + off >= g.w) --hi;
                    for (int ow = lo; ow < hi; ++ow)
                        yrow[ow] += wv * xrow[ow * g.stride + off];
                }
            }
        }
    }
}

// One (batch, cin) input-gradient plane.
inline void conv2d_bwd_data_plane(const double* gy, const double* w, double* gx,
                                  const Conv2dGeom& g, int b, int ci) {
    const int ho = g.ho(), wo = g.wo();
    double* gxplane = gx + (static_cast<int64_t>(b) * g.cin + ci) * g.h * g.w;
    std::fill(gxplane, gxplane + static_cast<int64_t>(g.h) * g.w, 0.0);
    for (int co = 0; co < g.cout; ++co) {
        const double* gyplane = gy + (static_cast<int64_t>(b) * g.cout + co) * ho * wo;
        const double* wch = w + ((static_cast<int64_t>(co) * g.cin + ci) * g.kh) * g.kw;
        for (int fh = 0; fh < g.kh; ++fh) {
            const double* wrow = wch + static_cast<int64_t>(fh) * g.kw;
            for (int oh = 0; oh < ho; ++oh) {
                int ih = oh * g.stride - g.pad + fh;
                if (ih < 0 || ih >= g.h) continue;
                double* gxrow = gxplane + static_cast<int64_t>(ih) * g.w;
                const double* gyrow = gyplane + static_cast<int64_t>(oh) * wo;
                for (int fw = 0; fw < g.kw; ++fw) {
                    double wv = wrow[fw];
                    int off = -g.pad + fw;
                    int lo = 0, hi = wo;
                    while (lo < hi && lo * g.stride + off < 0) ++lo;
                    while (hi > lo && (hi - 1) * g.stride + off >= g.w) --hi;
                    for (int ow = lo; ow < hi; ++ow)
                        gxrow[ow * g.stride + off] += wv * gyrow[ow];
                }
            }
        }
    }
}

// Weight gradients for one output channel.
inline void conv2d_bwd_weights_channel(const double* gy, const double* x, double* gw,
                                       const Conv2dGeom& g, int co) {
    const int ho = g.ho(), wo = g.wo();
    double* gwch = gw + static_cast<int64_t>(co) * g.cin * g.kh * g.kw;
    std::fill(gwch, gwch + static_cast<int64_t>(g.cin) * g.kh * g.kw, 0.0);
    for (int b = 0; b < g.batch; ++b) {
        const double* gyplane = gy + (static_cast<int64_t>(b) * g.cout + co) * ho * wo;
        for (int ci = 0; ci < g.cin; ++ci) {
            const double* xch = x + (static_cast<int64_t>(b) * g.cin + ci) * g.h * g.w;
            double* gwc = gwch + static_cast<int64_t>(ci) * g.kh * g.kw;
            for (int fh = 0; fh < g.kh; ++fh) {
                for (int fw = 0; fw < g.kw; ++fw) {
                    double acc = 0.0;
                    for (int oh = 0; oh < ho; ++oh) {
                        int ih = oh * g.stride - g.pad + fh;
                        if (ih < 0 || ih >= g.h) continue;
                        const double* xrow = xch + static_cast<int64_t>(ih) * g.w;
                        const double* gyrow = gyplane + static_cast<int64_t>(oh) * wo;
                        int off = -g.pad + fw;
                        int lo = 0, hi = wo;
                        while (lo < hi && lo * g.stride + off < 0) ++lo;
                        while (hi > lo && (hi - 1) * g.stride + off >= g.w) --hi;
                        for (int ow = lo; ow < hi; ++ow)
                            acc += gyrow[ow] * xrow[ow * g.stride + off];
                    }
                    gwc[static_cast<int64_t>(fh) * g.kw + fw] += acc;
                }
            }
        }
    }
}

// One pooled channel plane ((h/k) x (w/k) window means).
inline void avg_pool2d_fwd_plane(const double* x, double* y, int plane, int h, int w, int k) {
    const int ph = h / k, pw = w / k;
    const double* xp = x + static_cast<int64_t>(plane) * h * w;
    double* yp = y + static_cast<int64_t>(plane) * ph * pw;
    const double inv = 1.0 / (k * k);
    for (int oh = 0; oh < ph; ++oh) {
        for (int ow = 0; ow < pw; ++ow) {
            double acc = 0.0;
            for (int dh = 0; dh < k; ++dh) {
                const double* xrow = xp + (static_cast<int64_t>(oh) * k + dh) * w + ow * k;
                for (int dw = 0; dw < k; ++dw) acc += xrow[dw];
            }
            yp[static_cast<int64_t>(oh) * pw + ow] = acc * inv;
        }
    }
}

inline void avg_pool2d_bwd_plane(const double* gy, double* gx, int plane, int h, int w, int k) {
    const int ph = h / k, pw = w / k;
    const double* gyp = gy + static_cast<int64_t>(plane) * ph * pw;
    double* gxp = gx + static_cast<int64_t>(plane) * h * w;
    const double inv = 1.0 / (k * k);
    for (int oh = 0; oh < ph; ++oh) {
        for (int ow = 0; ow < pw; ++ow) {
            double gv = gyp[static_cast<int64_t>(oh) * pw + ow] * inv;
            for (int dh = 0; dh < k; ++dh) {
                double* gxrow = gxp + (static_cast<int64_t>(oh) * k + dh) * w + ow * k;
                for (int dw = 0; dw < k; ++dw) gxrow[dw] = gv;
            }
        }
    }
}

}  // namespace lrnoise::kern::detail

#endif
