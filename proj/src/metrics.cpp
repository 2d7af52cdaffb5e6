#include "lrnoise/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "lrnoise/errors.hpp"

namespace lrnoise {

NoiseHistogram noise_histogram(const RawPatch& noisy, const RawPatch& clean, int bins, double lo,
                               double hi) {
    if (bins < 2) throw ParamError("noise_histogram: need at least 2 bins");
    if (hi <= lo) throw ParamError("noise_histogram: empty range");
    if (noisy.height != clean.height || noisy.width != clean.width)
        throw DimError("noise_histogram: patch sizes disagree");
    if (noisy.normalized != clean.normalized)
        throw StateError("noise_histogram: mixed normalization states");

    // Residuals in normalized units. DN-domain inputs are scaled by the
    // dynamic range without clamping, so out-of-range synthetic values keep
    // their (possibly impossible) tails.
    double scale = 1.0;
    if (!noisy.normalized) {
        if (noisy.white_level - noisy.black_level != clean.white_level - clean.black_level)
            throw DimError("noise_histogram: dynamic ranges disagree");
        scale = 1.0 / clean.range();
    }

    NoiseHistogram h;
    h.edges.resize(static_cast<size_t>(bins) + 1);
    const double width = (hi - lo) / bins;
    for (int i = 0; i <= bins; ++i) h.edges[static_cast<size_t>(i)] = lo + width * i;
    h.counts.assign(static_cast<size_t>(bins), 0);

    for (int64_t i = 0; i < noisy.size(); ++i) {
        double r = (noisy.data[i] - clean.data[i]) * scale;
        int b = static_cast<int>(std::floor((r - lo) / width));
        b = std::clamp(b, 0, bins - 1);  // out-of-range mass sticks to the edge bins
        h.counts[static_cast<size_t>(b)]++;
    }
    h.total = noisy.size();
    return h;
}

double kld(const NoiseHistogram& p, const NoiseHistogram& q) {
    if (p.edges != q.edges) throw DimError("kld: histograms have different bin edges");
    const int bins = static_cast<int>(p.counts.size());
    const double np = static_cast<double>(p.total + bins);
    const double nq = static_cast<double>(q.total + bins);
    double sum = 0.0;
    for (int i = 0; i < bins; ++i) {
        // add-one smoothing keeps empty q bins finite
        double pi = (static_cast<double>(p.counts[static_cast<size_t>(i)]) + 1.0) / np;
        double qi = (static_cast<double>(q.counts[static_cast<size_t>(i)]) + 1.0) / nq;
        if (pi > 0.0) sum += pi * std::log(pi / qi);
    }
    return sum;
}

std::vector<double> akld_per_image(const SynthFn& model, const std::vector<RawPatch>& clean,
                                   const std::vector<RawPatch>& real_noisy, int samples_per_image,
                                   RngStream& rng) {
    if (clean.size() != real_noisy.size())
        throw DataError("akld: clean and real sets differ in size");
    if (clean.empty()) throw DataError("akld: empty dataset");
    if (samples_per_image < 1) throw ParamError("akld: samples_per_image must be >= 1");

    RngStream base = rng.fork();
    std::vector<double> out;
    out.reserve(clean.size());
    for (size_t i = 0; i < clean.size(); ++i) {
        NoiseHistogram real_hist = noise_histogram(real_noisy[i], clean[i]);
        RngStream img_stream = base.split(static_cast<uint64_t>(i));
        double acc = 0.0;
        for (int m = 0; m < samples_per_image; ++m) {
            RngStream s = img_stream.split(static_cast<uint64_t>(m));
            RawPatch synth = model(clean[i], s);
            acc += kld(noise_histogram(synth, clean[i]), real_hist);
        }
        out.push_back(acc / samples_per_image);
    }
    return out;
}

double akld(const SynthFn& model, const std::vector<RawPatch>& clean,
            const std::vector<RawPatch>& real_noisy, int samples_per_image, RngStream& rng) {
    auto per_image = akld_per_image(model, clean, real_noisy, samples_per_image, rng);
    double s = 0.0;
    for (double v : per_image) s += v;
    return s / static_cast<double>(per_image.size());
}

double psnr(const RawPatch& a, const RawPatch& b) {
    if (!a.normalized || !b.normalized) throw StateError("psnr: expects normalized patches");
    if (a.size() != b.size() || a.height != b.height)
        throw DimError("psnr: patch sizes disagree");
    double mse = 0.0;
    for (int64_t i = 0; i < a.size(); ++i) {
        double d = a.data[i] - b.data[i];
        mse += d * d;
    }
    mse /= static_cast<double>(a.size());
    if (mse < 1e-10) return 100.0;
    return 10.0 * std::log10(1.0 / mse);
}

namespace {

constexpr int kWin = 11;

const std::vector<double>& gaussian_window() {
    static std::vector<double> w = [] {
        std::vector<double> v(kWin * kWin);
        const double sigma = 1.5;
        double sum = 0.0;
        for (int i = 0; i < kWin; ++i)
            for (int j = 0; j < kWin; ++j) {
                double di = i - kWin / 2, dj = j - kWin / 2;
                v[static_cast<size_t>(i) * kWin + j] =
                    std::exp(-(di * di + dj * dj) / (2.0 * sigma * sigma));
                sum += v[static_cast<size_t>(i) * kWin + j];
            }
        for (double& x : v) x /= sum;
        return v;
    }();
    return w;
}

}  // namespace

double ssim(const RawPatch& a, const RawPatch& b) {
    if (!a.normalized || !b.normalized) throw StateError("ssim: expects normalized patches");
    if (a.height != b.height || a.width != b.width) throw DimError("ssim: patch sizes disagree");
    if (a.height < kWin || a.width < kWin)
        throw DimError("ssim: patch smaller than the 11x11 window");

    const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
    const auto& win = gaussian_window();
    double acc = 0.0;
    int64_t count = 0;
    for (int c = 0; c < 4; ++c) {
        for (int i = 0; i + kWin <= a.height; ++i) {
            for (int j = 0; j + kWin <= a.width; ++j) {
                double ma = 0.0, mb = 0.0, va = 0.0, vb = 0.0, cov = 0.0;
                for (int di = 0; di < kWin; ++di)
                    for (int dj = 0; dj < kWin; ++dj) {
                        double wv = win[static_cast<size_t>(di) * kWin + dj];
                        double xa = a.at(c, i + di, j + dj);
                        double xb = b.at(c, i + di, j + dj);
                        ma += wv * xa;
                        mb += wv * xb;
                        va += wv * xa * xa;
                        vb += wv * xb * xb;
                        cov += wv * xa * xb;
                    }
                va -= ma * ma;
                vb -= mb * mb;
                cov -= ma * mb;
                acc += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) /
                       ((ma * ma + mb * mb + c1) * (va + vb + c2));
                ++count;
            }
        }
    }
    return acc / static_cast<double>(count);
}

}  // namespace lrnoise
