#ifndef LRNOISE_METRICS_HPP
#define LRNOISE_METRICS_HPP

#include <functional>
#include <vector>

#include "lrnoise/raw.hpp"
#include "lrnoise/rng.hpp"

namespace lrnoise {

struct NoiseHistogram {
    std::vector<double> edges;   // B+1 uniform, strictly increasing
    std::vector<int64_t> counts; // B
    int64_t total = 0;
};

/// Default residual binning: comparable across runs by construction.
inline constexpr int kDefaultBins = 256;
inline constexpr double kDefaultLo = -0.5;
inline constexpr double kDefaultHi = 0.5;

/// Histogram of (noisy - clean) per pixel over all four channels.
/// Out-of-range residuals land in the edge bins.
NoiseHistogram noise_histogram(const RawPatch& noisy, const RawPatch& clean,
                               int bins = kDefaultBins, double lo = kDefaultLo,
                               double hi = kDefaultHi);

/// KL divergence sum p_i log(p_i / q_i) after add-one smoothing of the
/// counts. Requires identical bin edges.
double kld(const NoiseHistogram& p, const NoiseHistogram& q);

/// A noise model for AKLD evaluation: synthesizes one noisy realization
/// of `clean`. Patches are in the DN domain.
using SynthFn = std::function<RawPatch(const RawPatch& clean, RngStream& rng)>;

/// Average KLD: for every (clean, real) pair, draw `samples_per_image`
/// synthetic noisy images and average kld(synthetic residuals, real
/// residuals) over samples and images. Residuals are histogrammed in the
/// normalized domain.
double akld(const SynthFn& model, const std::vector<RawPatch>& clean,
            const std::vector<RawPatch>& real_noisy, int samples_per_image, RngStream& rng);

/// Per-image KLDs (akld is their mean); exposed for CSV reporting.
std::vector<double> akld_per_image(const SynthFn& model, const std::vector<RawPatch>& clean,
                                   const std::vector<RawPatch>& real_noisy, int samples_per_image,
                                   RngStream& rng);

/// 10*log10(1/MSE) on normalized patches, capped at 100 dB for MSE < 1e-10.
double psnr(const RawPatch& a, const RawPatch& b);

/// Mean local SSIM, 11x11 Gaussian window (sigma 1.5), constants
/// (0.01^2, 0.03^2) on unit dynamic range, valid-region windows only.
double ssim(const RawPatch& a, const RawPatch& b);

}  // namespace lrnoise

#endif
