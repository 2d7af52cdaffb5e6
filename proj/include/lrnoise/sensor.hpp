#ifndef LRNOISE_SENSOR_HPP
#define LRNOISE_SENSOR_HPP

#include <vector>

#include "lrnoise/raw.hpp"
#include "lrnoise/rng.hpp"

namespace lrnoise {

/**
 * Physics-based noise synthesis.
 *
 * All samplers here work in black-level-subtracted DN: a "signal" value of 0
 * is the black level, and the valid range is [0, white - black]. Conversion
 * to the normalized [0,1] domain the networks use happens at the training
 * data boundary, not here, because the Poisson shot-noise law is exact only
 * in DN/electron units.
 *
 * Every sampler forks per-pixel child streams off the caller's RngStream, so
 * results are a pure function of (inputs, stream state at entry) regardless
 * of thread count.
 */

enum class NoiseKind { SignalDependent, SignalIndependent, Composite };

struct NoiseField {
    int height = 0;
    int width = 0;
    std::vector<double> data;  // 4 * height * width, DN
    NoiseKind kind = NoiseKind::SignalIndependent;

    double& at(int c, int i, int j) {
        return data[(static_cast<int64_t>(c) * height + i) * width + j];
    }
    double at(int c, int i, int j) const {
        return data[(static_cast<int64_t>(c) * height + i) * width + j];
    }
};

/// Shot noise: per pixel, out = Poisson(y / K) * K, so outputs are
/// nonnegative integer multiples of K with E[out] = y and Var[out] = K * y.
/// `clean` must be unnormalized with black-subtracted values >= 0.
RawPatch sample_shot_noise(const RawPatch& clean, double gain_k, RngStream& rng);

/// Parametric signal-independent stage: iid Gaussian read noise, plus a
/// per-(channel, row) offset broadcast along the row, then quantization of
/// the sum to multiples of quant_step (quant_step == 0 skips quantization).
NoiseField sample_oracle_indep(int height, int width, const OracleNoiseParams& params,
                               RngStream& rng);

/// Full physics pipeline: shot noise at the profile's K plus the oracle
/// signal-independent field, clamped once to [0, white - black] like a
/// saturating ADC. Requires profile.oracle.
RawPatch synthesize_physics(const RawPatch& clean, const SensorProfile& profile, RngStream& rng);

enum class BaselineModel { Awgn, PoissonGaussian };

/// Closed-form baseline noise models. AWGN adds iid Normal(0, s^2) with
/// s^2 = K * mean(signal) + sigma_r^2, the analytic moment fit to the total
/// noise power of the image; Poisson-Gaussian adds exact shot noise plus iid
/// Normal(0, sigma_r^2). `sigma_override` replaces the model's Gaussian
/// sigma when given. Neither model clips at the ADC bounds - the classical
/// formulations do not account for saturation, which is part of what
/// separates them from the real sensor in the dark.
RawPatch synthesize_baseline(const RawPatch& clean, const SensorProfile& profile,
                             BaselineModel model, RngStream& rng,
                             std::optional<double> sigma_override = {});

struct PtcFit {
    double gain_k = 0.0;
    double sigma_r = 0.0;
    bool intercept_clipped = false;  // negative-definite fit, sigma_r forced to 0
};

/// Photon-transfer-curve calibration: ordinary least squares on
/// var(D) = K * mean(D) + sigma_r^2 across exposure levels. Each level needs
/// at least two frames (variance comes from frame differences, which cancels
/// any fixed pattern); at least three distinct levels are required.
PtcFit calibrate_ptc(const std::vector<std::vector<RawPatch>>& flat_frames_by_level,
                     const std::vector<RawPatch>& dark_frames);

}  // namespace lrnoise

#endif
