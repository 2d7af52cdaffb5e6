#include "lrnoise/sensor.hpp"

#include <algorithm>
#include <cmath>

#include "lrnoise/errors.hpp"

namespace lrnoise {

namespace {

void require_signal_domain(const RawPatch& clean, const char* op) {
    if (clean.normalized)
        throw StateError(std::string(op) + ": expected an unnormalized (DN-domain) patch");
    for (double v : clean.data)
        if (v < 0.0)
            throw ParamError(std::string(op) + ": negative signal value " + std::to_string(v));
}

std::vector<double> signal_of(const RawPatch& clean, const char* op) {
    std::vector<double> s(clean.data.size());
    for (size_t i = 0; i < s.size(); ++i) {
        s[i] = clean.data[i] - clean.black_level;
        if (s[i] < 0.0)
            throw ParamError(std::string(op) + ": pixel below black level (signal " +
                             std::to_string(s[i]) + " DN)");
    }
    return s;
}

}  // namespace

RawPatch sample_shot_noise(const RawPatch& clean, double gain_k, RngStream& rng) {
    if (gain_k <= 0.0) throw ParamError("sample_shot_noise: gain K must be > 0");
    require_signal_domain(clean, "sample_shot_noise");

    RawPatch out = clean;
    RngStream base = rng.fork();
    const int64_t n = clean.size();
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; ++i) {
        RngStream pix = base.split(static_cast<uint64_t>(i));
        out.data[i] = static_cast<double>(pix.poisson(clean.data[i] / gain_k)) * gain_k;
    }
    return out;
}

NoiseField sample_oracle_indep(int height, int width, const OracleNoiseParams& params,
                               RngStream& rng) {
    if (params.sigma_read < 0.0 || params.sigma_row < 0.0 || params.quant_step < 0.0)
        throw ParamError("sample_oracle_indep: noise parameters must be >= 0");

    NoiseField field;
    field.height = height;
    field.width = width;
    field.kind = NoiseKind::SignalIndependent;
    field.data.assign(static_cast<size_t>(4) * height * width, 0.0);

    RngStream read_base = rng.fork();
    RngStream row_base = rng.fork();

    // Row offsets first: one draw per (channel, row), broadcast along the row.
    std::vector<double> row_offset(static_cast<size_t>(4) * height, 0.0);
    if (params.sigma_row > 0.0) {
        const int64_t rows = 4 * static_cast<int64_t>(height);
#pragma omp parallel for schedule(static)
        for (int64_t r = 0; r < rows; ++r) {
            RngStream rs = row_base.split(static_cast<uint64_t>(r));
            row_offset[r] = rs.normal(0.0, params.sigma_row);
        }
    }

    const int64_t n = field.data.size();
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; ++i) {
        double g = 0.0;
        if (params.sigma_read > 0.0) {
            RngStream ps = read_base.split(static_cast<uint64_t>(i));
            g = ps.normal(0.0, params.sigma_read);
        }
        double v = g + row_offset[i / width];
        if (params.quant_step > 0.0) v = std::round(v / params.quant_step) * params.quant_step;
        field.data[i] = v;
    }
    return field;
}

RawPatch synthesize_physics(const RawPatch& clean, const SensorProfile& profile, RngStream& rng) {
    validate_profile(profile);
    if (!profile.oracle)
        throw ParamError("synthesize_physics: profile iso " + std::to_string(profile.iso) +
                         " has no oracle noise parameters");
    if (clean.normalized) throw StateError("synthesize_physics: expected an unnormalized patch");

    RawPatch signal = clean;
    signal.black_level = 0;  // keep [0, white-black] semantics below
    signal.data = signal_of(clean, "synthesize_physics");

    RawPatch shot = sample_shot_noise(signal, profile.gain_k, rng);
    NoiseField indep = sample_oracle_indep(clean.height, clean.width, *profile.oracle, rng);

    RawPatch out = clean;
    const double hi = clean.range();
    for (int64_t i = 0; i < out.size(); ++i) {
        double d = std::clamp(shot.data[i] + indep.data[i], 0.0, hi);
        out.data[i] = d + clean.black_level;
    }
    return out;
}

RawPatch synthesize_baseline(const RawPatch& clean, const SensorProfile& profile,
                             BaselineModel model, RngStream& rng,
                             std::optional<double> sigma_override) {
    validate_profile(profile);
    if (clean.normalized) throw StateError("synthesize_baseline: expected an unnormalized patch");
    if (sigma_override && *sigma_override < 0.0)
        throw ParamError("synthesize_baseline: sigma must be >= 0");
    std::vector<double> signal = signal_of(clean, "synthesize_baseline");

    RawPatch out = clean;
    const int64_t n = out.size();

    switch (model) {
        case BaselineModel::Awgn: {
            double mean = 0.0;
            for (double v : signal) mean += v;
            mean /= static_cast<double>(n);
            const double sigma =
                sigma_override ? *sigma_override
                               : std::sqrt(profile.gain_k * mean + profile.sigma_r * profile.sigma_r);
            RngStream base = rng.fork();
#pragma omp parallel for schedule(static)
            for (int64_t i = 0; i < n; ++i) {
                RngStream pix = base.split(static_cast<uint64_t>(i));
                out.data[i] = signal[i] + pix.normal(0.0, sigma) + clean.black_level;
            }
            return out;
        }
        case BaselineModel::PoissonGaussian: {
            RawPatch sigpatch = clean;
            sigpatch.black_level = 0;
            sigpatch.data = signal;
            RawPatch shot = sample_shot_noise(sigpatch, profile.gain_k, rng);
            const double sigma = sigma_override ? *sigma_override : profile.sigma_r;
            RngStream base = rng.fork();
#pragma omp parallel for schedule(static)
            for (int64_t i = 0; i < n; ++i) {
                double g = 0.0;
                if (sigma > 0.0) {
                    RngStream pix = base.split(static_cast<uint64_t>(i));
                    g = pix.normal(0.0, sigma);
                }
                out.data[i] = shot.data[i] + g + clean.black_level;
            }
            return out;
        }
    }
    throw ParamError("synthesize_baseline: unknown model tag");
}

PtcFit calibrate_ptc(const std::vector<std::vector<RawPatch>>& flat_frames_by_level,
                     const std::vector<RawPatch>& dark_frames) {
    if (flat_frames_by_level.size() < 3)
        throw DataError("calibrate_ptc: need frames at >= 3 exposure levels, got " +
                        std::to_string(flat_frames_by_level.size()));

    double dark_mean = 0.0;
    if (!dark_frames.empty()) {
        int64_t count = 0;
        for (const auto& d : dark_frames) {
            for (double v : d.data) dark_mean += v;
            count += d.size();
        }
        dark_mean /= static_cast<double>(count);
    }

    std::vector<double> means, vars;
    for (const auto& frames : flat_frames_by_level) {
        if (frames.size() < 2)
            throw DataError("calibrate_ptc: each exposure level needs >= 2 frames");
        double mean = 0.0;
        int64_t count = 0;
        for (const auto& f : frames) {
            for (double v : f.data) mean += v;
            count += f.size();
        }
        mean = mean / static_cast<double>(count) - dark_mean;

        // Variance from disjoint frame pairs: Var = E[(a-b)^2] / 2.
        double ss = 0.0;
        int64_t nss = 0;
        for (size_t p = 0; p + 1 < frames.size(); p += 2) {
            const auto& a = frames[p].data;
            const auto& b = frames[p + 1].data;
            if (a.size() != b.size())
                throw DimError("calibrate_ptc: frames within a level differ in size");
            for (size_t i = 0; i < a.size(); ++i) {
                double d = a[i] - b[i];
                ss += d * d;
            }
            nss += static_cast<int64_t>(a.size());
        }
        means.push_back(mean);
        vars.push_back(ss / (2.0 * static_cast<double>(nss)));
    }

    // OLS of vars on means.
    const double m = static_cast<double>(means.size());
    double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
    for (size_t i = 0; i < means.size(); ++i) {
        sx += means[i];
        sy += vars[i];
        sxx += means[i] * means[i];
        sxy += means[i] * vars[i];
    }
    const double denom = m * sxx - sx * sx;
    if (denom == 0.0) throw DataError("calibrate_ptc: exposure levels are degenerate");
    PtcFit fit;
    fit.gain_k = (m * sxy - sx * sy) / denom;
    const double intercept = (sy - fit.gain_k * sx) / m;
    if (intercept < 0.0) {
        fit.sigma_r = 0.0;
        fit.intercept_clipped = true;
    } else {
        fit.sigma_r = std::sqrt(intercept);
    }
    return fit;
}

}  // namespace lrnoise
