#include "lrnoise/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "lrnoise/errors.hpp"

namespace fs = std::filesystem;

namespace lrnoise {

std::vector<std::string> list_clean_lrf(const std::string& dir) {
    if (!fs::is_directory(dir)) throw DataError("not a directory: " + dir);
    std::vector<std::string> names;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (!entry.is_regular_file()) continue;
        auto path = entry.path();
        if (path.extension() != ".lrf") continue;
        std::string stem = path.stem().string();
        if (stem.size() >= 6 && stem.substr(stem.size() - 6) == "_noisy") continue;
        names.push_back(stem);
    }
    std::sort(names.begin(), names.end());
    return names;
}

PairedSet load_pairs(const std::string& dir) {
    PairedSet set;
    for (const auto& stem : list_clean_lrf(dir)) {
        auto clean_path = (fs::path(dir) / (stem + ".lrf")).string();
        auto noisy_path = (fs::path(dir) / (stem + "_noisy.lrf")).string();
        if (!fs::exists(noisy_path))
            throw DataError("missing noisy counterpart for " + clean_path);
        auto [clean, meta] = load_raw(clean_path);
        auto [noisy, meta2] = load_raw(noisy_path);
        if (clean.height != noisy.height || clean.width != noisy.width)
            throw DataError("pair " + stem + ": clean and noisy sizes disagree");
        set.names.push_back(stem);
        set.clean.push_back(std::move(clean));
        set.noisy.push_back(std::move(noisy));
        set.metadata.push_back(meta2);
    }
    if (set.empty()) throw DataError("no clean/noisy pairs found in " + dir);
    return set;
}

PairedSet load_clean_only(const std::string& dir) {
    PairedSet set;
    for (const auto& stem : list_clean_lrf(dir)) {
        auto clean_path = (fs::path(dir) / (stem + ".lrf")).string();
        auto [clean, meta] = load_raw(clean_path);
        set.names.push_back(stem);
        set.clean.push_back(std::move(clean));
        set.metadata.push_back(meta);
    }
    if (set.empty()) throw DataError("no clean images found in " + dir);
    return set;
}

RawPatch make_procedural_clean(int size, int black_level, int white_level, double max_signal_dn,
                               RngStream& rng) {
    if (size < 1) throw ParamError("make_procedural_clean: size must be >= 1");
    if (max_signal_dn <= 0.0 || max_signal_dn > white_level - black_level)
        throw ParamError("make_procedural_clean: max signal must lie in (0, white - black]");

    RawPatch p;
    p.height = size;
    p.width = size;
    p.black_level = black_level;
    p.white_level = white_level;
    p.normalized = false;
    p.data.resize(p.size());

    // shared luminance structure
    const double angle = rng.uniform(0.0, 2.0 * M_PI);
    const double ramp_amp = rng.uniform(0.1, 0.5);
    const double pedestal = rng.uniform(0.0, 0.2);
    struct Blob {
        double ci, cj, radius, amp;
    };
    std::vector<Blob> blobs;
    const int nblobs = 1 + static_cast<int>(rng.next_u32() % 3);
    for (int b = 0; b < nblobs; ++b)
        blobs.push_back({rng.uniform(0.0, size), rng.uniform(0.0, size),
                         rng.uniform(size / 8.0, size / 2.0), rng.uniform(0.1, 0.8)});

    double gains[4];
    for (auto& g : gains) g = rng.uniform(0.6, 1.0);

    const double ci = std::cos(angle), sj = std::sin(angle);
    for (int c = 0; c < 4; ++c) {
        for (int i = 0; i < size; ++i) {
            for (int j = 0; j < size; ++j) {
                double t = (ci * i + sj * j) / size;          // in [-1, 1]
                double v = pedestal + ramp_amp * 0.5 * (t + 1.0);
                for (const auto& b : blobs) {
                    double d2 = (i - b.ci) * (i - b.ci) + (j - b.cj) * (j - b.cj);
                    v += b.amp * std::exp(-d2 / (2.0 * b.radius * b.radius));
                }
                v *= gains[c] * max_signal_dn;
                v = std::clamp(v, 0.0, max_signal_dn);
                p.at(c, i, j) = std::round(v) + black_level;  // integer DN like a real file
            }
        }
    }
    return p;
}

}  // namespace lrnoise
