#ifndef LRNOISE_DATA_HPP
#define LRNOISE_DATA_HPP

#include <string>
#include <vector>

#include "lrnoise/raw.hpp"
#include "lrnoise/rng.hpp"

namespace lrnoise {

/// Paired dataset: X.lrf (clean) matched with X_noisy.lrf by filename.
struct PairedSet {
    std::vector<std::string> names;       // stem of the clean file
    std::vector<RawPatch> clean;          // DN domain
    std::vector<RawPatch> noisy;          // DN domain
    std::vector<SensorProfile> metadata;  // per-image header metadata (iso, K, sigma_r)

    size_t size() const { return names.size(); }
    bool empty() const { return names.empty(); }
};

/// Clean LRF files in a directory (sorted by name; *_noisy.lrf excluded).
std::vector<std::string> list_clean_lrf(const std::string& dir);

/// Loads X.lrf / X_noisy.lrf pairs. Throws DataError when a counterpart is
/// missing or shapes disagree.
PairedSet load_pairs(const std::string& dir);

/// Clean images only (no noisy counterparts required).
PairedSet load_clean_only(const std::string& dir);

/**
 * Procedural low-light clean patch: a smooth oriented ramp, a few Gaussian
 * blobs and a flat pedestal, scaled per channel, quantized to integer DN in
 * [black, black + max_signal]. Dark by construction so the clamp at the
 * black level actually matters for the noise statistics.
 */
RawPatch make_procedural_clean(int size, int black_level, int white_level, double max_signal_dn,
                               RngStream& rng);

}  // namespace lrnoise

#endif
