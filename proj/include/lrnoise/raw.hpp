#ifndef LRNOISE_RAW_HPP
#define LRNOISE_RAW_HPP

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace lrnoise {

enum class BayerPattern : uint16_t { RGGB = 0, BGGR = 1, GRBG = 2, GBRG = 3 };

/**
 * Packed 4-channel Bayer image, channels in RGGB order (R, G-on-R-row,
 * G-on-B-row, B), each channel H x W for a 2H x 2W mosaic.
 *
 * Unnormalized patches hold DN values in [0, white_level]; normalized ones
 * hold [0, 1] after black subtraction and white scaling. Values are stored
 * as doubles in memory and as u16 DN on disk.
 */
struct RawPatch {
    int height = 0;
    int width = 0;
    std::vector<double> data;  // 4 * height * width, channel-major
    int black_level = 0;
    int white_level = 0;
    bool normalized = false;

    int64_t pixels_per_channel() const { return static_cast<int64_t>(height) * width; }
    int64_t size() const { return 4 * pixels_per_channel(); }
    double& at(int c, int i, int j) {
        return data[(static_cast<int64_t>(c) * height + i) * width + j];
    }
    double at(int c, int i, int j) const {
        return data[(static_cast<int64_t>(c) * height + i) * width + j];
    }
    /// Dynamic range white_level - black_level in DN.
    double range() const { return static_cast<double>(white_level - black_level); }
};

/// Parametric stand-in for a real sensor's signal-independent noise stage:
/// Gaussian read noise, per-row banding, and ADC quantization. All-zero
/// parameters mean a noiseless stage.
struct OracleNoiseParams {
    double sigma_read = 0.0;  // DN
    double sigma_row = 0.0;   // DN
    double quant_step = 0.0;  // DN

    bool all_zero() const { return sigma_read == 0.0 && sigma_row == 0.0 && quant_step == 0.0; }
};

/// Per-ISO calibration: system gain K (DN per electron) and the
/// signal-independent noise scale sigma_r (DN).
struct SensorProfile {
    int iso = 0;
    double gain_k = 0.0;
    double sigma_r = 0.0;
    std::optional<OracleNoiseParams> oracle;
};

/// Validates invariants (gain > 0, sigma_r >= 0, ...); throws ParamError.
void validate_profile(const SensorProfile& profile);

/// Pack a 2H x 2W mosaic into RGGB channel planes. Throws DimError on odd
/// dimensions. black/white levels are attached as given.
RawPatch pack_bayer(const std::vector<double>& mosaic, int rows, int cols,
                    BayerPattern pattern, int black_level, int white_level);

/// Inverse of pack_bayer; exact round trip.
std::vector<double> unpack_bayer(const RawPatch& patch, BayerPattern pattern);

/// v -> clamp((v - black) / (white - black), 0, 1). Throws StateError if the
/// patch is already normalized.
RawPatch normalize(const RawPatch& patch);

/// Back to DN: v -> v * (white - black) + black. Throws StateError if not
/// normalized.
RawPatch denormalize(const RawPatch& patch);

// --- LRF container ---------------------------------------------------------
// Little-endian: magic "LRF1", u16 version=1, u16 bayer-pattern code,
// u32 H, u32 W, u16 black, u16 white, u32 iso, f64 gain_K, f64 sigma_r,
// then 4*H*W u16 DN values channel-major. Values are stored denormalized;
// non-RGGB patterns are permuted to RGGB at load.

void save_raw(const RawPatch& patch, const SensorProfile& profile, const std::string& path);
std::pair<RawPatch, SensorProfile> load_raw(const std::string& path);

// --- profile sets -----------------------------------------------------------
// Plain text, one ISO per line:
//   iso gain_K sigma_r [sigma_read sigma_row quant_step]
// '#' starts a comment; at most one entry per ISO.

std::vector<SensorProfile> load_profiles(const std::string& path);
void save_profiles(const std::vector<SensorProfile>& profiles, const std::string& path);
const SensorProfile& find_profile(const std::vector<SensorProfile>& profiles, int iso);

/// Tone-mapped 8-bit preview of the green-average channel (gain, then
/// gamma 2.2), written as a binary PGM.
void write_pgm_preview(const RawPatch& patch, const std::string& path, double gain = 1.0);

}  // namespace lrnoise

#endif
