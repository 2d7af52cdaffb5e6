#include "lrnoise/raw.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "lrnoise/errors.hpp"

namespace lrnoise {

namespace {

// (row, col) offset of each RGGB channel inside a 2x2 mosaic cell.
struct CellLayout {
    int r[2], g1[2], g2[2], b[2];
};

CellLayout layout_of(BayerPattern p) {
    switch (p) {
        case BayerPattern::RGGB: return {{0, 0}, {0, 1}, {1, 0}, {1, 1}};
        case BayerPattern::BGGR: return {{1, 1}, {1, 0}, {0, 1}, {0, 0}};
        case BayerPattern::GRBG: return {{0, 1}, {0, 0}, {1, 1}, {1, 0}};
        case BayerPattern::GBRG: return {{1, 0}, {1, 1}, {0, 0}, {0, 1}};
    }
    throw ParamError("unknown bayer pattern");
}

void check_levels(int black, int white) {
    if (black < 0 || white <= black)
        throw ParamError("levels: need 0 <= black_level < white_level, got black=" +
                         std::to_string(black) + " white=" + std::to_string(white));
}

}  // namespace

void validate_profile(const SensorProfile& p) {
    if (p.gain_k <= 0.0)
        throw ParamError("profile iso " + std::to_string(p.iso) + ": gain_K must be > 0");
    if (p.sigma_r < 0.0)
        throw ParamError("profile iso " + std::to_string(p.iso) + ": sigma_r must be >= 0");
    if (p.oracle) {
        const auto& o = *p.oracle;
        if (o.sigma_read < 0.0 || o.sigma_row < 0.0 || o.quant_step < 0.0)
            throw ParamError("profile iso " + std::to_string(p.iso) +
                             ": oracle noise parameters must be >= 0");
    }
}

RawPatch pack_bayer(const std::vector<double>& mosaic, int rows, int cols,
                    BayerPattern pattern, int black_level, int white_level) {
    if (rows <= 0 || cols <= 0 || rows % 2 != 0 || cols % 2 != 0)
        throw DimError("pack_bayer: mosaic dimensions must be positive and even, got " +
                       std::to_string(rows) + "x" + std::to_string(cols));
    if (static_cast<int64_t>(mosaic.size()) != static_cast<int64_t>(rows) * cols)
        throw DimError("pack_bayer: mosaic buffer size does not match dimensions");
    check_levels(black_level, white_level);

    RawPatch out;
    out.height = rows / 2;
    out.width = cols / 2;
    out.black_level = black_level;
    out.white_level = white_level;
    out.normalized = false;
    out.data.resize(out.size());

    const CellLayout cell = layout_of(pattern);
    const int* offs[4] = {cell.r, cell.g1, cell.g2, cell.b};
    for (int c = 0; c < 4; ++c) {
        for (int i = 0; i < out.height; ++i)
            for (int j = 0; j < out.width; ++j)
                out.at(c, i, j) =
                    mosaic[static_cast<int64_t>(2 * i + offs[c][0]) * cols + (2 * j + offs[c][1])];
    }
    return out;
}

std::vector<double> unpack_bayer(const RawPatch& patch, BayerPattern pattern) {
    const int rows = 2 * patch.height, cols = 2 * patch.width;
    std::vector<double> mosaic(static_cast<int64_t>(rows) * cols);
    const CellLayout cell = layout_of(pattern);
    const int* offs[4] = {cell.r, cell.g1, cell.g2, cell.b};
    for (int c = 0; c < 4; ++c)
        for (int i = 0; i < patch.height; ++i)
            for (int j = 0; j < patch.width; ++j)
                mosaic[static_cast<int64_t>(2 * i + offs[c][0]) * cols + (2 * j + offs[c][1])] =
                    patch.at(c, i, j);
    return mosaic;
}

RawPatch normalize(const RawPatch& patch) {
    if (patch.normalized) throw StateError("normalize: patch is already normalized");
    check_levels(patch.black_level, patch.white_level);
    RawPatch out = patch;
    const double inv = 1.0 / patch.range();
    for (double& v : out.data) v = std::clamp((v - patch.black_level) * inv, 0.0, 1.0);
    out.normalized = true;
    return out;
}

RawPatch denormalize(const RawPatch& patch) {
    if (!patch.normalized) throw StateError("denormalize: patch is not normalized");
    RawPatch out = patch;
    for (double& v : out.data) v = v * patch.range() + patch.black_level;
    out.normalized = false;
    return out;
}

// --- LRF I/O ----------------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'L', 'R', 'F', '1'};
constexpr uint16_t kVersion = 1;

template <typename T>
void put(std::string& buf, T v) {
    char bytes[sizeof(T)];
    std::memcpy(bytes, &v, sizeof(T));
    buf.append(bytes, sizeof(T));  // little-endian host assumed
}

template <typename T>
T take(const std::string& buf, uint64_t& off, const char* what) {
    if (off + sizeof(T) > buf.size())
        throw ParseError(std::string("LRF: truncated while reading ") + what, off);
    T v;
    std::memcpy(&v, buf.data() + off, sizeof(T));
    off += sizeof(T);
    return v;
}

}  // namespace

void save_raw(const RawPatch& patch, const SensorProfile& profile, const std::string& path) {
    const RawPatch* p = &patch;
    RawPatch dn;
    if (patch.normalized) {
        dn = denormalize(patch);
        p = &dn;
    }
    std::string buf;
    buf.reserve(34 + 2 * p->size());
    buf.append(kMagic, 4);
    put<uint16_t>(buf, kVersion);
    put<uint16_t>(buf, static_cast<uint16_t>(BayerPattern::RGGB));
    put<uint32_t>(buf, static_cast<uint32_t>(p->height));
    put<uint32_t>(buf, static_cast<uint32_t>(p->width));
    put<uint16_t>(buf, static_cast<uint16_t>(p->black_level));
    put<uint16_t>(buf, static_cast<uint16_t>(p->white_level));
    put<uint32_t>(buf, static_cast<uint32_t>(profile.iso));
    put<double>(buf, profile.gain_k);
    put<double>(buf, profile.sigma_r);
    for (double v : p->data) {
        double r = std::round(std::clamp(v, 0.0, 65535.0));
        put<uint16_t>(buf, static_cast<uint16_t>(r));
    }
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError("cannot open for writing: " + path);
    f.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!f) throw DataError("write failed: " + path);
}

std::pair<RawPatch, SensorProfile> load_raw(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open: " + path);
    std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

    uint64_t off = 0;
    if (buf.size() < 4 || std::memcmp(buf.data(), kMagic, 4) != 0)
        throw ParseError("LRF: bad magic", 0);
    off = 4;
    uint16_t version = take<uint16_t>(buf, off, "version");
    if (version != kVersion)
        throw ParseError("LRF: unknown version " + std::to_string(version), off - 2);
    uint16_t pattern_code = take<uint16_t>(buf, off, "bayer pattern");
    if (pattern_code > 3)
        throw ParseError("LRF: unknown bayer pattern code " + std::to_string(pattern_code),
                         off - 2);
    uint32_t h = take<uint32_t>(buf, off, "height");
    uint32_t w = take<uint32_t>(buf, off, "width");
    if (h == 0 || w == 0) throw ParseError("LRF: zero image dimension", off - 8);
    uint16_t black = take<uint16_t>(buf, off, "black level");
    uint16_t white = take<uint16_t>(buf, off, "white level");
    if (black >= white) throw ParseError("LRF: black_level >= white_level", off - 4);

    SensorProfile profile;
    profile.iso = static_cast<int>(take<uint32_t>(buf, off, "iso"));
    profile.gain_k = take<double>(buf, off, "gain_K");
    profile.sigma_r = take<double>(buf, off, "sigma_r");

    RawPatch patch;
    patch.height = static_cast<int>(h);
    patch.width = static_cast<int>(w);
    patch.black_level = black;
    patch.white_level = white;
    patch.normalized = false;
    patch.data.resize(patch.size());

    const uint64_t payload = 2ull * patch.size();
    if (off + payload > buf.size())
        throw ParseError("LRF: truncated payload", buf.size());
    for (int64_t i = 0; i < patch.size(); ++i) {
        uint16_t v;
        std::memcpy(&v, buf.data() + off + 2 * i, 2);
        patch.data[i] = static_cast<double>(v);
    }

    if (static_cast<BayerPattern>(pattern_code) != BayerPattern::RGGB) {
        // Planes are stored in the file's pattern order; permute to RGGB by
        // round-tripping through the mosaic.
        auto mosaic = unpack_bayer(patch, BayerPattern::RGGB);  // undo as-if-RGGB
        // Planes were really laid out in pattern order, so repack from the
        // mosaic interpreted with the declared pattern.
        RawPatch fixed = pack_bayer(mosaic, 2 * patch.height, 2 * patch.width,
                                    static_cast<BayerPattern>(pattern_code), black, white);
        patch.data = std::move(fixed.data);
    }
    return {std::move(patch), profile};
}

// --- profile sets -----------------------------------------------------------

std::vector<SensorProfile> load_profiles(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw DataError("cannot open profile file: " + path);
    std::vector<SensorProfile> out;
    std::map<int, bool> seen;
    std::string line;
    int lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        std::istringstream ss(line);
        SensorProfile p;
        if (!(ss >> p.iso)) continue;  // blank line
        if (!(ss >> p.gain_k >> p.sigma_r))
            throw DataError("profile line " + std::to_string(lineno) +
                            ": expected `iso gain_K sigma_r [sigma_read sigma_row quant_step]`");
        OracleNoiseParams o;
        if (ss >> o.sigma_read) {
            if (!(ss >> o.sigma_row >> o.quant_step))
                throw DataError("profile line " + std::to_string(lineno) +
                                ": oracle parameters need all of sigma_read sigma_row quant_step");
            p.oracle = o;
        }
        std::string rest;
        if (ss >> rest)
            throw DataError("profile line " + std::to_string(lineno) + ": trailing tokens");
        if (seen[p.iso])
            throw DataError("profile file: duplicate entry for iso " + std::to_string(p.iso));
        seen[p.iso] = true;
        validate_profile(p);
        out.push_back(p);
    }
    return out;
}

void save_profiles(const std::vector<SensorProfile>& profiles, const std::string& path) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw DataError("cannot open for writing: " + path);
    char buf[256];
    for (const auto& p : profiles) {
        if (p.oracle) {
            std::snprintf(buf, sizeof(buf), "%d %.17g %.17g %.17g %.17g %.17g\n", p.iso, p.gain_k,
                          p.sigma_r, p.oracle->sigma_read, p.oracle->sigma_row,
                          p.oracle->quant_step);
        } else {
            std::snprintf(buf, sizeof(buf), "%d %.17g %.17g\n", p.iso, p.gain_k, p.sigma_r);
        }
        f << buf;
    }
}

const SensorProfile& find_profile(const std::vector<SensorProfile>& profiles, int iso) {
    for (const auto& p : profiles)
        if (p.iso == iso) return p;
    throw DataError("no profile for iso " + std::to_string(iso));
}

void write_pgm_preview(const RawPatch& patch, const std::string& path, double gain) {
    RawPatch norm = patch.normalized ? patch : normalize(patch);
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError("cannot open for writing: " + path);
    f << "P5\n" << patch.width << " " << patch.height << "\n255\n";
    for (int i = 0; i < patch.height; ++i) {
        for (int j = 0; j < patch.width; ++j) {
            double g = 0.5 * (norm.at(1, i, j) + norm.at(2, i, j));
            double v = std::clamp(g * gain, 0.0, 1.0);
            v = std::pow(v, 1.0 / 2.2);
            f.put(static_cast<char>(std::lround(v * 255.0)));
        }
    }
}

}  // namespace lrnoise
