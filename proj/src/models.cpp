#include "lrnoise/models.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "lrnoise/errors.hpp"

namespace lrnoise {

namespace {

// He-style init scaled for the leaky slope used everywhere.
Tensor conv_weight(int cout, int cin, int k, RngStream& rng) {
    Tensor w({cout, cin, k, k});
    const double std = std::sqrt(2.0 / (1.0 + 0.2 * 0.2) / (cin * k * k));
    for (int64_t i = 0; i < w.size(); ++i) w[i] = rng.normal(0.0, std);
    return w;
}

Tensor tconv_weight(int cin, int cout, int k, RngStream& rng) {
    Tensor w({cin, cout, k, k});
    const double std = std::sqrt(2.0 / (1.0 + 0.2 * 0.2) / (cin * k * k));
    for (int64_t i = 0; i < w.size(); ++i) w[i] = rng.normal(0.0, std);
    return w;
}

ConvParams make_conv(int cout, int cin, int k, RngStream& rng) {
    return {conv_weight(cout, cin, k, rng), Tensor({cout})};
}

}  // namespace

UNetParams make_unet(int levels, int base, RngStream& rng) {
    if (levels < 1 || base < 1) throw ParamError("make_unet: levels and base must be >= 1");
    UNetParams p;
    p.levels = levels;
    p.base = base;
    p.in_conv = make_conv(base, 4, 3, rng);
    for (int l = 0; l < levels; ++l) {
        int w = base << l;
        UNetLevel lvl;
        lvl.conv1 = make_conv(w, w, 3, rng);
        lvl.conv2 = make_conv(w, w, 3, rng);
        lvl.down = make_conv(w * 2, w, 2, rng);
        p.enc.push_back(std::move(lvl));
    }
    int mid = base << levels;
    p.mid1 = make_conv(mid, mid, 3, rng);
    p.mid2 = make_conv(mid, mid, 3, rng);
    for (int l = levels - 1; l >= 0; --l) {
        int w = base << l;
        UNetDecoderLevel lvl;
        lvl.up = {tconv_weight(w * 2, w, 2, rng), Tensor({w})};
        lvl.conv1 = make_conv(w, w * 2, 3, rng);
        lvl.conv2 = make_conv(w, w, 3, rng);
        p.dec.push_back(std::move(lvl));
    }
    p.out_conv = {Tensor({4, base, 3, 3}), Tensor({4})};  // zero init: identity at start
    p.skip_gain = Tensor::full({1}, 1.0);
    return p;
}

namespace {

void collect(ConvParams& c, std::vector<Tensor*>& out) {
    out.push_back(&c.w);
    out.push_back(&c.b);
}

}  // namespace

std::vector<Tensor*> unet_parameters(UNetParams& p) {
    std::vector<Tensor*> out;
    collect(p.in_conv, out);
    for (auto& lvl : p.enc) {
        collect(lvl.conv1, out);
        collect(lvl.conv2, out);
        collect(lvl.down, out);
    }
    collect(p.mid1, out);
    collect(p.mid2, out);
    for (auto& lvl : p.dec) {
        collect(lvl.up, out);
        collect(lvl.conv1, out);
        collect(lvl.conv2, out);
    }
    collect(p.out_conv, out);
    out.push_back(&p.skip_gain);
    return out;
}

int64_t parameter_count(std::vector<Tensor*> params) {
    int64_t n = 0;
    for (const Tensor* t : params) n += t->size();
    return n;
}

namespace {

Var conv_act(Graph& g, Binder& bind, ConvParams& c, Var x, int stride, int pad) {
    Var y = g.add_channel_bias(g.conv2d(x, bind(c.w), stride, pad), bind(c.b));
    return g.leaky_relu(y, 0.2);
}

}  // namespace

Var unet_forward(Graph& g, Binder& bind, UNetParams& p, Var x, std::vector<Var>* taps) {
    const Tensor& t = g.value(x);
    if (t.rank() != 4 || t.dim(1) != 4)
        throw DimError("unet_forward: expected [B,4,H,W], got " + t.shape_str());
    const int div = 1 << p.levels;
    if (t.dim(2) % div != 0 || t.dim(3) % div != 0)
        throw DimError("unet_forward: spatial dims of " + t.shape_str() +
                       " must be divisible by " + std::to_string(div));

    Var h = conv_act(g, bind, p.in_conv, x, 1, 1);
    std::vector<Var> skips;
    for (auto& lvl : p.enc) {
        h = conv_act(g, bind, lvl.conv1, h, 1, 1);
        h = conv_act(g, bind, lvl.conv2, h, 1, 1);
        skips.push_back(h);
        h = conv_act(g, bind, lvl.down, h, 2, 0);
    }
    h = conv_act(g, bind, p.mid1, h, 1, 1);
    h = conv_act(g, bind, p.mid2, h, 1, 1);
    if (taps) taps->push_back(h);

    for (size_t i = 0; i < p.dec.size(); ++i) {
        auto& lvl = p.dec[i];
        Var up = g.transpose_conv2d(h, bind(lvl.up.w), 2);
        up = g.leaky_relu(g.add_channel_bias(up, bind(lvl.up.b)), 0.2);
        h = g.concat({up, skips[skips.size() - 1 - i]}, 1);
        h = conv_act(g, bind, lvl.conv1, h, 1, 1);
        h = conv_act(g, bind, lvl.conv2, h, 1, 1);
        if (taps) taps->push_back(h);
    }
    Var out = g.add_channel_bias(g.conv2d(h, bind(p.out_conv.w), 1, 1), bind(p.out_conv.b));
    return g.add(g.scale_by(x, bind(p.skip_gain)), out);
}

// --- FTD -----------------------------------------------------------------------

FtdParams make_ftd(int input_size, int dim, int heads, int ff_ratio, bool spectral,
                   RngStream& rng) {
    if (input_size < 16 || (input_size & (input_size - 1)) != 0)
        throw ParamError("make_ftd: input size must be a power of two >= 16");
    FtdParams p;
    p.input_size = input_size;
    p.dim = dim;
    p.heads = heads;
    p.ff_ratio = ff_ratio;
    p.spectral = spectral;
    p.embed1 = make_patchify(p.patch1, dim, rng);
    p.embed2 = make_patchify(p.patch2, dim, rng);
    p.embed3 = make_patchify(p.patch3, dim, rng);
    const int g1 = input_size / p.patch1;
    p.pos = Tensor({g1 * g1, dim});
    for (int64_t i = 0; i < p.pos.size(); ++i) p.pos[i] = rng.normal(0.0, 0.02);
    if (spectral) {
        p.block1 = make_fourier_block(dim, heads, ff_ratio, rng);
        p.block2 = make_fourier_block(2 * dim, heads, ff_ratio, rng);
        p.block3 = make_fourier_block(3 * dim, heads, ff_ratio, rng);
    } else {
        p.block1.dim = dim;
        p.block1.spatial = make_transformer_block(dim, heads, ff_ratio, rng);
        p.block2.dim = 2 * dim;
        p.block2.spatial = make_transformer_block(2 * dim, heads, ff_ratio, rng);
        p.block3.dim = 3 * dim;
        p.block3.spatial = make_transformer_block(3 * dim, heads, ff_ratio, rng);
    }
    p.tail = make_transformer_block(3 * dim, heads, ff_ratio, rng);
    p.head = make_linear(3 * dim, 1, rng);
    return p;
}

namespace {

void collect_stage(FourierBlockParams& b, bool spectral, std::vector<Tensor*>& out) {
    if (spectral) {
        collect(b, out);
    } else {
        collect(b.spatial, out);  // vanilla ablation: only the plain block exists
    }
}

}  // namespace

std::vector<Tensor*> ftd_parameters(FtdParams& p) {
    std::vector<Tensor*> out;
    collect(p.embed1, out);
    collect(p.embed2, out);
    collect(p.embed3, out);
    out.push_back(&p.pos);
    collect_stage(p.block1, p.spectral, out);
    collect_stage(p.block2, p.spectral, out);
    collect_stage(p.block3, p.spectral, out);
    collect(p.tail, out);
    collect(p.head, out);
    return out;
}

namespace {

Var ftd_stage(Graph& g, Binder& bind, FtdParams& p, FourierBlockParams& b, Var tokens, int grid) {
    if (p.spectral) return fourier_transformer_block(g, bind, b, tokens, grid, grid);
    return vanilla_transformer_block(g, bind, b.spatial, tokens);
}

}  // namespace

Var ftd_forward(Graph& g, Binder& bind, FtdParams& p, Var image) {
    const Tensor& t = g.value(image);
    if (t.rank() != 4 || t.dim(1) != 4 || t.dim(2) != p.input_size || t.dim(3) != p.input_size)
        throw DimError("ftd_forward: expected [B,4," + std::to_string(p.input_size) + "," +
                       std::to_string(p.input_size) + "], got " + t.shape_str());
    const int g1 = p.input_size / p.patch1;
    const int g2 = p.input_size / p.patch2;
    const int g3 = p.input_size / p.patch3;

    Var h = patchify(g, bind, p.embed1, image);
    h = g.add_bias(h, bind(p.pos));
    h = ftd_stage(g, bind, p, p.block1, h, g1);
    h = seq_downsample(g, h, g1, g1, 2);

    Var t2 = patchify(g, bind, p.embed2, image);
    h = g.concat({h, t2}, 2);
    h = ftd_stage(g, bind, p, p.block2, h, g2);
    h = seq_downsample(g, h, g2, g2, 2);

    Var t3 = patchify(g, bind, p.embed3, image);
    h = g.concat({h, t3}, 2);
    h = ftd_stage(g, bind, p, p.block3, h, g3);

    h = vanilla_transformer_block(g, bind, p.tail, h);
    Var pooled = g.mean_axis(h, 1);  // [B, 3*dim]
    return linear(g, bind, p.head, pooled);
}

// --- initial noise ----------------------------------------------------------------

Tensor sample_init_noise(const InitNoiseSpec& spec, RngStream& rng) {
    if (spec.sigma_r < 0.0) throw ParamError("sample_init_noise: sigma_r must be >= 0");
    if (spec.height <= 0 || spec.width <= 0)
        throw DimError("sample_init_noise: invalid shape");
    Tensor out({4, spec.height, spec.width});
    RngStream base = rng.fork();
    const int64_t n = out.size();
    if (spec.sigma_r > 0.0) {
#pragma omp parallel for schedule(static)
        for (int64_t i = 0; i < n; ++i) {
            RngStream pix = base.split(static_cast<uint64_t>(i));
            out[i] = pix.normal(0.0, spec.sigma_r);
        }
    }
    return out;
}

Tensor sample_init_noise_batch(const std::vector<InitNoiseSpec>& specs, RngStream& rng) {
    if (specs.empty()) throw DataError("sample_init_noise_batch: empty batch");
    const int h = specs[0].height, w = specs[0].width;
    Tensor out({static_cast<int>(specs.size()), 4, h, w});
    int64_t off = 0;
    for (const auto& spec : specs) {
        if (spec.height != h || spec.width != w)
            throw DimError("sample_init_noise_batch: mixed shapes in batch");
        Tensor one = sample_init_noise(spec, rng);
        std::copy(one.data(), one.data() + one.size(), out.data() + off);
        off += one.size();
    }
    return out;
}

RawPatch compose_noisy(const RawPatch& y_hat, const Tensor& n_indep) {
    if (!y_hat.normalized) throw StateError("compose_noisy: y_hat must be normalized");
    if (n_indep.size() != y_hat.size())
        throw DimError("compose_noisy: field " + n_indep.shape_str() + " vs patch 4x" +
                       std::to_string(y_hat.height) + "x" + std::to_string(y_hat.width));
    RawPatch out = y_hat;
    for (int64_t i = 0; i < out.size(); ++i)
        out.data[i] = std::clamp(y_hat.data[i] + n_indep[i], 0.0, 1.0);
    return out;
}

// --- checkpoints --------------------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'L', 'R', 'D', 'M'};
constexpr uint16_t kVersion = 1;

template <typename T>
void put(std::string& buf, T v) {
    char bytes[sizeof(T)];
    std::memcpy(bytes, &v, sizeof(T));
    buf.append(bytes, sizeof(T));
}

template <typename T>
T take(const std::string& buf, uint64_t& off, const char* what) {
    if (off + sizeof(T) > buf.size())
        throw ParseError(std::string("checkpoint: truncated while reading ") + what, off);
    T v;
    std::memcpy(&v, buf.data() + off, sizeof(T));
    off += sizeof(T);
    return v;
}

void write_payload(std::string& buf, std::vector<Tensor*> params) {
    put<uint64_t>(buf, static_cast<uint64_t>(parameter_count(params)));
    for (const Tensor* t : params)
        buf.append(reinterpret_cast<const char*>(t->data()), sizeof(double) * t->size());
}

void read_payload(const std::string& buf, uint64_t& off, std::vector<Tensor*> params) {
    uint64_t count = take<uint64_t>(buf, off, "weight count");
    if (count != static_cast<uint64_t>(parameter_count(params)))
        throw DataError("checkpoint: weight count " + std::to_string(count) +
                        " does not match architecture (" +
                        std::to_string(parameter_count(params)) + ")");
    for (Tensor* t : params) {
        const uint64_t bytes = sizeof(double) * static_cast<uint64_t>(t->size());
        if (off + bytes > buf.size()) throw ParseError("checkpoint: truncated payload", off);
        std::memcpy(t->data(), buf.data() + off, bytes);
        off += bytes;
    }
}

std::string read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open checkpoint: " + path);
    return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

void write_file(const std::string& path, const std::string& buf) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError("cannot open for writing: " + path);
    f.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!f) throw DataError("write failed: " + path);
}

uint16_t check_header(const std::string& buf, uint64_t& off) {
    if (buf.size() < 4 || std::memcmp(buf.data(), kMagic, 4) != 0)
        throw ParseError("checkpoint: bad magic", 0);
    off = 4;
    uint16_t version = take<uint16_t>(buf, off, "version");
    if (version != kVersion)
        throw ParseError("checkpoint: unknown version " + std::to_string(version), off - 2);
    return take<uint16_t>(buf, off, "network kind");
}

}  // namespace

void save_unet(UNetParams& p, NetKind kind, const std::string& path) {
    if (kind == NetKind::Ftd) throw ParamError("save_unet: wrong kind tag");
    std::string buf;
    buf.append(kMagic, 4);
    put<uint16_t>(buf, kVersion);
    put<uint16_t>(buf, static_cast<uint16_t>(kind));
    put<uint32_t>(buf, static_cast<uint32_t>(p.levels));
    put<uint32_t>(buf, static_cast<uint32_t>(p.base));
    write_payload(buf, unet_parameters(p));
    write_file(path, buf);
}

UNetParams load_unet(const std::string& path, NetKind expected_kind) {
    std::string buf = read_file(path);
    uint64_t off = 0;
    uint16_t kind = check_header(buf, off);
    if (kind != static_cast<uint16_t>(expected_kind))
        throw DataError("checkpoint " + path + ": kind tag " + std::to_string(kind) +
                        " does not match the expected network");
    uint32_t levels = take<uint32_t>(buf, off, "levels");
    uint32_t base = take<uint32_t>(buf, off, "base width");
    RngStream dummy(0);
    UNetParams p = make_unet(static_cast<int>(levels), static_cast<int>(base), dummy);
    read_payload(buf, off, unet_parameters(p));
    return p;
}

void save_ftd(FtdParams& p, const std::string& path) {
    std::string buf;
    buf.append(kMagic, 4);
    put<uint16_t>(buf, kVersion);
    put<uint16_t>(buf, static_cast<uint16_t>(NetKind::Ftd));
    put<uint32_t>(buf, static_cast<uint32_t>(p.input_size));
    put<uint32_t>(buf, static_cast<uint32_t>(p.dim));
    put<uint32_t>(buf, static_cast<uint32_t>(p.heads));
    put<uint32_t>(buf, static_cast<uint32_t>(p.ff_ratio));
    put<uint16_t>(buf, p.spectral ? 1 : 0);
    write_payload(buf, ftd_parameters(p));
    write_file(path, buf);
}

FtdParams load_ftd(const std::string& path) {
    std::string buf = read_file(path);
    uint64_t off = 0;
    uint16_t kind = check_header(buf, off);
    if (kind != static_cast<uint16_t>(NetKind::Ftd))
        throw DataError("checkpoint " + path + ": not a discriminator checkpoint");
    uint32_t input_size = take<uint32_t>(buf, off, "input size");
    uint32_t dim = take<uint32_t>(buf, off, "dim");
    uint32_t heads = take<uint32_t>(buf, off, "heads");
    uint32_t ff = take<uint32_t>(buf, off, "ff ratio");
    uint16_t spectral = take<uint16_t>(buf, off, "spectral flag");
    RngStream dummy(0);
    FtdParams p = make_ftd(static_cast<int>(input_size), static_cast<int>(dim),
                           static_cast<int>(heads), static_cast<int>(ff), spectral != 0, dummy);
    read_payload(buf, off, ftd_parameters(p));
    return p;
}

NetKind checkpoint_kind(const std::string& path) {
    std::string buf = read_file(path);
    uint64_t off = 0;
    uint16_t kind = check_header(buf, off);
    if (kind < 1 || kind > 3) throw ParseError("checkpoint: unknown kind tag", 6);
    return static_cast<NetKind>(kind);
}

void require_unet_arch(const UNetParams& p, int levels, int base) {
    if (p.levels != levels || p.base != base)
        throw DataError("architecture mismatch: checkpoint has levels=" +
                        std::to_string(p.levels) + " base=" + std::to_string(p.base) +
                        ", expected levels=" + std::to_string(levels) +
                        " base=" + std::to_string(base));
}

void require_ftd_arch(const FtdParams& p, int input_size, int dim, int heads, bool spectral) {
    if (p.input_size != input_size || p.dim != dim || p.heads != heads ||
        p.spectral != spectral)
        throw DataError("architecture mismatch: discriminator checkpoint does not match the "
                        "requested configuration");
}

}  // namespace lrnoise
