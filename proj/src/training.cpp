#include "lrnoise/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "lrnoise/errors.hpp"
#include "lrnoise/metrics.hpp"
#include "lrnoise/sensor.hpp"

namespace lrnoise {

// --- config ---------------------------------------------------------------------

namespace {

const std::map<std::string, int> kConfigKeys = {
    {"lambda1", 0},      {"lambda2", 1},    {"penalty_coef", 2},
    {"lr_init", 3},      {"lr_final", 4},   {"adam_beta1", 5},
    {"adam_beta2", 6},   {"epochs", 7},     {"batch_size", 8},
    {"patch_size", 9},   {"critic_steps_per_gen_step", 10},
    {"seed", 11},
};

}  // namespace

TrainConfig load_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw DataError("cannot open config: " + path);
    TrainConfig cfg;
    std::string line;
    int lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        auto trimmed = line;
        trimmed.erase(0, trimmed.find_first_not_of(" \t\r"));
        if (trimmed.empty()) continue;
        auto eq = trimmed.find('=');
        if (eq == std::string::npos)
            throw DataError("config line " + std::to_string(lineno) + ": expected key=value");
        std::string key = trimmed.substr(0, eq);
        std::string value = trimmed.substr(eq + 1);
        key.erase(key.find_last_not_of(" \t") + 1);
        value.erase(0, value.find_first_not_of(" \t"));
        value.erase(value.find_last_not_of(" \t\r") + 1);
        auto it = kConfigKeys.find(key);
        if (it == kConfigKeys.end())
            throw DataError("config line " + std::to_string(lineno) + ": unknown key '" + key +
                            "'");
        try {
            switch (it->second) {
                case 0: cfg.lambda1 = std::stod(value); break;
                case 1: cfg.lambda2 = std::stod(value); break;
                case 2: cfg.penalty_coef = std::stod(value); break;
                case 3: cfg.lr_init = std::stod(value); break;
                case 4: cfg.lr_final = std::stod(value); break;
                case 5: cfg.adam_beta1 = std::stod(value); break;
                case 6: cfg.adam_beta2 = std::stod(value); break;
                case 7: cfg.epochs = std::stoi(value); break;
                case 8: cfg.batch_size = std::stoi(value); break;
                case 9: cfg.patch_size = std::stoi(value); break;
                case 10: cfg.critic_steps_per_gen_step = std::stoi(value); break;
                case 11: cfg.seed = std::stoull(value); break;
            }
        } catch (const std::exception&) {
            throw DataError("config line " + std::to_string(lineno) + ": bad value '" + value +
                            "'");
        }
    }
    validate_config(cfg);
    return cfg;
}

void save_config(const TrainConfig& cfg, const std::string& path) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw DataError("cannot open for writing: " + path);
    char buf[512];
    std::snprintf(buf, sizeof(buf),
                  "lambda1=%.17g\nlambda2=%.17g\npenalty_coef=%.17g\nlr_init=%.17g\n"
                  "lr_final=%.17g\nadam_beta1=%.17g\nadam_beta2=%.17g\nepochs=%d\n"
                  "batch_size=%d\npatch_size=%d\ncritic_steps_per_gen_step=%d\nseed=%llu\n",
                  cfg.lambda1, cfg.lambda2, cfg.penalty_coef, cfg.lr_init, cfg.lr_final,
                  cfg.adam_beta1, cfg.adam_beta2, cfg.epochs, cfg.batch_size, cfg.patch_size,
                  cfg.critic_steps_per_gen_step,
                  static_cast<unsigned long long>(cfg.seed));
    f << buf;
}

void validate_config(const TrainConfig& cfg) {
    if (cfg.lr_init <= 0.0 || cfg.lr_final <= 0.0)
        throw ParamError("config: learning rates must be > 0");
    if (cfg.lambda1 < 0.0 || cfg.lambda2 < 0.0)
        throw ParamError("config: lambda weights must be >= 0");
    if (cfg.penalty_coef < 0.0) throw ParamError("config: penalty_coef must be >= 0");
    if (cfg.epochs < 1) throw ParamError("config: epochs must be >= 1");
    if (cfg.batch_size < 1) throw ParamError("config: batch_size must be >= 1");
    if (cfg.patch_size < 16) throw ParamError("config: patch_size must be >= 16");
    if (cfg.critic_steps_per_gen_step < 1)
        throw ParamError("config: critic_steps_per_gen_step must be >= 1");
    if (cfg.adam_beta1 <= 0.0 || cfg.adam_beta1 >= 1.0 || cfg.adam_beta2 <= 0.0 ||
        cfg.adam_beta2 >= 1.0)
        throw ParamError("config: adam betas must lie in (0, 1)");
}

double cosine_lr(int64_t t, int64_t total, double lr_init, double lr_final) {
    if (total <= 0) return lr_final;
    if (t < 0) t = 0;
    if (t > total) t = total;
    double c = std::cos(M_PI * static_cast<double>(t) / static_cast<double>(total));
    return lr_final + 0.5 * (lr_init - lr_final) * (1.0 + c);
}

// --- adam -----------------------------------------------------------------------

AdamState make_adam_state(const std::vector<Tensor*>& params) {
    AdamState st;
    for (const Tensor* t : params) {
        st.m.push_back(Tensor::zeros(t->shape()));
        st.v.push_back(Tensor::zeros(t->shape()));
    }
    return st;
}

void adam_step(const std::vector<Tensor*>& params, const std::vector<Tensor>& grads,
               AdamState& state, double lr, double beta1, double beta2, double eps) {
    if (params.size() != grads.size() || params.size() != state.m.size())
        throw DimError("adam_step: parameter/gradient/state sizes disagree");
    state.step += 1;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
    for (size_t i = 0; i < params.size(); ++i) {
        Tensor& p = *params[i];
        const Tensor& gr = grads[i];
        Tensor& m = state.m[i];
        Tensor& v = state.v[i];
        if (gr.size() != p.size()) throw DimError("adam_step: gradient shape mismatch");
        for (int64_t j = 0; j < p.size(); ++j) {
            m[j] = beta1 * m[j] + (1.0 - beta1) * gr[j];
            v[j] = beta2 * v[j] + (1.0 - beta2) * gr[j] * gr[j];
            double mhat = m[j] / bc1;
            double vhat = v[j] / bc2;
            p[j] -= lr * mhat / (std::sqrt(vhat) + eps);
        }
    }
}

// --- losses -----------------------------------------------------------------------

AlignedLosses aligned_losses(Graph& g, UNetParams& denoiser, Var d_hat, Var d_rn) {
    Binder frozen(g, false);
    std::vector<Var> taps_a, taps_b;
    Var pa = unet_forward(g, frozen, denoiser, d_hat, &taps_a);
    Var pb = unet_forward(g, frozen, denoiser, d_rn, &taps_b);
    AlignedLosses out;
    out.l1 = g.reduce_mean(g.abs(g.sub(pa, pb)));
    Var acc;
    for (size_t i = 0; i < taps_a.size(); ++i) {
        Var d = g.sub(taps_a[i], taps_b[i]);
        Var mse = g.reduce_mean(g.mul(d, d));
        acc = (i == 0) ? mse : g.add(acc, mse);
    }
    out.perceptual = g.scale(acc, 1.0 / static_cast<double>(taps_a.size()));
    return out;
}

Var loss_l1_aligned(Graph& g, UNetParams& denoiser, Var d_hat, Var d_rn) {
    Binder frozen(g, false);
    Var pa = unet_forward(g, frozen, denoiser, d_hat);
    Var pb = unet_forward(g, frozen, denoiser, d_rn);
    return g.reduce_mean(g.abs(g.sub(pa, pb)));
}

Var loss_perceptual(Graph& g, UNetParams& denoiser, Var d_hat, Var d_rn) {
    Binder frozen(g, false);
    std::vector<Var> taps_a, taps_b;
    unet_forward(g, frozen, denoiser, d_hat, &taps_a);
    unet_forward(g, frozen, denoiser, d_rn, &taps_b);
    Var acc;
    for (size_t i = 0; i < taps_a.size(); ++i) {
        Var d = g.sub(taps_a[i], taps_b[i]);
        Var mse = g.reduce_mean(g.mul(d, d));
        acc = (i == 0) ? mse : g.add(acc, mse);
    }
    return g.scale(acc, 1.0 / static_cast<double>(taps_a.size()));
}

double diff_quotient_penalty(double s1, double s2, double l2_dist) {
    if (l2_dist <= 0.0) throw ParamError("diff_quotient_penalty: distance must be > 0");
    double q = std::fabs(s1 - s2) / l2_dist;
    double excess = q - 1.0;
    return excess > 0.0 ? excess * excess : 0.0;
}

Var critic_loss(Graph& g, Binder& critic_bind, FtdParams& critic, Var real_batch, Var fake_batch,
                Var interp_pairs, double pair_dist, double penalty_coef) {
    Var s_real = ftd_forward(g, critic_bind, critic, real_batch);
    Var s_fake = ftd_forward(g, critic_bind, critic, fake_batch);
    Var gap = g.sub(g.reduce_mean(s_fake), g.reduce_mean(s_real));
    if (penalty_coef == 0.0) return gap;

    Var s_pairs = ftd_forward(g, critic_bind, critic, interp_pairs);  // [2P, 1]
    const int P = g.value(s_pairs).dim(0) / 2;
    auto halves = g.split(g.reshape(s_pairs, {2, P}), 0, 2);
    Var quotient = g.scale(g.abs(g.sub(halves[0], halves[1])), 1.0 / pair_dist);
    Var excess = g.relu(g.add_scalar(quotient, -1.0));
    Var penalty = g.reduce_mean(g.mul(excess, excess));
    return g.add(gap, g.scale(penalty, penalty_coef));
}

Var generator_adv_loss(Graph& g, Binder& critic_bind, FtdParams& critic, Var fake_batch) {
    return g.scale(g.reduce_mean(ftd_forward(g, critic_bind, critic, fake_batch)), -1.0);
}

Var total_loss(Graph& g, Var adv, Var l1, Var perceptual, double lambda1, double lambda2) {
    Var out = adv;
    if (lambda1 != 0.0) out = g.add(out, g.scale(l1, lambda1));
    if (lambda2 != 0.0) out = g.add(out, g.scale(perceptual, lambda2));
    return out;
}

// --- inference path -----------------------------------------------------------------

RawPatch synthesize_learned(const RawPatch& clean, UNetParams& generator, double gain_k,
                            double sigma_r_dn, RngStream& rng) {
    if (clean.normalized) throw StateError("synthesize_learned: expected a DN-domain patch");
    RawPatch sig = clean;
    sig.black_level = 0;
    for (auto& v : sig.data) {
        v -= clean.black_level;
        if (v < 0.0) throw ParamError("synthesize_learned: pixel below black level");
    }
    RawPatch shot = sample_shot_noise(sig, gain_k, rng);
    const double range = clean.range();

    Tensor n_init =
        sample_init_noise({sigma_r_dn / range, clean.height, clean.width}, rng);
    Tensor batch({1, 4, clean.height, clean.width});
    std::copy(n_init.data(), n_init.data() + n_init.size(), batch.data());

    Graph g;
    Binder bind(g, false);
    Var n_indep = unet_forward(g, bind, generator, g.leaf(std::move(batch)));
    const Tensor& field = g.value(n_indep);

    RawPatch out = clean;
    for (int64_t i = 0; i < out.size(); ++i) {
        double d_hat = std::clamp(shot.data[i] / range + field[i], 0.0, 1.0);
        out.data[i] = d_hat * range + clean.black_level;
    }
    return out;
}

// --- training state persistence --------------------------------------------------------

namespace {

constexpr char kStateMagic[4] = {'L', 'R', 'D', 'T'};
constexpr uint16_t kStateVersion = 1;

template <typename T>
void sput(std::string& buf, T v) {
    char bytes[sizeof(T)];
    std::memcpy(bytes, &v, sizeof(T));
    buf.append(bytes, sizeof(T));
}

template <typename T>
T stake(const std::string& buf, uint64_t& off, const char* what) {
    if (off + sizeof(T) > buf.size())
        throw ParseError(std::string("train state: truncated while reading ") + what, off);
    T v;
    std::memcpy(&v, buf.data() + off, sizeof(T));
    off += sizeof(T);
    return v;
}

void put_tensors(std::string& buf, const std::vector<Tensor*>& ts) {
    for (const Tensor* t : ts)
        buf.append(reinterpret_cast<const char*>(t->data()), sizeof(double) * t->size());
}

void put_tensors(std::string& buf, const std::vector<Tensor>& ts) {
    for (const Tensor& t : ts)
        buf.append(reinterpret_cast<const char*>(t.data()), sizeof(double) * t.size());
}

void get_tensors(const std::string& buf, uint64_t& off, std::vector<Tensor*> ts) {
    for (Tensor* t : ts) {
        uint64_t bytes = sizeof(double) * static_cast<uint64_t>(t->size());
        if (off + bytes > buf.size()) throw ParseError("train state: truncated tensors", off);
        std::memcpy(t->data(), buf.data() + off, bytes);
        off += bytes;
    }
}

void get_tensors(const std::string& buf, uint64_t& off, std::vector<Tensor>& ts) {
    for (Tensor& t : ts) {
        uint64_t bytes = sizeof(double) * static_cast<uint64_t>(t.size());
        if (off + bytes > buf.size()) throw ParseError("train state: truncated tensors", off);
        std::memcpy(t.data(), buf.data() + off, bytes);
        off += bytes;
    }
}

struct DenoiserState {
    int epochs_done = 0;
};

void save_denoiser_state(const std::string& path, UNetParams& net, AdamState& adam,
                         int epochs_done) {
    std::string buf;
    buf.append(kStateMagic, 4);
    sput<uint16_t>(buf, kStateVersion);
    sput<uint16_t>(buf, 1);
    sput<uint32_t>(buf, static_cast<uint32_t>(epochs_done));
    sput<uint32_t>(buf, static_cast<uint32_t>(net.levels));
    sput<uint32_t>(buf, static_cast<uint32_t>(net.base));
    sput<uint64_t>(buf, static_cast<uint64_t>(adam.step));
    put_tensors(buf, unet_parameters(net));
    put_tensors(buf, adam.m);
    put_tensors(buf, adam.v);
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError("cannot write train state: " + path);
    f.write(buf.data(), static_cast<std::streamsize>(buf.size()));
}

int load_denoiser_state(const std::string& path, UNetParams& net, AdamState& adam) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open train state: " + path);
    std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    uint64_t off = 0;
    if (buf.size() < 4 || std::memcmp(buf.data(), kStateMagic, 4) != 0)
        throw ParseError("train state: bad magic", 0);
    off = 4;
    if (stake<uint16_t>(buf, off, "version") != kStateVersion)
        throw ParseError("train state: unknown version", off - 2);
    if (stake<uint16_t>(buf, off, "kind") != 1)
        throw DataError("train state: not a denoiser training state");
    int epochs_done = static_cast<int>(stake<uint32_t>(buf, off, "epochs done"));
    int levels = static_cast<int>(stake<uint32_t>(buf, off, "levels"));
    int base = static_cast<int>(stake<uint32_t>(buf, off, "base"));
    require_unet_arch(net, levels, base);
    adam.step = static_cast<int64_t>(stake<uint64_t>(buf, off, "adam step"));
    get_tensors(buf, off, unet_parameters(net));
    get_tensors(buf, off, adam.m);
    get_tensors(buf, off, adam.v);
    return epochs_done;
}

void save_noise_state(const std::string& path, UNetParams& gen, AdamState& gen_adam,
                      FtdParams& ftd, AdamState& ftd_adam, int epochs_done, double best_val,
                      int best_epoch, std::vector<Tensor>& best_gen, double initial_val) {
    std::string buf;
    buf.append(kStateMagic, 4);
    sput<uint16_t>(buf, kStateVersion);
    sput<uint16_t>(buf, 2);
    sput<uint32_t>(buf, static_cast<uint32_t>(epochs_done));
    sput<double>(buf, best_val);
    sput<int32_t>(buf, best_epoch);
    sput<double>(buf, initial_val);
    sput<uint32_t>(buf, static_cast<uint32_t>(gen.levels));
    sput<uint32_t>(buf, static_cast<uint32_t>(gen.base));
    sput<uint32_t>(buf, static_cast<uint32_t>(ftd.input_size));
    sput<uint32_t>(buf, static_cast<uint32_t>(ftd.dim));
    sput<uint32_t>(buf, static_cast<uint32_t>(ftd.heads));
    sput<uint32_t>(buf, static_cast<uint32_t>(ftd.ff_ratio));
    sput<uint16_t>(buf, ftd.spectral ? 1 : 0);
    sput<uint64_t>(buf, static_cast<uint64_t>(gen_adam.step));
    sput<uint64_t>(buf, static_cast<uint64_t>(ftd_adam.step));
    put_tensors(buf, unet_parameters(gen));
    put_tensors(buf, gen_adam.m);
    put_tensors(buf, gen_adam.v);
    put_tensors(buf, ftd_parameters(ftd));
    put_tensors(buf, ftd_adam.m);
    put_tensors(buf, ftd_adam.v);
    put_tensors(buf, best_gen);
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError("cannot write train state: " + path);
    f.write(buf.data(), static_cast<std::streamsize>(buf.size()));
}

struct NoiseStateHeader {
    int epochs_done;
    double best_val;
    int best_epoch;
    double initial_val;
};

NoiseStateHeader load_noise_state(const std::string& path, UNetParams& gen, AdamState& gen_adam,
                                  FtdParams& ftd, AdamState& ftd_adam,
                                  std::vector<Tensor>& best_gen) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open train state: " + path);
    std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    uint64_t off = 0;
    if (buf.size() < 4 || std::memcmp(buf.data(), kStateMagic, 4) != 0)
        throw ParseError("train state: bad magic", 0);
    off = 4;
    if (stake<uint16_t>(buf, off, "version") != kStateVersion)
        throw ParseError("train state: unknown version", off - 2);
    if (stake<uint16_t>(buf, off, "kind") != 2)
        throw DataError("train state: not a noise-model training state");
    NoiseStateHeader h;
    h.epochs_done = static_cast<int>(stake<uint32_t>(buf, off, "epochs done"));
    h.best_val = stake<double>(buf, off, "best val");
    h.best_epoch = static_cast<int>(stake<int32_t>(buf, off, "best epoch"));
    h.initial_val = stake<double>(buf, off, "initial val");
    int levels = static_cast<int>(stake<uint32_t>(buf, off, "levels"));
    int base = static_cast<int>(stake<uint32_t>(buf, off, "base"));
    require_unet_arch(gen, levels, base);
    int input_size = static_cast<int>(stake<uint32_t>(buf, off, "input size"));
    int dim = static_cast<int>(stake<uint32_t>(buf, off, "dim"));
    int heads = static_cast<int>(stake<uint32_t>(buf, off, "heads"));
    stake<uint32_t>(buf, off, "ff ratio");
    uint16_t spectral = stake<uint16_t>(buf, off, "spectral");
    require_ftd_arch(ftd, input_size, dim, heads, spectral != 0);
    gen_adam.step = static_cast<int64_t>(stake<uint64_t>(buf, off, "gen adam step"));
    ftd_adam.step = static_cast<int64_t>(stake<uint64_t>(buf, off, "ftd adam step"));
    get_tensors(buf, off, unet_parameters(gen));
    get_tensors(buf, off, gen_adam.m);
    get_tensors(buf, off, gen_adam.v);
    get_tensors(buf, off, ftd_parameters(ftd));
    get_tensors(buf, off, ftd_adam.m);
    get_tensors(buf, off, ftd_adam.v);
    get_tensors(buf, off, best_gen);
    return h;
}

// --- batch assembly helpers ---

struct CropRef {
    int image = 0;
    int oi = 0, oj = 0;
};

Tensor stack_patches(const PairedSet& set, const std::vector<CropRef>& crops, bool noisy_side,
                     int patch) {
    Tensor out({static_cast<int>(crops.size()), 4, patch, patch});
    int64_t off = 0;
    for (const auto& cr : crops) {
        const RawPatch& src = noisy_side ? set.noisy[static_cast<size_t>(cr.image)]
                                         : set.clean[static_cast<size_t>(cr.image)];
        const double inv = 1.0 / src.range();
        for (int c = 0; c < 4; ++c)
            for (int i = 0; i < patch; ++i)
                for (int j = 0; j < patch; ++j)
                    out[off++] = std::clamp(
                        (src.at(c, cr.oi + i, cr.oj + j) - src.black_level) * inv, 0.0, 1.0);
    }
    return out;
}

// Shot-noise half of the fake path: per-crop normalized Y_hat.
Tensor stack_shot(const PairedSet& set, const std::vector<CropRef>& crops,
                  const std::vector<double>& gains, int patch, RngStream& rng) {
    Tensor out({static_cast<int>(crops.size()), 4, patch, patch});
    int64_t off = 0;
    for (size_t n = 0; n < crops.size(); ++n) {
        const auto& cr = crops[n];
        const RawPatch& src = set.clean[static_cast<size_t>(cr.image)];
        RawPatch sig;
        sig.height = patch;
        sig.width = patch;
        sig.black_level = 0;
        sig.white_level = src.white_level;
        sig.normalized = false;
        sig.data.resize(sig.size());
        int64_t p = 0;
        for (int c = 0; c < 4; ++c)
            for (int i = 0; i < patch; ++i)
                for (int j = 0; j < patch; ++j)
                    sig.data[p++] =
                        std::max(0.0, src.at(c, cr.oi + i, cr.oj + j) - src.black_level);
        RawPatch shot = sample_shot_noise(sig, gains[n], rng);
        const double inv = 1.0 / src.range();
        for (int64_t i = 0; i < shot.size(); ++i) out[off++] = shot.data[i] * inv;
    }
    return out;
}

std::vector<double> finite_or_throw(std::initializer_list<double> vals, const char* where) {
    for (double v : vals)
        if (!std::isfinite(v))
            throw DivergenceError(std::string("non-finite loss during ") + where);
    return vals;
}

std::vector<Tensor> grads_of(Graph& g, Binder& bind, const std::vector<Tensor*>& params) {
    std::vector<Tensor> grads;
    grads.reserve(params.size());
    for (Tensor* t : params) {
        Var v = bind.bound(*t);
        grads.push_back(g.has_grad(v) ? g.grad(v) : Tensor::zeros(t->shape()));
    }
    return grads;
}

std::vector<int> shuffled_indices(int n, RngStream& rng) {
    std::vector<int> idx(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) idx[static_cast<size_t>(i)] = i;
    for (int i = n - 1; i > 0; --i) {
        int j = static_cast<int>(rng.next_u64() % static_cast<uint64_t>(i + 1));
        std::swap(idx[static_cast<size_t>(i)], idx[static_cast<size_t>(j)]);
    }
    return idx;
}

// Cycling shuffled sampler: deterministic stream of dataset indices.
class IndexCycle {
public:
    IndexCycle(int n, RngStream shuffle_rng) : n_(n), rng_(shuffle_rng) { refill(); }
    int next() {
        if (pos_ >= order_.size()) refill();
        return order_[pos_++];
    }

private:
    void refill() {
        order_ = shuffled_indices(n_, rng_);
        pos_ = 0;
    }
    int n_;
    RngStream rng_;
    std::vector<int> order_;
    size_t pos_ = 0;
};

CropRef make_crop(int image, const RawPatch& src, int patch, RngStream& rng) {
    CropRef cr;
    cr.image = image;
    if (src.height < patch || src.width < patch)
        throw DataError("image smaller than the training patch size");
    cr.oi = src.height == patch
                ? 0
                : static_cast<int>(rng.next_u64() % static_cast<uint64_t>(src.height - patch + 1));
    cr.oj = src.width == patch
                ? 0
                : static_cast<int>(rng.next_u64() % static_cast<uint64_t>(src.width - patch + 1));
    return cr;
}

}  // namespace

// --- denoiser training -----------------------------------------------------------------

DenoiserTrainResult train_denoiser(const PairedSet& pairs, const TrainConfig& cfg,
                                   const LogSink& log, const std::string& state_path,
                                   int stop_after_epoch, const std::string& resume_from) {
    validate_config(cfg);
    if (pairs.empty()) throw DataError("train_denoiser: empty dataset");

    const int n = static_cast<int>(pairs.size());
    const int n_val = std::max(1, n / 8);
    const int n_train = std::max(1, n - n_val);
    const int batch = std::min(cfg.batch_size, n_train);
    const int steps_per_epoch = (n_train + batch - 1) / batch;
    const int64_t total_steps = static_cast<int64_t>(cfg.epochs) * steps_per_epoch;

    RngStream root(cfg.seed);
    RngStream init_rng = root.split(1);
    DenoiserTrainResult result;
    result.params = make_unet(3, 16, init_rng);
    auto params = unet_parameters(result.params);
    AdamState adam = make_adam_state(params);

    int start_epoch = 0;
    if (!resume_from.empty())
        start_epoch = load_denoiser_state(resume_from, result.params, adam);

    auto eval_val = [&](bool baseline) {
        double acc = 0.0;
        int64_t count = 0;
        for (int i = n_train; i < n; ++i) {
            std::vector<CropRef> crop{{i, 0, 0}};
            Tensor noisy = stack_patches(pairs, crop, true, cfg.patch_size);
            Tensor clean = stack_patches(pairs, crop, false, cfg.patch_size);
            if (baseline) {
                for (int64_t j = 0; j < noisy.size(); ++j)
                    acc += std::fabs(noisy[j] - clean[j]);
                count += noisy.size();
            } else {
                Graph g;
                Binder bind(g, false);
                Var pred = unet_forward(g, bind, result.params, g.leaf(std::move(noisy)));
                const Tensor& pt = g.value(pred);
                for (int64_t j = 0; j < pt.size(); ++j) acc += std::fabs(pt[j] - clean[j]);
                count += pt.size();
            }
        }
        return acc / static_cast<double>(count);
    };
    result.noisy_baseline_l1 = eval_val(true);

    for (int epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
        RngStream es = root.split(1000 + static_cast<uint64_t>(epoch));
        RngStream shuffle_rng = es.split(0);
        RngStream crop_rng = es.split(1);
        auto order = shuffled_indices(n_train, shuffle_rng);

        double epoch_loss = 0.0;
        for (int step = 0; step < steps_per_epoch; ++step) {
            std::vector<CropRef> crops;
            for (int k = 0; k < batch; ++k) {
                int img = order[static_cast<size_t>((step * batch + k) % n_train)];
                crops.push_back(
                    make_crop(img, pairs.clean[static_cast<size_t>(img)], cfg.patch_size,
                              crop_rng));
            }
            Tensor noisy = stack_patches(pairs, crops, true, cfg.patch_size);
            Tensor clean = stack_patches(pairs, crops, false, cfg.patch_size);

            Graph g;
            Binder bind(g, true);
            Var pred = unet_forward(g, bind, result.params, g.leaf(std::move(noisy)));
            Var loss = g.reduce_mean(g.abs(g.sub(pred, g.leaf(std::move(clean)))));
            g.backward(loss);
            double lv = g.value(loss).item();
            finite_or_throw({lv}, "denoiser training");

            int64_t global_step = static_cast<int64_t>(epoch) * steps_per_epoch + step;
            double lr = cosine_lr(global_step, total_steps, cfg.lr_init, cfg.lr_final);
            adam_step(params, grads_of(g, bind, params), adam, lr, cfg.adam_beta1,
                      cfg.adam_beta2);
            epoch_loss += lv;

            if (log) {
                EpochLogRow row;
                row.epoch = epoch;
                row.step = step;
                row.l1 = lv;
                row.lr = lr;
                row.has_aligned = true;
                if (step == steps_per_epoch - 1) {
                    row.val_metric = eval_val(false);
                    row.has_val = true;
                    result.epoch_val_l1.push_back(row.val_metric);
                }
                log(row);
            } else if (step == steps_per_epoch - 1) {
                result.epoch_val_l1.push_back(eval_val(false));
            }
        }
        result.epoch_train_l1.push_back(epoch_loss / steps_per_epoch);
        if (!state_path.empty())
            save_denoiser_state(state_path, result.params, adam, epoch + 1);
        if (stop_after_epoch >= 0 && epoch >= stop_after_epoch) break;
    }
    return result;
}

// --- noise model training ----------------------------------------------------------------

NoiseModelTrainResult train_noise_model(const PairedSet& pairs,
                                        const std::vector<SensorProfile>& profiles,
                                        UNetParams& denoiser, const TrainConfig& cfg,
                                        const LogSink& log, const NoiseModelOptions& opt) {
    validate_config(cfg);
    if (pairs.empty()) throw DataError("train_noise_model: empty dataset");

    // every image's ISO must have a profile before any work starts
    std::vector<double> gain_of(pairs.size()), sigma_of(pairs.size());
    for (size_t i = 0; i < pairs.size(); ++i) {
        const SensorProfile& prof = find_profile(profiles, pairs.metadata[i].iso);
        gain_of[i] = prof.gain_k;
        sigma_of[i] = prof.sigma_r;
    }

    const int n = static_cast<int>(pairs.size());
    const int n_val = std::max(2, n / 16);
    const int n_train = std::max(1, n - n_val);
    const int batch = std::min(cfg.batch_size, n_train);
    const int steps_per_epoch = std::max(1, n_train / batch);
    const int64_t total_steps = static_cast<int64_t>(cfg.epochs) * steps_per_epoch;
    const int pair_count = std::max(1, batch / 4);
    const double pair_dist = 1e-2;

    RngStream root(cfg.seed);
    RngStream gen_init = root.split(1);
    RngStream ftd_init = root.split(2);

    NoiseModelTrainResult result;
    result.generator = make_unet(3, 16, gen_init);
    result.critic = make_ftd(cfg.patch_size, 64, 4, 2, opt.spectral_critic, ftd_init);

    auto gen_params = unet_parameters(result.generator);
    auto ftd_params = ftd_parameters(result.critic);
    AdamState gen_adam = make_adam_state(gen_params);
    AdamState ftd_adam = make_adam_state(ftd_params);

    std::vector<Tensor> best_gen;
    for (Tensor* t : gen_params) best_gen.push_back(*t);
    double best_val = std::numeric_limits<double>::infinity();
    int best_epoch = -1;
    double initial_val = 0.0;
    int start_epoch = 0;

    // validation KLD with a fixed stream identity every epoch, so the curve
    // is comparable across epochs and runs
    auto eval_val_kld = [&]() {
        double acc = 0.0;
        for (int i = n_train; i < n; ++i) {
            RngStream es = root.split(777777).split(static_cast<uint64_t>(i));
            RawPatch synth = synthesize_learned(pairs.clean[static_cast<size_t>(i)],
                                                result.generator,
                                                gain_of[static_cast<size_t>(i)],
                                                sigma_of[static_cast<size_t>(i)], es);
            acc += kld(noise_histogram(synth, pairs.clean[static_cast<size_t>(i)]),
                       noise_histogram(pairs.noisy[static_cast<size_t>(i)],
                                       pairs.clean[static_cast<size_t>(i)]));
        }
        return acc / static_cast<double>(n - n_train);
    };

    if (!opt.resume_from.empty()) {
        NoiseStateHeader h = load_noise_state(opt.resume_from, result.generator, gen_adam,
                                              result.critic, ftd_adam, best_gen);
        start_epoch = h.epochs_done;
        best_val = h.best_val;
        best_epoch = h.best_epoch;
        initial_val = h.initial_val;
        result.initial_val_kld = initial_val;
    } else {
        initial_val = eval_val_kld();
        result.initial_val_kld = initial_val;
    }

    // fake batch: exact shot noise plus the generator's field, clamped
    auto build_fake = [&](Graph& g, Binder& gen_bind, const std::vector<CropRef>& crops,
                          RngStream& physics_rng, RngStream& init_rng2) {
        std::vector<double> gains;
        std::vector<InitNoiseSpec> specs;
        for (const auto& cr : crops) {
            gains.push_back(gain_of[static_cast<size_t>(cr.image)]);
            const RawPatch& src = pairs.clean[static_cast<size_t>(cr.image)];
            specs.push_back({sigma_of[static_cast<size_t>(cr.image)] / src.range(),
                             cfg.patch_size, cfg.patch_size});
        }
        Tensor yhat = stack_shot(pairs, crops, gains, cfg.patch_size, physics_rng);
        Tensor ninit = sample_init_noise_batch(specs, init_rng2);
        Var n_indep = unet_forward(g, gen_bind, result.generator, g.leaf(std::move(ninit)));
        return g.clamp01(g.add(g.leaf(std::move(yhat)), n_indep));
    };

    for (int epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
        RngStream es = root.split(1000 + static_cast<uint64_t>(epoch));
        IndexCycle cycle(n_train, es.split(0));
        RngStream crop_rng = es.split(1);
        RngStream physics_rng = es.split(2);
        RngStream initmap_rng = es.split(3);
        RngStream interp_rng = es.split(4);

        for (int step = 0; step < steps_per_epoch; ++step) {
            int64_t global_step = static_cast<int64_t>(epoch) * steps_per_epoch + step;
            double lr = cosine_lr(global_step, total_steps, cfg.lr_init, cfg.lr_final);

            // --- critic updates ---
            double last_critic = 0.0;
            for (int cs = 0; cs < cfg.critic_steps_per_gen_step; ++cs) {
                std::vector<CropRef> crops;
                for (int k = 0; k < batch; ++k) {
                    int img = cycle.next();
                    crops.push_back(make_crop(img, pairs.clean[static_cast<size_t>(img)],
                                              cfg.patch_size, crop_rng));
                }
                Tensor real = stack_patches(pairs, crops, true, cfg.patch_size);

                Graph g;
                Binder gen_bind(g, false);
                Binder critic_bind(g, true);
                Var fake = build_fake(g, gen_bind, crops, physics_rng, initmap_rng);
                Var real_v = g.leaf(real);

                // interpolate pairs (x1, x1 + dist * unit_direction)
                const Tensor& fake_t = g.value(fake);
                const int64_t img_n = static_cast<int64_t>(4) * cfg.patch_size * cfg.patch_size;
                Tensor pairs_t({2 * pair_count, 4, cfg.patch_size, cfg.patch_size});
                for (int pi = 0; pi < pair_count; ++pi) {
                    double eps = interp_rng.uniform01();
                    int which = pi % batch;
                    double norm = 0.0;
                    std::vector<double> dir(static_cast<size_t>(img_n));
                    for (auto& d : dir) {
                        d = interp_rng.normal();
                        norm += d * d;
                    }
                    norm = std::sqrt(norm);
                    for (int64_t j = 0; j < img_n; ++j) {
                        double x1 = eps * real[which * img_n + j] +
                                    (1.0 - eps) * fake_t[which * img_n + j];
                        pairs_t[pi * img_n + j] = x1;
                        pairs_t[(pair_count + pi) * img_n + j] =
                            x1 + pair_dist * dir[static_cast<size_t>(j)] / norm;
                    }
                }

                Var closs = critic_loss(g, critic_bind, result.critic, real_v, fake,
                                        g.leaf(std::move(pairs_t)), pair_dist, cfg.penalty_coef);
                g.backward(closs);
                last_critic = g.value(closs).item();
                finite_or_throw({last_critic}, "critic update");
                adam_step(ftd_params, grads_of(g, critic_bind, ftd_params), ftd_adam, lr,
                          cfg.adam_beta1, cfg.adam_beta2);
            }

            // --- generator update ---
            std::vector<CropRef> crops;
            for (int k = 0; k < batch; ++k) {
                int img = cycle.next();
                crops.push_back(make_crop(img, pairs.clean[static_cast<size_t>(img)],
                                          cfg.patch_size, crop_rng));
            }
            Graph g;
            Binder gen_bind(g, true);
            Binder critic_bind(g, false);
            Var fake = build_fake(g, gen_bind, crops, physics_rng, initmap_rng);
            Var adv = generator_adv_loss(g, critic_bind, result.critic, fake);

            double l1v = 0.0, perv = 0.0;
            Var loss = adv;
            if (cfg.lambda1 != 0.0 || cfg.lambda2 != 0.0) {
                Tensor real = stack_patches(pairs, crops, true, cfg.patch_size);
                AlignedLosses al = aligned_losses(g, denoiser, fake, g.leaf(std::move(real)));
                loss = total_loss(g, adv, al.l1, al.perceptual, cfg.lambda1, cfg.lambda2);
                l1v = g.value(al.l1).item();
                perv = g.value(al.perceptual).item();
            }
            g.backward(loss);
            double advv = g.value(adv).item();
            finite_or_throw({advv, l1v, perv}, "generator update");
            adam_step(gen_params, grads_of(g, gen_bind, gen_params), gen_adam, lr, cfg.adam_beta1,
                      cfg.adam_beta2);

            if (log) {
                EpochLogRow row;
                row.epoch = epoch;
                row.step = step;
                row.critic_loss = last_critic;
                row.gen_loss = advv;
                row.l1 = l1v;
                row.perceptual = perv;
                row.lr = lr;
                row.has_adv = true;
                row.has_aligned = (cfg.lambda1 != 0.0 || cfg.lambda2 != 0.0);
                if (step == steps_per_epoch - 1) {
                    double vk = eval_val_kld();
                    finite_or_throw({vk}, "validation");
                    row.val_metric = vk;
                    row.has_val = true;
                }
                log(row);
                if (row.has_val) {
                    result.epoch_val_kld.push_back(row.val_metric);
                    if (row.val_metric < best_val) {
                        best_val = row.val_metric;
                        best_epoch = epoch;
                        for (size_t i = 0; i < gen_params.size(); ++i)
                            best_gen[i] = *gen_params[i];
                    }
                }
            } else if (step == steps_per_epoch - 1) {
                double vk = eval_val_kld();
                finite_or_throw({vk}, "validation");
                result.epoch_val_kld.push_back(vk);
                if (vk < best_val) {
                    best_val = vk;
                    best_epoch = epoch;
                    for (size_t i = 0; i < gen_params.size(); ++i) best_gen[i] = *gen_params[i];
                }
            }
        }
        if (!opt.state_path.empty())
            save_noise_state(opt.state_path, result.generator, gen_adam, result.critic, ftd_adam,
                             epoch + 1, best_val, best_epoch, best_gen, initial_val);
        if (opt.stop_after_epoch >= 0 && epoch >= opt.stop_after_epoch) break;
    }

    // hand back the best-validation generator
    for (size_t i = 0; i < gen_params.size(); ++i) *gen_params[i] = best_gen[i];
    result.best_epoch = best_epoch;
    return result;
}

}  // namespace lrnoise
