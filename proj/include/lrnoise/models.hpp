#ifndef LRNOISE_MODELS_HPP
#define LRNOISE_MODELS_HPP

#include <string>
#include <vector>

#include "lrnoise/blocks.hpp"
#include "lrnoise/graph.hpp"
#include "lrnoise/raw.hpp"
#include "lrnoise/rng.hpp"

namespace lrnoise {

// --- residual U-shape network (noise generator G and Denoise-Net P) -----------

struct ConvParams {
    Tensor w;  // conv: [Cout,Cin,k,k]; transpose conv: [Cin,Cout,k,k]
    Tensor b;  // [Cout]
};

struct UNetLevel {
    ConvParams conv1, conv2;
    ConvParams down;  // stride-2 conv to the next width (encoder only)
};

struct UNetDecoderLevel {
    ConvParams up;  // 2x2 stride-2 transpose conv
    ConvParams conv1, conv2;
};

/**
 * Residual U-shape: `levels` encoder stages of two 3x3 convs (widths
 * base * 2^l) each followed by a stride-2 downsampling conv, a two-conv
 * bottleneck, and a mirrored decoder with skip concatenation. The output
 * conv is zero-initialized so the network is the identity map at init,
 * and the input is added back globally. Activations are leaky ReLU (0.2).
 */
struct UNetParams {
    int levels = 3;
    int base = 16;
    ConvParams in_conv;  // 4 -> base
    std::vector<UNetLevel> enc;
    ConvParams mid1, mid2;
    std::vector<UNetDecoderLevel> dec;  // deepest first
    ConvParams out_conv;                // base -> 4, zero init
    Tensor skip_gain;                   // [1], init 1: out = gain * x + conv path
};

UNetParams make_unet(int levels, int base, RngStream& rng);
std::vector<Tensor*> unet_parameters(UNetParams& p);
int64_t parameter_count(std::vector<Tensor*> params);

/// x [B,4,H,W] -> [B,4,H,W]; H and W must be divisible by 2^levels.
/// `taps` (optional) receives the bottleneck activation followed by each
/// decoder level's output activation (for the perceptual loss).
Var unet_forward(Graph& g, Binder& bind, UNetParams& p, Var x, std::vector<Var>* taps = nullptr);

// --- Fourier transformer discriminator ----------------------------------------

/**
 * Multi-scale critic. The input is patchified at three scales; the longest
 * sequence (plus a learned position encoding) enters the first Fourier
 * transformer block, the pooled features are channel-concatenated with the
 * next scale's tokens before blocks two and three, and a vanilla block plus
 * mean-pool/linear head emit one unbounded real score per batch element.
 * `spectral = false` swaps each Fourier block for a vanilla block of the
 * same width (the plain-transformer ablation).
 */
struct FtdParams {
    int input_size = 32;
    int patch1 = 2, patch2 = 4, patch3 = 8;
    int dim = 64;
    int heads = 4;
    int ff_ratio = 2;
    bool spectral = true;

    PatchifyParams embed1, embed2, embed3;
    Tensor pos;  // [L1, dim]
    FourierBlockParams block1, block2, block3;
    TransformerBlockParams tail;
    LinearParams head;  // [3*dim, 1]
};

FtdParams make_ftd(int input_size, int dim, int heads, int ff_ratio, bool spectral,
                   RngStream& rng);
std::vector<Tensor*> ftd_parameters(FtdParams& p);

/// image [B,4,S,S] (normalized domain) -> scores [B,1].
Var ftd_forward(Graph& g, Binder& bind, FtdParams& p, Var image);

// --- initial noise map ----------------------------------------------------------

struct InitNoiseSpec {
    double sigma_r = 0.0;  // in the same (normalized) units as the generator input
    int height = 0;
    int width = 0;
};

/// iid Normal(0, sigma_r^2) over [4, H, W].
Tensor sample_init_noise(const InitNoiseSpec& spec, RngStream& rng);

/// Batch variant: [B, 4, H, W] with a per-image sigma.
Tensor sample_init_noise_batch(const std::vector<InitNoiseSpec>& specs, RngStream& rng);

// --- composition -----------------------------------------------------------------

/// D_hat = clamp(Y_hat + N_indep, 0, 1), both in the normalized domain.
RawPatch compose_noisy(const RawPatch& y_hat, const Tensor& n_indep);

// --- checkpoints ------------------------------------------------------------------
// "LRDM" magic, u16 version, u16 kind, architecture block, u64 weight count,
// flat f64 payload in declaration order.

enum class NetKind : uint16_t { Generator = 1, Ftd = 2, Denoiser = 3 };

void save_unet(UNetParams& p, NetKind kind, const std::string& path);
UNetParams load_unet(const std::string& path, NetKind expected_kind);
void save_ftd(FtdParams& p, const std::string& path);
FtdParams load_ftd(const std::string& path);

/// Kind tag stored in a checkpoint (peek without loading weights).
NetKind checkpoint_kind(const std::string& path);

/// Throws DataError when a loaded network does not match the expected
/// architecture (e.g. resuming with a different config).
void require_unet_arch(const UNetParams& p, int levels, int base);
void require_ftd_arch(const FtdParams& p, int input_size, int dim, int heads, bool spectral);

}  // namespace lrnoise

#endif
