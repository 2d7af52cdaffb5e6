#ifndef LRNOISE_BLOCKS_HPP
#define LRNOISE_BLOCKS_HPP

#include <unordered_map>
#include <vector>

#include "lrnoise/graph.hpp"
#include "lrnoise/rng.hpp"

namespace lrnoise {

/**
 * Binds parameter tensors into a graph as leaves, once each. The same Binder
 * must be used for a whole forward pass so shared parameters map to a single
 * node; `trainable` decides whether those leaves accumulate gradients.
 */
class Binder {
public:
    Binder(Graph& g, bool trainable) : g_(&g), trainable_(trainable) {}

    Var operator()(Tensor& t) {
        auto it = cache_.find(&t);
        if (it != cache_.end()) return it->second;
        Var v = g_->leaf(t, trainable_);
        cache_.emplace(&t, v);
        return v;
    }

    /// Leaf id previously created for a tensor (for reading gradients).
    Var bound(const Tensor& t) const { return cache_.at(&t); }
    bool trainable() const { return trainable_; }

private:
    Graph* g_;
    bool trainable_;
    std::unordered_map<const Tensor*, Var> cache_;
};

// --- parameter structs --------------------------------------------------------

struct LinearParams {
    Tensor w;  // [in, out]
    Tensor b;  // [out]
};
LinearParams make_linear(int in, int out, RngStream& rng, double std = 0.02);
LinearParams make_zero_linear(int in, int out);

struct TransformerBlockParams {
    int dim = 0;
    int heads = 0;
    int ff_ratio = 2;
    Tensor ln1_g, ln1_b, ln2_g, ln2_b;
    LinearParams q, k, v, attn_out;
    LinearParams ff1, ff2;
};
TransformerBlockParams make_transformer_block(int dim, int heads, int ff_ratio, RngStream& rng);

/// Spectral/spatial split block. Channels split in half; the spectral half
/// runs a transformer on (re, im) spectra of its token grid, the spatial half
/// runs a plain transformer, and two zero-initialized cross projections
/// exchange information between the paths before concatenation.
struct FourierBlockParams {
    int dim = 0;  // even
    TransformerBlockParams spatial;   // width dim/2
    TransformerBlockParams spectral;  // width dim (re and im stacked)
    LinearParams spec_proj;           // [dim, dim] on the spectral tokens
    LinearParams cross_spec_to_spat;  // [dim/2, dim/2], zero init
    LinearParams cross_spat_to_spec;  // [dim/2, dim/2], zero init
};
FourierBlockParams make_fourier_block(int dim, int heads, int ff_ratio, RngStream& rng);

struct PatchifyParams {
    int patch = 0;
    int dim = 0;
    LinearParams embed;  // [4*p*p, dim]
};
PatchifyParams make_patchify(int patch, int dim, RngStream& rng);

void collect(LinearParams& p, std::vector<Tensor*>& out);
void collect(TransformerBlockParams& p, std::vector<Tensor*>& out);
void collect(FourierBlockParams& p, std::vector<Tensor*>& out);
void collect(PatchifyParams& p, std::vector<Tensor*>& out);

// --- forward functions ---------------------------------------------------------

/// x [B,L,in] or [B,in] -> same rank with trailing dim `out`.
Var linear(Graph& g, Binder& bind, LinearParams& p, Var x);

/// Token grid conversions for [B, L, C] sequences living on an (h, w) grid.
Var tokens_to_grid(Graph& g, Var tokens, int h, int w);  // -> [B, C, h, w]
Var grid_to_tokens(Graph& g, Var grid);                  // -> [B, h*w, C]

/// image [B,4,H,W] -> tokens [B, (H/p)*(W/p), dim]; token features are the
/// linear embedding of each flattened 4 x p x p pixel block.
Var patchify(Graph& g, Binder& bind, PatchifyParams& p, Var image);

/// Pre-norm multi-head self-attention + feed-forward, both residual.
/// `attn_tap` (optional) receives the [B*heads, L, L] attention matrix.
Var vanilla_transformer_block(Graph& g, Binder& bind, TransformerBlockParams& p, Var tokens,
                              Var* attn_tap = nullptr);

Var fourier_transformer_block(Graph& g, Binder& bind, FourierBlockParams& p, Var tokens, int grid_h,
                              int grid_w);

/// Average-pool the token grid by k; L shrinks by k^2.
Var seq_downsample(Graph& g, Var tokens, int grid_h, int grid_w, int k);

}  // namespace lrnoise

#endif
