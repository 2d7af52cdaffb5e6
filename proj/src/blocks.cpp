#include "lrnoise/blocks.hpp"

#include <cmath>

#include "lrnoise/errors.hpp"

namespace lrnoise {

namespace {

Tensor normal_tensor(std::vector<int> shape, RngStream& rng, double std) {
    Tensor t(std::move(shape));
    for (int64_t i = 0; i < t.size(); ++i) t[i] = rng.normal(0.0, std);
    return t;
}

}  // namespace

LinearParams make_linear(int in, int out, RngStream& rng, double std) {
    return {normal_tensor({in, out}, rng, std), Tensor({out})};
}

LinearParams make_zero_linear(int in, int out) { return {Tensor({in, out}), Tensor({out})}; }

TransformerBlockParams make_transformer_block(int dim, int heads, int ff_ratio, RngStream& rng) {
    if (heads <= 0 || dim % heads != 0)
        throw DimError("transformer block: dim " + std::to_string(dim) +
                       " not divisible by heads " + std::to_string(heads));
    TransformerBlockParams p;
    p.dim = dim;
    p.heads = heads;
    p.ff_ratio = ff_ratio;
    p.ln1_g = Tensor::full({dim}, 1.0);
    p.ln1_b = Tensor({dim});
    p.ln2_g = Tensor::full({dim}, 1.0);
    p.ln2_b = Tensor({dim});
    p.q = make_linear(dim, dim, rng);
    p.k = make_linear(dim, dim, rng);
    p.v = make_linear(dim, dim, rng);
    p.attn_out = make_linear(dim, dim, rng);
    p.ff1 = make_linear(dim, dim * ff_ratio, rng);
    p.ff2 = make_linear(dim * ff_ratio, dim, rng);
    return p;
}

FourierBlockParams make_fourier_block(int dim, int heads, int ff_ratio, RngStream& rng) {
    if (dim % 2 != 0)
        throw DimError("fourier block: dim must be even, got " + std::to_string(dim));
    FourierBlockParams p;
    p.dim = dim;
    p.spatial = make_transformer_block(dim / 2, heads, ff_ratio, rng);
    p.spectral = make_transformer_block(dim, heads, ff_ratio, rng);
    p.spec_proj = make_linear(dim, dim, rng);
    p.cross_spec_to_spat = make_zero_linear(dim / 2, dim / 2);
    p.cross_spat_to_spec = make_zero_linear(dim / 2, dim / 2);
    return p;
}

PatchifyParams make_patchify(int patch, int dim, RngStream& rng) {
    PatchifyParams p;
    p.patch = patch;
    p.dim = dim;
    p.embed = make_linear(4 * patch * patch, dim, rng);
    return p;
}

void collect(LinearParams& p, std::vector<Tensor*>& out) {
    out.push_back(&p.w);
    out.push_back(&p.b);
}

void collect(TransformerBlockParams& p, std::vector<Tensor*>& out) {
    out.push_back(&p.ln1_g);
    out.push_back(&p.ln1_b);
    collect(p.q, out);
    collect(p.k, out);
    collect(p.v, out);
    collect(p.attn_out, out);
    out.push_back(&p.ln2_g);
    out.push_back(&p.ln2_b);
    collect(p.ff1, out);
    collect(p.ff2, out);
}

void collect(FourierBlockParams& p, std::vector<Tensor*>& out) {
    collect(p.spatial, out);
    collect(p.spectral, out);
    collect(p.spec_proj, out);
    collect(p.cross_spec_to_spat, out);
    collect(p.cross_spat_to_spec, out);
}

void collect(PatchifyParams& p, std::vector<Tensor*>& out) { collect(p.embed, out); }

Var linear(Graph& g, Binder& bind, LinearParams& p, Var x) {
    return g.add_bias(g.matmul(x, bind(p.w)), bind(p.b));
}

Var tokens_to_grid(Graph& g, Var tokens, int h, int w) {
    const Tensor& t = g.value(tokens);
    if (t.rank() != 3 || t.dim(1) != h * w)
        throw DimError("tokens_to_grid: sequence " + t.shape_str() + " does not match grid " +
                       std::to_string(h) + "x" + std::to_string(w));
    const int b = t.dim(0), c = t.dim(2);
    Var grid = g.reshape(tokens, {b, h, w, c});
    return g.permute(grid, {0, 3, 1, 2});
}

Var grid_to_tokens(Graph& g, Var grid) {
    const Tensor& t = g.value(grid);
    if (t.rank() != 4) throw DimError("grid_to_tokens: expected rank 4, got " + t.shape_str());
    const int b = t.dim(0), c = t.dim(1), h = t.dim(2), w = t.dim(3);
    Var moved = g.permute(grid, {0, 2, 3, 1});
    return g.reshape(moved, {b, h * w, c});
}

Var patchify(Graph& g, Binder& bind, PatchifyParams& p, Var image) {
    const Tensor& t = g.value(image);
    if (t.rank() != 4 || t.dim(1) != 4)
        throw DimError("patchify: expected [B,4,H,W], got " + t.shape_str());
    const int b = t.dim(0), h = t.dim(2), w = t.dim(3), ps = p.patch;
    if (ps <= 0 || h % ps != 0 || w % ps != 0)
        throw DimError("patchify: image " + t.shape_str() + " not divisible by patch " +
                       std::to_string(ps));
    const int gh = h / ps, gw = w / ps;
    // [B,4,H,W] -> [B,4,gh,ps,gw,ps] -> [B,gh,gw,4,ps,ps] -> [B, L, 4*ps*ps]
    Var split6 = g.reshape(image, {b, 4, gh, ps, gw, ps});
    Var moved = g.permute(split6, {0, 2, 4, 1, 3, 5});
    Var flat = g.reshape(moved, {b, gh * gw, 4 * ps * ps});
    return linear(g, bind, p.embed, flat);
}

namespace {

// [B,L,D] -> [B*heads, L, D/heads]
Var split_heads(Graph& g, Var x, int b, int l, int d, int heads) {
    Var r = g.reshape(x, {b, l, heads, d / heads});
    Var p = g.permute(r, {0, 2, 1, 3});
    return g.reshape(p, {b * heads, l, d / heads});
}

Var merge_heads(Graph& g, Var x, int b, int l, int d, int heads) {
    Var r = g.reshape(x, {b, heads, l, d / heads});
    Var p = g.permute(r, {0, 2, 1, 3});
    return g.reshape(p, {b, l, d});
}

}  // namespace

Var vanilla_transformer_block(Graph& g, Binder& bind, TransformerBlockParams& p, Var tokens,
                              Var* attn_tap) {
    const Tensor& t = g.value(tokens);
    if (t.rank() != 3 || t.dim(2) != p.dim)
        throw DimError("transformer block: tokens " + t.shape_str() + " vs dim " +
                       std::to_string(p.dim));
    const int b = t.dim(0), l = t.dim(1), d = p.dim, heads = p.heads;
    const int dh = d / heads;

    Var ln1 = g.layer_norm(tokens, bind(p.ln1_g), bind(p.ln1_b));
    Var q = split_heads(g, linear(g, bind, p.q, ln1), b, l, d, heads);
    Var k = split_heads(g, linear(g, bind, p.k, ln1), b, l, d, heads);
    Var v = split_heads(g, linear(g, bind, p.v, ln1), b, l, d, heads);

    Var scores = g.scale(g.matmul(q, g.permute(k, {0, 2, 1})), 1.0 / std::sqrt(double(dh)));
    Var attn = g.softmax(scores);
    if (attn_tap) *attn_tap = attn;
    Var ctx = merge_heads(g, g.matmul(attn, v), b, l, d, heads);
    Var x = g.add(tokens, linear(g, bind, p.attn_out, ctx));

    Var ln2 = g.layer_norm(x, bind(p.ln2_g), bind(p.ln2_b));
    Var ff = linear(g, bind, p.ff2, g.leaky_relu(linear(g, bind, p.ff1, ln2), 0.2));
    return g.add(x, ff);
}

Var fourier_transformer_block(Graph& g, Binder& bind, FourierBlockParams& p, Var tokens, int grid_h,
                              int grid_w) {
    const Tensor& t = g.value(tokens);
    if (t.rank() != 3 || t.dim(2) != p.dim)
        throw DimError("fourier block: tokens " + t.shape_str() + " vs dim " +
                       std::to_string(p.dim));
    if (p.dim % 2 != 0) throw DimError("fourier block: dim must be even");
    if (t.dim(1) != grid_h * grid_w)
        throw DimError("fourier block: sequence length " + std::to_string(t.dim(1)) +
                       " does not match grid " + std::to_string(grid_h) + "x" +
                       std::to_string(grid_w));

    auto halves = g.split(tokens, 2, 2);
    Var x_spec = halves[0], x_spat = halves[1];

    // spatial path
    Var spat0 = vanilla_transformer_block(g, bind, p.spatial, x_spat);

    // spectral path, wrapped residually so zero weights leave x_spec intact
    Var grid = tokens_to_grid(g, x_spec, grid_h, grid_w);
    auto [re, im] = g.dft2(grid);
    Var spec_tokens = grid_to_tokens(g, g.concat({re, im}, 1));
    Var st = vanilla_transformer_block(g, bind, p.spectral, spec_tokens);
    Var proj = linear(g, bind, p.spec_proj, st);
    auto reim = g.split(tokens_to_grid(g, proj, grid_h, grid_w), 1, 2);
    Var back = grid_to_tokens(g, g.idft2(reim[0], reim[1]));
    Var spec0 = g.add(x_spec, back);

    // exchange
    Var spat_out = g.add(spat0, linear(g, bind, p.cross_spec_to_spat, spec0));
    Var spec_out = g.add(spec0, linear(g, bind, p.cross_spat_to_spec, spat0));
    return g.concat({spec_out, spat_out}, 2);
}

Var seq_downsample(Graph& g, Var tokens, int grid_h, int grid_w, int k) {
    if (k <= 0 || grid_h % k != 0 || grid_w % k != 0)
        throw DimError("seq_downsample: grid " + std::to_string(grid_h) + "x" +
                       std::to_string(grid_w) + " not divisible by k=" + std::to_string(k));
    Var grid = tokens_to_grid(g, tokens, grid_h, grid_w);
    Var pooled = g.avg_pool2d(grid, k);
    return grid_to_tokens(g, pooled);
}

}  // namespace lrnoise
