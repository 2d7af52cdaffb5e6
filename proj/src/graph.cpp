#include "lrnoise/graph.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>
#include <numeric>

#include "lrnoise/errors.hpp"
#include "lrnoise/kernels.hpp"

namespace lrnoise {

namespace {

[[noreturn]] void dim_fail(const char* op, const std::string& detail) {
    throw DimError(std::string(op) + ": " + detail);
}

void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b))
        dim_fail(op, "shape mismatch " + a.shape_str() + " vs " + b.shape_str());
}

// Cached DFT basis matrices: C[u,h] = cos(2*pi*u*h/N), S[u,h] = sin(...).
// Both are symmetric, which the sandwich products below rely on.
struct DftBasis {
    std::vector<double> cosm, sinm;
};

const DftBasis& dft_basis(int n) {
    static std::map<int, DftBasis> cache;
    static std::mutex mu;
    std::lock_guard<std::mutex> lock(mu);
    auto it = cache.find(n);
    if (it != cache.end()) return it->second;
    DftBasis b;
    b.cosm.resize(static_cast<size_t>(n) * n);
    b.sinm.resize(static_cast<size_t>(n) * n);
    for (int u = 0; u < n; ++u) {
        for (int h = 0; h < n; ++h) {
            double ang = 2.0 * M_PI * (static_cast<int64_t>(u) * h % n) / n;
            b.cosm[static_cast<size_t>(u) * n + h] = std::cos(ang);
            b.sinm[static_cast<size_t>(u) * n + h] = std::sin(ang);
        }
    }
    return cache.emplace(n, std::move(b)).first->second;
}

// out = L * x * R for one H x W slice, with L in {C_H, S_H}, R in {C_W, S_W}.
void sandwich(const double* x, const std::vector<double>& left,
              const std::vector<double>& right, double* out, int h, int w, double* tmp) {
    kern::matmul(left.data(), x, tmp, h, h, w);
    kern::matmul(tmp, right.data(), out, h, w, w);
}

}  // namespace

const Graph::Node& Graph::node(Var v) const { return nodes_[static_cast<size_t>(v.id)]; }
Graph::Node& Graph::node(Var v) { return nodes_[static_cast<size_t>(v.id)]; }

int Graph::check(Var v, const char* op) const {
    if (!v.valid() || v.id >= static_cast<int>(nodes_.size()))
        throw StateError(std::string(op) + ": variable does not belong to this graph");
    return v.id;
}

Var Graph::leaf(Tensor value, bool requires_grad) {
    Node n;
    n.value = std::move(value);
    n.needs_grad = requires_grad || n.value.requires_grad;
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
}

Var Graph::push(Tensor value, std::vector<int> parents,
                std::function<void(Graph&, int)> backprop) {
    if (backward_run_)
        throw StateError("graph already consumed by backward(); build a new graph");
    Node n;
    n.value = std::move(value);
    n.parents = std::move(parents);
    for (int p : n.parents)
        if (nodes_[static_cast<size_t>(p)].needs_grad) n.needs_grad = true;
    if (n.needs_grad) n.backprop = std::move(backprop);
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
}

Tensor& Graph::ensure_grad(int id) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (!n.has_grad) {
        n.grad = Tensor::zeros(n.value.shape());
        n.has_grad = true;
    }
    return n.grad;
}

void Graph::accumulate(int id, const Tensor& delta) {
    accumulate_raw(id, delta.data(), delta.size());
}

void Graph::accumulate_raw(int id, const double* delta, int64_t n) {
    Node& nd = nodes_[static_cast<size_t>(id)];
    if (!nd.needs_grad) return;
    Tensor& g = ensure_grad(id);
    if (g.size() != n) dim_fail("backward", "gradient size mismatch");
    double* gp = g.data();
    for (int64_t i = 0; i < n; ++i) gp[i] += delta[i];
}

const Tensor& Graph::value(Var v) const { return node(Var{check(v, "value")}).value; }

bool Graph::has_grad(Var v) const { return node(Var{check(v, "has_grad")}).has_grad; }

const Tensor& Graph::grad(Var v) const {
    const Node& n = node(Var{check(v, "grad")});
    if (!n.has_grad)
        throw StateError("grad: no gradient at this node (not on the loss path?)");
    return n.grad;
}

void Graph::backward(Var loss) {
    int id = check(loss, "backward");
    if (backward_run_) throw StateError("backward: already run on this graph");
    const Node& ln = nodes_[static_cast<size_t>(id)];
    if (ln.value.size() != 1)
        dim_fail("backward", "loss must be scalar, got shape " + ln.value.shape_str());
    ensure_grad(id)[0] = 1.0;
    for (int i = id; i >= 0; --i) {
        Node& n = nodes_[static_cast<size_t>(i)];
        if (n.has_grad && n.backprop) n.backprop(*this, i);
    }
    backward_run_ = true;
}

// --- elementwise -------------------------------------------------------------

Var Graph::add(Var a, Var b) {
    int ia = check(a, "add"), ib = check(b, "add");
    const Tensor& ta = nodes_[ia].value;
    const Tensor& tb = nodes_[ib].value;
    check_same_shape("add", ta, tb);
    Tensor out(ta.shape());
    for (int64_t i = 0; i < ta.size(); ++i) out[i] = ta[i] + tb[i];
    return push(std::move(out), {ia, ib}, [ia, ib](Graph& g, int self) {
        const Tensor& gy = g.nodes_[self].grad;
        g.accumulate(ia, gy);
        g.accumulate(ib, gy);
    });
}

Var Graph::sub(Var a, Var b) {
    int ia = check(a, "sub"), ib = check(b, "sub");
    const Tensor& ta = nodes_[ia].value;
    const Tensor& tb = nodes_[ib].value;
    check_same_shape("sub", ta, tb);
    Tensor out(ta.shape());
    for (int64_t i = 0; i < ta.size(); ++i) out[i] = ta[i] - tb[i];
    return push(std::move(out), {ia, ib}, [ia, ib](Graph& g, int self) {
        const Tensor& gy = g.nodes_[self].grad;
        g.accumulate(ia, gy);
        Tensor neg(gy.shape());
        for (int64_t i = 0; i < gy.size(); ++i) neg[i] = -gy[i];
        g.accumulate(ib, neg);
    });
}

Var Graph::mul(Var a, Var b) {
    int ia = check(a, "mul"), ib = check(b, "mul");
    const Tensor& ta = nodes_[ia].value;
    const Tensor& tb = nodes_[ib].value;
    check_same_shape("mul", ta, tb);
    Tensor out(ta.shape());
    for (int64_t i = 0; i < ta.size(); ++i) out[i] = ta[i] * tb[i];
    return push(std::move(out), {ia, ib}, [ia, ib](Graph& g, int self) {
        const Tensor& gy = g.nodes_[self].grad;
        const Tensor& va = g.nodes_[ia].value;
        const Tensor& vb = g.nodes_[ib].value;
        Tensor d(gy.shape());
        for (int64_t i = 0; i < gy.size(); ++i) d[i] = gy[i] * vb[i];
        g.accumulate(ia, d);
        for (int64_t i = 0; i < gy.size(); ++i) d[i] = gy[i] * va[i];
        g.accumulate(ib, d);
    });
}

Var Graph::scale(Var a, double c) {
    int ia = check(a, "scale");
    const Tensor& ta = nodes_[ia].value;
    Tensor out(ta.shape());
    for (int64_t i = 0; i < ta.size(); ++i) out[i] = c * ta[i];
    return push(std::move(out), {ia}, [ia, c](Graph& g, int self) {
        const Tensor& gy = g.nodes_[self].grad;
        Tensor d(gy.shape());
        for (int64_t i = 0; i < gy.size(); ++i) d[i] = c * gy[i];
        g.accumulate(ia, d);
    });
}

Var Graph::scale_by(Var a, Var s) {
    int ia = check(a, "scale_by"), is = check(s, "scale_by");
    const Tensor& ta = nodes_[ia].value;
    const Tensor& ts = nodes_[is].value;
    if (ts.size() != 1) dim_fail("scale_by", "gain must be a single value, got " + ts.shape_str());
    const double sv = ts[0];
    Tensor out(ta.shape());
    for (int64_t i = 0; i < ta.size(); ++i) out[i] = sv * ta[i];
    return push(std::move(out), {ia, is}, [ia, is, sv](Graph& g, int self) {
        const Tensor& gy = g.nodes_[self].grad;
        const Tensor& va = g.nodes_[static_cast<size_t>(ia)].value;
        if (g.nodes_[static_cast<size_t>(ia)].needs_grad) {
            Tensor d(gy.shape());
            for (int64_t i = 0; i < gy.size(); ++i) d[i] = sv * gy[i];
            g.accumulate(ia, d);
        }
        if (g.nodes_[static_cast<size_t>(is)].needs_grad) {
            Tensor d({1});
            for (int64_t i = 0; i < gy.size(); ++i) d[0] += gy[i] * va[i];
            g.accumulate(is, d);
        }
    });
}

Var Graph::add_scalar(Var a, double c) {
    int ia = check(a, "add_scalar");
    const Tensor& ta = nodes_[ia].value;
    Tensor out(ta.shape());
    for (int64_t i = 0; i < ta.size(); ++i) out[i] = ta[i] + c;
    return push(std::move(out), {ia}, [ia](Graph& g, int self) {
        g.accumulate(ia, g.nodes_[self].grad);
    });
}

Var Graph::leaky_relu(Var x, double slope) {
    int ix = check(x, "leaky_relu");
    const Tensor& tx = nodes_[ix].value;
    Tensor out(tx.shape());
    for (int64_t i = 0; i < tx.size(); ++i) out[i] = tx[i] >= 0.0 ? tx[i] : slope * tx[i];
    return push(std::move(out), {ix}, [ix, slope](Graph& g, int self) {
        const Tensor& gy = g.nodes_[self].grad;
        const Tensor& vx = g.nodes_[ix].value;
        Tensor d(gy.shape());
        for (int64_t i = 0; i < gy.size(); ++i) d[i] = vx[i] >= 0.0 ? gy[i] : slope * gy[i];
        g.accumulate(ix, d);
    });
}

Var Graph::abs(Var x) {
    int ix = check(x, "abs");
    const Tensor& tx = nodes_[ix].value;
    Tensor out(tx.shape());
    for (int64_t i = 0; i < tx.size(); ++i) out[i] = std::fabs(tx[i]);
    return push(std::move(out), {ix}, [ix](Graph& g, int self) {
        const Tensor& gy = g.nodes_[self].grad;
        const Tensor& vx = g.nodes_[ix].value;
        Tensor d(gy.shape());
        for (int64_t i = 0; i < gy.size(); ++i)
            d[i] = vx[i] > 0.0 ? gy[i] : (vx[i] < 0.0 ? -gy[i] : 0.0);
        g.accumulate(ix, d);
    });
}

Var Graph::sqrt(Var x) {
    int ix = check(x, "sqrt");
    const Tensor& tx = nodes_[ix].value;
    Tensor out(tx.shape());
    for (int64_t i = 0; i < tx.size(); ++i) {
        if (tx[i] < 0.0) throw ParamError("sqrt: negative input");
        out[i] = std::sqrt(tx[i]);
    }
    return push(std::move(out), {ix}, [ix](Graph& g, int self) {
        const Tensor& gy = g.nodes_[self].grad;
        const Tensor& vy = g.nodes_[self].value;
        Tensor d(gy.shape());
        for (int64_t i = 0; i < gy.size(); ++i) d[i] = vy[i] > 0.0 ? 0.5 * gy[i] / vy[i] : 0.0;
        g.accumulate(ix, d);
    });
}

Var Graph::clamp01(Var x) {
    int ix = check(x, "clamp01");
    const Tensor& tx = nodes_[ix].value;
    Tensor out(tx.shape());
    for (int64_t i = 0; i < tx.size(); ++i) out[i] = std::clamp(tx[i], 0.0, 1.0);
    return push(std::move(out), {ix}, [ix](Graph& g, int self) {
        const Tensor& gy = g.nodes_[self].grad;
        const Tensor& vx = g.nodes_[ix].value;
        Tensor d(gy.shape());
        for (int64_t i = 0; i < gy.size(); ++i)
            d[i] = (vx[i] >= 0.0 && vx[i] <= 1.0) ? gy[i] : 0.0;
        g.accumulate(ix, d);
    });
}

// --- shape ops ---------------------------------------------------------------

Var Graph::reshape(Var x, std::vector<int> shape) {
    int ix = check(x, "reshape");
    const Tensor& tx = nodes_[ix].value;
    if (shape_size(shape) != tx.size())
        dim_fail("reshape", "cannot reshape " + tx.shape_str() + " to " + shape_str(shape));
    Tensor out(std::move(shape), std::vector<double>(tx.data(), tx.data() + tx.size()));
    return push(std::move(out), {ix}, [ix](Graph& g, int self) {
        const Tensor& gy = g.nodes_[self].grad;
        g.accumulate_raw(ix, gy.data(), gy.size());
    });
}

namespace {

std::vector<int64_t> row_major_strides(const std::vector<int>& shape) {
    std::vector<int64_t> s(shape.size());
    int64_t acc = 1;
    for (int i = static_cast<int>(shape.size()) - 1; i >= 0; --i) {
        s[static_cast<size_t>(i)] = acc;
        acc *= shape[static_cast<size_t>(i)];
    }
    return s;
}

// dst[perm(index)] = src[index] for permutation `axes` (dst axis i = src axis axes[i]).
void permute_copy(const double* src, const std::vector<int>& src_shape,
                  const std::vector<int>& axes, double* dst) {
    const int r = static_cast<int>(src_shape.size());
    std::vector<int> dst_shape(r);
    for (int i = 0; i < r; ++i) dst_shape[i] = src_shape[static_cast<size_t>(axes[i])];
    auto src_strides = row_major_strides(src_shape);
    std::vector<int64_t> dst_stride_of_src_axis(r);
    auto dst_strides = row_major_strides(dst_shape);
    for (int i = 0; i < r; ++i) dst_stride_of_src_axis[static_cast<size_t>(axes[i])] = dst_strides[i];

    const int64_t n = shape_size(src_shape);
    std::vector<int> idx(r, 0);
    int64_t dst_off = 0;
    for (int64_t lin = 0; lin < n; ++lin) {
        dst[dst_off] = src[lin];
        for (int ax = r - 1; ax >= 0; --ax) {
            if (++idx[static_cast<size_t>(ax)] < src_shape[static_cast<size_t>(ax)]) {
                dst_off += dst_stride_of_src_axis[static_cast<size_t>(ax)];
                break;
            }
            idx[static_cast<size_t>(ax)] = 0;
            dst_off -= dst_stride_of_src_axis[static_cast<size_t>(ax)] *
                       (src_shape[static_cast<size_t>(ax)] - 1);
        }
    }
}

}  // namespace

Var Graph::permute(Var x, std::vector<int> axes) {
    int ix = check(x, "permute");
    const Tensor& tx = nodes_[ix].value;
    const int r = tx.rank();
    if (static_cast<int>(axes.size()) != r)
        dim_fail("permute", "axes size " + std::to_string(axes.size()) + " vs rank " +
                                std::to_string(r));
    std::vector<bool> seen(static_cast<size_t>(r), false);
    for (int a : axes) {
        if (a < 0 || a >= r || seen[static_cast<size_t>(a)])
            dim_fail("permute", "invalid axes permutation");
        seen[static_cast<size_t>(a)] = true;
    }
    std::vector<int> out_shape(static_cast<size_t>(r));
    for (int i = 0; i < r; ++i) out_shape[static_cast<size_t>(i)] = tx.dim(axes[static_cast<size_t>(i)]);
    Tensor out(out_shape);
    permute_copy(tx.data(), tx.shape(), axes, out.data());
    return push(std::move(out), {ix}, [ix, axes](Graph& g, int self) {
        const Tensor& gy = g.nodes_[self].grad;
        const int r2 = static_cast<int>(axes.size());
        std::vector<int> inv(static_cast<size_t>(r2));
        for (int i = 0; i < r2; ++i) inv[static_cast<size_t>(axes[i])] = i;
        Tensor d(g.nodes_[ix].value.shape());
        permute_copy(gy.data(), gy.shape(), inv, d.data());
        g.accumulate(ix, d);
    });
}

Var Graph::broadcast(Var x, int batch) {
    int ix = check(x, "broadcast");
    if (batch <= 0) dim_fail("broadcast", "batch must be positive");
    const Tensor& tx = nodes_[ix].value;
    std::vector<int> shape = tx.shape();
    shape.insert(shape.begin(), batch);
    Tensor out(shape);
    const int64_t n = tx.size();
    for (int b = 0; b < batch; ++b)
        std::copy(tx.data(), tx.data() + n, out.data() + static_cast<int64_t>(b) * n);
    return push(std::move(out), {ix}, [ix, batch, n](Graph& g, int self) {
        const Tensor& gy = g.nodes_[self].grad;
        Tensor d(g.nodes_[ix].value.shape());
        for (int b = 0; b < batch; ++b) {
            const double* gp = gy.data() + static_cast<int64_t>(b) * n;
            for (int64_t i = 0; i < n; ++i) d[i] += gp[i];
        }
        g.accumulate(ix, d);
    });
}

Var Graph::concat(const std::vector<Var>& xs, int axis) {
    if (xs.empty()) dim_fail("concat", "empty input list");
    std::vector<int> ids;
    for (Var v : xs) ids.push_back(check(v, "concat"));
    const Tensor& first = nodes_[ids[0]].value;
    const int r = first.rank();
    if (axis < 0 || axis >= r) dim_fail("concat", "axis out of range");
    int axis_total = 0;
    for (int id : ids) {
        const Tensor& t = nodes_[id].value;
        if (t.rank() != r) dim_fail("concat", "rank mismatch");
        for (int a = 0; a < r; ++a)
            if (a != axis && t.dim(a) != first.dim(a))
                dim_fail("concat", "shape mismatch " + t.shape_str() + " vs " + first.shape_str());
        axis_total += t.dim(axis);
    }
    std::vector<int> out_shape = first.shape();
    out_shape[static_cast<size_t>(axis)] = axis_total;
    Tensor out(out_shape);

    int64_t outer = 1, inner = 1;
    for (int a = 0; a < axis; ++a) outer *= first.dim(a);
    for (int a = axis + 1; a < r; ++a) inner *= first.dim(a);

    std::vector<int64_t> offsets;  // start of each input inside one outer row, in elements
    int64_t row_out = static_cast<int64_t>(axis_total) * inner;
    {
        int64_t off = 0;
        for (int id : ids) {
            offsets.push_back(off);
            off += static_cast<int64_t>(nodes_[id].value.dim(axis)) * inner;
        }
    }
    for (size_t which = 0; which < ids.size(); ++which) {
        const Tensor& t = nodes_[ids[which]].value;
        int64_t row_in = static_cast<int64_t>(t.dim(axis)) * inner;
        for (int64_t o = 0; o < outer; ++o)
            std::copy(t.data() + o * row_in, t.data() + (o + 1) * row_in,
                      out.data() + o * row_out + offsets[which]);
    }
    return push(std::move(out), ids,
                [ids, offsets, outer, inner, row_out](Graph& g, int self) {
                    const Tensor& gy = g.nodes_[self].grad;
                    for (size_t which = 0; which < ids.size(); ++which) {
                        int id = ids[which];
                        if (!g.nodes_[static_cast<size_t>(id)].needs_grad) continue;
                        const Tensor& t = g.nodes_[static_cast<size_t>(id)].value;
                        int64_t rin = t.size() / outer;
                        Tensor d(t.shape());
                        for (int64_t o = 0; o < outer; ++o) {
                            const double* src = gy.data() + o * row_out + offsets[which];
                            std::copy(src, src + rin, d.data() + o * rin);
                        }
                        g.accumulate(id, d);
                    }
                });
}

std::vector<Var> Graph::split(Var x, int axis, int parts) {
    int ix = check(x, "split");
    const Tensor& tx = nodes_[ix].value;
    const int r = tx.rank();
    if (axis < 0 || axis >= r) dim_fail("split", "axis out of range");
    if (parts <= 0 || tx.dim(axis) % parts != 0)
        dim_fail("split", "axis extent " + std::to_string(tx.dim(axis)) +
                              " not divisible into " + std::to_string(parts) + " parts");
    const int part_dim = tx.dim(axis) / parts;
    int64_t outer = 1, inner = 1;
    for (int a = 0; a < axis; ++a) outer *= tx.dim(a);
    for (int a = axis + 1; a < r; ++a) inner *= tx.dim(a);
    const int64_t row_in = static_cast<int64_t>(tx.dim(axis)) * inner;
    const int64_t row_part = static_cast<int64_t>(part_dim) * inner;

    std::vector<int> part_shape = tx.shape();
    part_shape[static_cast<size_t>(axis)] = part_dim;

    // Slice everything out first: push() may reallocate the node vector and
    // would invalidate tx.
    std::vector<Tensor> slices;
    for (int p = 0; p < parts; ++p) {
        Tensor out(part_shape);
        for (int64_t o = 0; o < outer; ++o) {
            const double* src = tx.data() + o * row_in + p * row_part;
            std::copy(src, src + row_part, out.data() + o * row_part);
        }
        slices.push_back(std::move(out));
    }

    std::vector<Var> outs;
    for (int p = 0; p < parts; ++p) {
        int64_t start = p * row_part;
        outs.push_back(push(std::move(slices[static_cast<size_t>(p)]), {ix},
                            [ix, start, outer, row_in, row_part](Graph& g, int self) {
                                if (!g.nodes_[static_cast<size_t>(ix)].needs_grad) return;
                                const Tensor& gy = g.nodes_[self].grad;
                                Tensor& gx = g.ensure_grad(ix);
                                for (int64_t o = 0; o < outer; ++o) {
                                    double* dst = gx.data() + o * row_in + start;
                                    const double* src = gy.data() + o * row_part;
                                    for (int64_t i = 0; i < row_part; ++i) dst[i] += src[i];
                                }
                            }));
    }
    return outs;
}

// --- bias broadcasts ---------------------------------------------------------

Var Graph::add_bias(Var x, Var bias) {
    int ix = check(x, "add_bias"), ib = check(bias, "add_bias");
    const Tensor& tx = nodes_[ix].value;
    const Tensor& tb = nodes_[ib].value;
    if (tb.rank() >= tx.rank()) dim_fail("add_bias", "bias rank must be below input rank");
    for (int i = 0; i < tb.rank(); ++i)
        if (tb.dim(i) != tx.dim(tx.rank() - tb.rank() + i))
            dim_fail("add_bias", "bias " + tb.shape_str() + " does not match trailing dims of " +
                                     tx.shape_str());
    const int64_t bn = tb.size();
    Tensor out(tx.shape());
    for (int64_t i = 0; i < tx.size(); ++i) out[i] = tx[i] + tb[i % bn];
    return push(std::move(out), {ix, ib}, [ix, ib, bn](Graph& g, int self) {
        const Tensor& gy = g.nodes_[self].grad;
        g.accumulate(ix, gy);
        if (g.nodes_[static_cast<size_t>(ib)].needs_grad) {
            Tensor d(g.nodes_[static_cast<size_t>(ib)].value.shape());
            for (int64_t i = 0; i < gy.size(); ++i) d[i % bn] += gy[i];
            g.accumulate(ib, d);
        }
    });
}

Var Graph::add_channel_bias(Var x, Var bias) {
    int ix = check(x, "add_channel_bias"), ib = check(bias, "add_channel_bias");
    const Tensor& tx = nodes_[ix].value;
    const Tensor& tb = nodes_[ib].value;
    if (tx.rank() != 4 || tb.rank() != 1 || tb.dim(0) != tx.dim(1))
        dim_fail("add_channel_bias", "expected x [B,C,H,W] and bias [C], got " + tx.shape_str() +
                                         " and " + tb.shape_str());
    const int64_t hw = static_cast<int64_t>(tx.dim(2)) * tx.dim(3);
    const int c = tx.dim(1);
    Tensor out(tx.shape());
    for (int64_t i = 0; i < tx.size(); ++i) out[i] = tx[i] + tb[(i / hw) % c];
    return push(std::move(out), {ix, ib}, [ix, ib, hw, c](Graph& g, int self) {
        const Tensor& gy = g.nodes_[self].grad;
        g.accumulate(ix, gy);
        if (g.nodes_[static_cast<size_t>(ib)].needs_grad) {
            Tensor d(g.nodes_[static_cast<size_t>(ib)].value.shape());
            for (int64_t i = 0; i < gy.size(); ++i) d[(i / hw) % c] += gy[i];
            g.accumulate(ib, d);
        }
    });
}

// --- linear algebra ----------------------------------------------------------

Var Graph::matmul(Var a, Var b) {
    int ia = check(a, "matmul"), ib = check(b, "matmul");
    const Tensor& ta = nodes_[ia].value;
    const Tensor& tb = nodes_[ib].value;

    auto mm_dims = [&](int m, int k, int k2, int n) {
        if (k != k2)
            dim_fail("matmul", "inner dims disagree: " + ta.shape_str() + " x " + tb.shape_str());
        (void)m;
        (void)n;
    };

    if (ta.rank() == 2 && tb.rank() == 2) {
        const int m = ta.dim(0), k = ta.dim(1), n = tb.dim(1);
        mm_dims(m, k, tb.dim(0), n);
        Tensor out({m, n});
        kern::matmul(ta.data(), tb.data(), out.data(), m, k, n);
        return push(std::move(out), {ia, ib}, [ia, ib, m, k, n](Graph& g, int self) {
            const Tensor& gy = g.nodes_[self].grad;
            const Tensor& va = g.nodes_[static_cast<size_t>(ia)].value;
            const Tensor& vb = g.nodes_[static_cast<size_t>(ib)].value;
            if (g.nodes_[static_cast<size_t>(ia)].needs_grad) {
                Tensor da({m, k});
                kern::matmul_nt(gy.data(), vb.data(), da.data(), m, n, k);
                g.accumulate(ia, da);
            }
            if (g.nodes_[static_cast<size_t>(ib)].needs_grad) {
                Tensor db({k, n});
                kern::matmul_tn(va.data(), gy.data(), db.data(), m, k, n);
                g.accumulate(ib, db);
            }
        });
    }

    if (ta.rank() == 3 && tb.rank() == 3) {
        const int bt = ta.dim(0), m = ta.dim(1), k = ta.dim(2), n = tb.dim(2);
        if (tb.dim(0) != bt)
            dim_fail("matmul", "batch dims disagree: " + ta.shape_str() + " x " + tb.shape_str());
        mm_dims(m, k, tb.dim(1), n);
        Tensor out({bt, m, n});
        for (int s = 0; s < bt; ++s)
            kern::matmul(ta.data() + static_cast<int64_t>(s) * m * k,
                         tb.data() + static_cast<int64_t>(s) * k * n,
                         out.data() + static_cast<int64_t>(s) * m * n, m, k, n);
        return push(std::move(out), {ia, ib}, [ia, ib, bt, m, k, n](Graph& g, int self) {
            const Tensor& gy = g.nodes_[self].grad;
            const Tensor& va = g.nodes_[static_cast<size_t>(ia)].value;
            const Tensor& vb = g.nodes_[static_cast<size_t>(ib)].value;
            if (g.nodes_[static_cast<size_t>(ia)].needs_grad) {
                Tensor da({bt, m, k});
                for (int s = 0; s < bt; ++s)
                    kern::matmul_nt(gy.data() + static_cast<int64_t>(s) * m * n,
                                    vb.data() + static_cast<int64_t>(s) * k * n,
                                    da.data() + static_cast<int64_t>(s) * m * k, m, n, k);
                g.accumulate(ia, da);
            }
            if (g.nodes_[static_cast<size_t>(ib)].needs_grad) {
                Tensor db({bt, k, n});
                for (int s = 0; s < bt; ++s)
                    kern::matmul_tn(va.data() + static_cast<int64_t>(s) * m * k,
                                    gy.data() + static_cast<int64_t>(s) * m * n,
                                    db.data() + static_cast<int64_t>(s) * k * n, m, k, n);
                g.accumulate(ib, db);
            }
        });
    }

    if (ta.rank() == 3 && tb.rank() == 2) {
        const int bt = ta.dim(0), m = ta.dim(1), k = ta.dim(2), n = tb.dim(1);
        mm_dims(m, k, tb.dim(0), n);
        Tensor out({bt, m, n});
        kern::matmul(ta.data(), tb.data(), out.data(), bt * m, k, n);
        return push(std::move(out), {ia, ib}, [ia, ib, bt, m, k, n](Graph& g, int self) {
            const Tensor& gy = g.nodes_[self].grad;
            const Tensor& va = g.nodes_[static_cast<size_t>(ia)].value;
            const Tensor& vb = g.nodes_[static_cast<size_t>(ib)].value;
            if (g.nodes_[static_cast<size_t>(ia)].needs_grad) {
                Tensor da({bt, m, k});
                kern::matmul_nt(gy.data(), vb.data(), da.data(), bt * m, n, k);
                g.accumulate(ia, da);
            }
            if (g.nodes_[static_cast<size_t>(ib)].needs_grad) {
                Tensor db({k, n});
                kern::matmul_tn(va.data(), gy.data(), db.data(), bt * m, k, n);
                g.accumulate(ib, db);
            }
        });
    }

    dim_fail("matmul", "unsupported ranks " + ta.shape_str() + " x " + tb.shape_str());
}

Var Graph::conv2d(Var x, Var w, int stride, int pad) {
    int ix = check(x, "conv2d"), iw = check(w, "conv2d");
    const Tensor& tx = nodes_[ix].value;
    const Tensor& tw = nodes_[iw].value;
    if (tx.rank() != 4 || tw.rank() != 4)
        dim_fail("conv2d", "expected x [B,Cin,H,W], w [Cout,Cin,KH,KW], got " + tx.shape_str() +
                               " and " + tw.shape_str());
    if (tw.dim(1) != tx.dim(1))
        dim_fail("conv2d", "channel mismatch: x " + tx.shape_str() + " w " + tw.shape_str());
    if (stride <= 0 || pad < 0) dim_fail("conv2d", "invalid stride/pad");
    kern::Conv2dGeom g{tx.dim(0), tx.dim(1), tx.dim(2), tx.dim(3),
                       tw.dim(0), tw.dim(2), tw.dim(3), stride,    pad};
    if ((g.h + 2 * pad - g.kh) % stride != 0 || (g.w + 2 * pad - g.kw) % stride != 0 ||
        g.h + 2 * pad < g.kh || g.w + 2 * pad < g.kw)
        dim_fail("conv2d", "geometry does not tile: x " + tx.shape_str() + " w " +
                               tw.shape_str() + " stride " + std::to_string(stride) + " pad " +
                               std::to_string(pad));
    Tensor out({g.batch, g.cout, g.ho(), g.wo()});
    kern::conv2d_fwd(tx.data(), tw.data(), out.data(), g);
    return push(std::move(out), {ix, iw}, [ix, iw, g](Graph& gr, int self) {
        const Tensor& gy = gr.nodes_[self].grad;
        if (gr.nodes_[static_cast<size_t>(ix)].needs_grad) {
            Tensor dx(gr.nodes_[static_cast<size_t>(ix)].value.shape());
            kern::conv2d_bwd_data(gy.data(), gr.nodes_[static_cast<size_t>(iw)].value.data(),
                                  dx.data(), g);
            gr.accumulate(ix, dx);
        }
        if (gr.nodes_[static_cast<size_t>(iw)].needs_grad) {
            Tensor dw(gr.nodes_[static_cast<size_t>(iw)].value.shape());
            kern::conv2d_bwd_weights(gy.data(), gr.nodes_[static_cast<size_t>(ix)].value.data(),
                                     dw.data(), g);
            gr.accumulate(iw, dw);
        }
    });
}

Var Graph::transpose_conv2d(Var x, Var w, int stride) {
    int ix = check(x, "transpose_conv2d"), iw = check(w, "transpose_conv2d");
    const Tensor& tx = nodes_[ix].value;
    const Tensor& tw = nodes_[iw].value;
    if (tx.rank() != 4 || tw.rank() != 4)
        dim_fail("transpose_conv2d", "expected x [B,Cin,H,W], w [Cin,Cout,KH,KW], got " +
                                         tx.shape_str() + " and " + tw.shape_str());
    if (tw.dim(0) != tx.dim(1))
        dim_fail("transpose_conv2d",
                 "channel mismatch: x " + tx.shape_str() + " w " + tw.shape_str());
    if (stride <= 0) dim_fail("transpose_conv2d", "invalid stride");
    const int b = tx.dim(0), cin = tx.dim(1), h = tx.dim(2), wdim = tx.dim(3);
    const int cout = tw.dim(1), kh = tw.dim(2), kw = tw.dim(3);
    const int ho = (h - 1) * stride + kh, wo = (wdim - 1) * stride + kw;
    // A transposed convolution is the data-gradient of the convolution that
    // maps [B,Cout,ho,wo] to [B,Cin,h,w]; reuse those kernels directly.
    kern::Conv2dGeom g{b, cout, ho, wo, cin, kh, kw, stride, 0};
    Tensor out({b, cout, ho, wo});
    kern::conv2d_bwd_data(tx.data(), tw.data(), out.data(), g);
    return push(std::move(out), {ix, iw}, [ix, iw, g](Graph& gr, int self) {
        const Tensor& gy = gr.nodes_[self].grad;
        if (gr.nodes_[static_cast<size_t>(ix)].needs_grad) {
            Tensor dx(gr.nodes_[static_cast<size_t>(ix)].value.shape());
            kern::conv2d_fwd(gy.data(), gr.nodes_[static_cast<size_t>(iw)].value.data(), dx.data(),
                             g);
            gr.accumulate(ix, dx);
        }
        if (gr.nodes_[static_cast<size_t>(iw)].needs_grad) {
            Tensor dw(gr.nodes_[static_cast<size_t>(iw)].value.shape());
            kern::conv2d_bwd_weights(gr.nodes_[static_cast<size_t>(ix)].value.data(), gy.data(),
                                     dw.data(), g);
            gr.accumulate(iw, dw);
        }
    });
}

Var Graph::avg_pool2d(Var x, int k) {
    int ix = check(x, "avg_pool2d");
    const Tensor& tx = nodes_[ix].value;
    if (tx.rank() != 4) dim_fail("avg_pool2d", "expected [B,C,H,W], got " + tx.shape_str());
    if (k <= 0 || tx.dim(2) % k != 0 || tx.dim(3) % k != 0)
        dim_fail("avg_pool2d", "grid " + tx.shape_str() + " not divisible by k=" +
                                   std::to_string(k));
    const int bc = tx.dim(0) * tx.dim(1), h = tx.dim(2), w = tx.dim(3);
    Tensor out({tx.dim(0), tx.dim(1), h / k, w / k});
    kern::avg_pool2d_fwd(tx.data(), out.data(), bc, h, w, k);
    return push(std::move(out), {ix}, [ix, bc, h, w, k](Graph& g, int self) {
        const Tensor& gy = g.nodes_[self].grad;
        Tensor d(g.nodes_[static_cast<size_t>(ix)].value.shape());
        kern::avg_pool2d_bwd(gy.data(), d.data(), bc, h, w, k);
        g.accumulate(ix, d);
    });
}

Var Graph::layer_norm(Var x, Var gamma, Var beta, double eps) {
    int ix = check(x, "layer_norm"), ig = check(gamma, "layer_norm"), ib = check(beta, "layer_norm");
    const Tensor& tx = nodes_[ix].value;
    const Tensor& tg = nodes_[ig].value;
    const Tensor& tb = nodes_[ib].value;
    const int d = tx.dim(tx.rank() - 1);
    if (tg.rank() != 1 || tb.rank() != 1 || tg.dim(0) != d || tb.dim(0) != d)
        dim_fail("layer_norm", "gamma/beta must be [" + std::to_string(d) + "], got " +
                                   tg.shape_str() + " and " + tb.shape_str());
    const int64_t rows = tx.size() / d;

    Tensor out(tx.shape());
    std::vector<double> mu(static_cast<size_t>(rows)), inv_sigma(static_cast<size_t>(rows));
    for (int64_t r = 0; r < rows; ++r) {
        const double* xr = tx.data() + r * d;
        double m = 0.0;
        for (int i = 0; i < d; ++i) m += xr[i];
        m /= d;
        double var = 0.0;
        for (int i = 0; i < d; ++i) var += (xr[i] - m) * (xr[i] - m);
        var /= d;
        double is = 1.0 / std::sqrt(var + eps);
        mu[static_cast<size_t>(r)] = m;
        inv_sigma[static_cast<size_t>(r)] = is;
        double* yr = out.data() + r * d;
        for (int i = 0; i < d; ++i) yr[i] = (xr[i] - m) * is * tg[i] + tb[i];
    }
    return push(std::move(out), {ix, ig, ib},
                [ix, ig, ib, d, rows, mu, inv_sigma](Graph& g, int self) {
                    const Tensor& gy = g.nodes_[self].grad;
                    const Tensor& vx = g.nodes_[static_cast<size_t>(ix)].value;
                    const Tensor& vg = g.nodes_[static_cast<size_t>(ig)].value;
                    Tensor dx(vx.shape());
                    Tensor dg({d}), db({d});
                    std::vector<double> xhat(static_cast<size_t>(d));
                    for (int64_t r = 0; r < rows; ++r) {
                        const double* xr = vx.data() + r * d;
                        const double* gr = gy.data() + r * d;
                        double is = inv_sigma[static_cast<size_t>(r)];
                        double m = mu[static_cast<size_t>(r)];
                        double mean_h = 0.0, mean_hx = 0.0;
                        for (int i = 0; i < d; ++i) {
                            xhat[static_cast<size_t>(i)] = (xr[i] - m) * is;
                            double h = gr[i] * vg[i];
                            mean_h += h;
                            mean_hx += h * xhat[static_cast<size_t>(i)];
                        }
                        mean_h /= d;
                        mean_hx /= d;
                        double* dxr = dx.data() + r * d;
                        for (int i = 0; i < d; ++i) {
                            double h = gr[i] * vg[i];
                            dxr[i] = is * (h - mean_h - xhat[static_cast<size_t>(i)] * mean_hx);
                            dg[i] += gr[i] * xhat[static_cast<size_t>(i)];
                            db[i] += gr[i];
                        }
                    }
                    g.accumulate(ix, dx);
                    g.accumulate(ig, dg);
                    g.accumulate(ib, db);
                });
}

Var Graph::softmax(Var x) {
    int ix = check(x, "softmax");
    const Tensor& tx = nodes_[ix].value;
    const int d = tx.dim(tx.rank() - 1);
    const int64_t rows = tx.size() / d;
    Tensor out(tx.shape());
    for (int64_t r = 0; r < rows; ++r) {
        const double* xr = tx.data() + r * d;
        double* yr = out.data() + r * d;
        double mx = xr[0];
        for (int i = 1; i < d; ++i) mx = std::max(mx, xr[i]);
        double sum = 0.0;
        for (int i = 0; i < d; ++i) {
            yr[i] = std::exp(xr[i] - mx);
            sum += yr[i];
        }
        for (int i = 0; i < d; ++i) yr[i] /= sum;
    }
    return push(std::move(out), {ix}, [ix, d, rows](Graph& g, int self) {
        const Tensor& gy = g.nodes_[self].grad;
        const Tensor& vy = g.nodes_[self].value;
        Tensor dx(vy.shape());
        for (int64_t r = 0; r < rows; ++r) {
            const double* yr = vy.data() + r * d;
            const double* gr = gy.data() + r * d;
            double dot = 0.0;
            for (int i = 0; i < d; ++i) dot += gr[i] * yr[i];
            double* dxr = dx.data() + r * d;
            for (int i = 0; i < d; ++i) dxr[i] = yr[i] * (gr[i] - dot);
        }
        g.accumulate(ix, dx);
    });
}

// --- reductions ---------------------------------------------------------------

Var Graph::reduce_sum(Var x) {
    int ix = check(x, "reduce_sum");
    const Tensor& tx = nodes_[ix].value;
    double s = 0.0;
    for (int64_t i = 0; i < tx.size(); ++i) s += tx[i];
    return push(Tensor::scalar(s), {ix}, [ix](Graph& g, int self) {
        double gv = g.nodes_[self].grad[0];
        const Tensor& vx = g.nodes_[static_cast<size_t>(ix)].value;
        Tensor d(vx.shape());
        for (int64_t i = 0; i < d.size(); ++i) d[i] = gv;
        g.accumulate(ix, d);
    });
}

Var Graph::reduce_mean(Var x) {
    int ix = check(x, "reduce_mean");
    const Tensor& tx = nodes_[ix].value;
    const int64_t n = tx.size();
    double s = 0.0;
    for (int64_t i = 0; i < n; ++i) s += tx[i];
    return push(Tensor::scalar(s / static_cast<double>(n)), {ix}, [ix, n](Graph& g, int self) {
        double gv = g.nodes_[self].grad[0] / static_cast<double>(n);
        Tensor d(g.nodes_[static_cast<size_t>(ix)].value.shape());
        for (int64_t i = 0; i < d.size(); ++i) d[i] = gv;
        g.accumulate(ix, d);
    });
}

Var Graph::mean_axis(Var x, int axis) {
    int ix = check(x, "mean_axis");
    const Tensor& tx = nodes_[ix].value;
    const int r = tx.rank();
    if (axis < 0 || axis >= r) dim_fail("mean_axis", "axis out of range");
    int64_t outer = 1, inner = 1;
    for (int a = 0; a < axis; ++a) outer *= tx.dim(a);
    for (int a = axis + 1; a < r; ++a) inner *= tx.dim(a);
    const int ad = tx.dim(axis);
    std::vector<int> out_shape;
    for (int a = 0; a < r; ++a)
        if (a != axis) out_shape.push_back(tx.dim(a));
    if (out_shape.empty()) out_shape.push_back(1);
    Tensor out(out_shape);
    for (int64_t o = 0; o < outer; ++o) {
        for (int64_t i = 0; i < inner; ++i) {
            double s = 0.0;
            for (int a = 0; a < ad; ++a) s += tx[(o * ad + a) * inner + i];
            out[o * inner + i] = s / ad;
        }
    }
    return push(std::move(out), {ix}, [ix, outer, inner, ad](Graph& g, int self) {
        const Tensor& gy = g.nodes_[self].grad;
        Tensor d(g.nodes_[static_cast<size_t>(ix)].value.shape());
        for (int64_t o = 0; o < outer; ++o)
            for (int64_t i = 0; i < inner; ++i) {
                double gv = gy[o * inner + i] / ad;
                for (int a = 0; a < ad; ++a) d[(o * ad + a) * inner + i] = gv;
            }
        g.accumulate(ix, d);
    });
}

Var Graph::l2_norm(Var x) {
    int ix = check(x, "l2_norm");
    const Tensor& tx = nodes_[ix].value;
    double ss = 0.0;
    for (int64_t i = 0; i < tx.size(); ++i) ss += tx[i] * tx[i];
    double norm = std::sqrt(ss);
    return push(Tensor::scalar(norm), {ix}, [ix, norm](Graph& g, int self) {
        double gv = g.nodes_[self].grad[0];
        const Tensor& vx = g.nodes_[static_cast<size_t>(ix)].value;
        Tensor d(vx.shape());
        if (norm > 0.0)
            for (int64_t i = 0; i < d.size(); ++i) d[i] = gv * vx[i] / norm;
        g.accumulate(ix, d);
    });
}

// --- spectral -----------------------------------------------------------------

namespace {

// re = (C_H x) C_W - (S_H x) S_W;  im = -((C_H x) S_W + (S_H x) C_W)
void dft2_slice(const double* x, int h, int w, double* re, double* im) {
    const DftBasis& bh = dft_basis(h);
    const DftBasis& bw = dft_basis(w);
    std::vector<double> a(static_cast<size_t>(h) * w), b(static_cast<size_t>(h) * w),
        t1(static_cast<size_t>(h) * w), t2(static_cast<size_t>(h) * w);
    kern::matmul(bh.cosm.data(), x, a.data(), h, h, w);
    kern::matmul(bh.sinm.data(), x, b.data(), h, h, w);
    kern::matmul(a.data(), bw.cosm.data(), t1.data(), h, w, w);
    kern::matmul(b.data(), bw.sinm.data(), t2.data(), h, w, w);
    for (int64_t i = 0; i < static_cast<int64_t>(h) * w; ++i) re[i] = t1[i] - t2[i];
    kern::matmul(a.data(), bw.sinm.data(), t1.data(), h, w, w);
    kern::matmul(b.data(), bw.cosm.data(), t2.data(), h, w, w);
    for (int64_t i = 0; i < static_cast<int64_t>(h) * w; ++i) im[i] = -(t1[i] + t2[i]);
}

// x = s * [ (C_H re - S_H im) C_W - (C_H im + S_H re) S_W ]
void idft2_slice(const double* re, const double* im, int h, int w, double scale, double* x) {
    const DftBasis& bh = dft_basis(h);
    const DftBasis& bw = dft_basis(w);
    const int64_t n = static_cast<int64_t>(h) * w;
    std::vector<double> cre(static_cast<size_t>(n)), sre(static_cast<size_t>(n)),
        cim(static_cast<size_t>(n)), sim(static_cast<size_t>(n)), p(static_cast<size_t>(n)),
        q(static_cast<size_t>(n)), t1(static_cast<size_t>(n)), t2(static_cast<size_t>(n));
    kern::matmul(bh.cosm.data(), re, cre.data(), h, h, w);
    kern::matmul(bh.sinm.data(), re, sre.data(), h, h, w);
    kern::matmul(bh.cosm.data(), im, cim.data(), h, h, w);
    kern::matmul(bh.sinm.data(), im, sim.data(), h, h, w);
    for (int64_t i = 0; i < n; ++i) {
        p[static_cast<size_t>(i)] = cre[static_cast<size_t>(i)] - sim[static_cast<size_t>(i)];
        q[static_cast<size_t>(i)] = cim[static_cast<size_t>(i)] + sre[static_cast<size_t>(i)];
    }
    kern::matmul(p.data(), bw.cosm.data(), t1.data(), h, w, w);
    kern::matmul(q.data(), bw.sinm.data(), t2.data(), h, w, w);
    for (int64_t i = 0; i < n; ++i) x[i] = scale * (t1[static_cast<size_t>(i)] - t2[static_cast<size_t>(i)]);
}

}  // namespace

std::pair<Var, Var> Graph::dft2(Var x) {
    int ix = check(x, "dft2");
    const Tensor& tx = nodes_[ix].value;
    if (tx.rank() < 2) dim_fail("dft2", "need rank >= 2, got " + tx.shape_str());
    const int h = tx.dim(tx.rank() - 2), w = tx.dim(tx.rank() - 1);
    const int64_t hw = static_cast<int64_t>(h) * w;
    const int64_t slices = tx.size() / hw;

    Tensor re(tx.shape()), im(tx.shape());
    for (int64_t s = 0; s < slices; ++s)
        dft2_slice(tx.data() + s * hw, h, w, re.data() + s * hw, im.data() + s * hw);

    // Two nodes share the parent; each backward applies its own adjoint half.
    auto adjoint_re = [ix, h, w, hw, slices](Graph& g, int self) {
        const Tensor& gy = g.nodes_[self].grad;
        Tensor d(g.nodes_[static_cast<size_t>(ix)].value.shape());
        const DftBasis& bh = dft_basis(h);
        const DftBasis& bw = dft_basis(w);
        std::vector<double> t(static_cast<size_t>(hw)), u(static_cast<size_t>(hw));
        for (int64_t s = 0; s < slices; ++s) {
            const double* gre = gy.data() + s * hw;
            double* dst = d.data() + s * hw;
            sandwich(gre, bh.cosm, bw.cosm, dst, h, w, t.data());
            sandwich(gre, bh.sinm, bw.sinm, u.data(), h, w, t.data());
            for (int64_t i = 0; i < hw; ++i) dst[i] -= u[static_cast<size_t>(i)];
        }
        g.accumulate(ix, d);
    };
    auto adjoint_im = [ix, h, w, hw, slices](Graph& g, int self) {
        const Tensor& gy = g.nodes_[self].grad;
        Tensor d(g.nodes_[static_cast<size_t>(ix)].value.shape());
        const DftBasis& bh = dft_basis(h);
        const DftBasis& bw = dft_basis(w);
        std::vector<double> t(static_cast<size_t>(hw)), u(static_cast<size_t>(hw));
        for (int64_t s = 0; s < slices; ++s) {
            const double* gim = gy.data() + s * hw;
            double* dst = d.data() + s * hw;
            sandwich(gim, bh.sinm, bw.cosm, dst, h, w, t.data());
            sandwich(gim, bh.cosm, bw.sinm, u.data(), h, w, t.data());
            for (int64_t i = 0; i < hw; ++i) dst[i] = -(dst[i] + u[static_cast<size_t>(i)]);
        }
        g.accumulate(ix, d);
    };
    Var vre = push(std::move(re), {ix}, adjoint_re);
    Var vim = push(std::move(im), {ix}, adjoint_im);
    return {vre, vim};
}

Var Graph::idft2(Var re, Var im) {
    int ir = check(re, "idft2"), ii = check(im, "idft2");
    const Tensor& tre = nodes_[ir].value;
    const Tensor& tim = nodes_[ii].value;
    check_same_shape("idft2", tre, tim);
    if (tre.rank() < 2) dim_fail("idft2", "need rank >= 2, got " + tre.shape_str());
    const int h = tre.dim(tre.rank() - 2), w = tre.dim(tre.rank() - 1);
    const int64_t hw = static_cast<int64_t>(h) * w;
    const int64_t slices = tre.size() / hw;
    const double scale = 1.0 / static_cast<double>(hw);

    Tensor out(tre.shape());
    for (int64_t s = 0; s < slices; ++s)
        idft2_slice(tre.data() + s * hw, tim.data() + s * hw, h, w, scale, out.data() + s * hw);

    return push(std::move(out), {ir, ii}, [ir, ii, h, w, hw, slices, scale](Graph& g, int self) {
        const Tensor& gy = g.nodes_[self].grad;
        const DftBasis& bh = dft_basis(h);
        const DftBasis& bw = dft_basis(w);
        std::vector<double> t(static_cast<size_t>(hw)), u(static_cast<size_t>(hw));
        if (g.nodes_[static_cast<size_t>(ir)].needs_grad) {
            Tensor dre(gy.shape());
            for (int64_t s = 0; s < slices; ++s) {
                const double* gx = gy.data() + s * hw;
                double* dst = dre.data() + s * hw;
                sandwich(gx, bh.cosm, bw.cosm, dst, h, w, t.data());
                sandwich(gx, bh.sinm, bw.sinm, u.data(), h, w, t.data());
                for (int64_t i = 0; i < hw; ++i)
                    dst[i] = scale * (dst[i] - u[static_cast<size_t>(i)]);
            }
            g.accumulate(ir, dre);
        }
        if (g.nodes_[static_cast<size_t>(ii)].needs_grad) {
            Tensor dim_(gy.shape());
            for (int64_t s = 0; s < slices; ++s) {
                const double* gx = gy.data() + s * hw;
                double* dst = dim_.data() + s * hw;
                sandwich(gx, bh.sinm, bw.cosm, dst, h, w, t.data());
                sandwich(gx, bh.cosm, bw.sinm, u.data(), h, w, t.data());
                for (int64_t i = 0; i < hw; ++i)
                    dst[i] = -scale * (dst[i] + u[static_cast<size_t>(i)]);
            }
            g.accumulate(ii, dim_);
        }
    });
}

}  // namespace lrnoise
