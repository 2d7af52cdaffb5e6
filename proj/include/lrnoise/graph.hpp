#ifndef LRNOISE_GRAPH_HPP
#define LRNOISE_GRAPH_HPP

#include <functional>
#include <utility>
#include <vector>

#include "lrnoise/tensor.hpp"

namespace lrnoise {

/// Handle to a node inside a Graph.
struct Var {
    int id = -1;
    bool valid() const { return id >= 0; }
};

/**
 * Reverse-mode differentiation tape.
 *
 * Operations execute eagerly and append a node recording operands and a
 * backward rule. backward() walks the tape once in reverse index order, so
 * gradient accumulation order is fixed by construction order and runs are
 * bitwise reproducible. A graph is single-owner: build, call backward once,
 * read gradients, discard.
 */
class Graph {
public:
    Graph() = default;
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    Var leaf(Tensor value, bool requires_grad = false);

    // elementwise / shape
    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var mul(Var a, Var b);
    Var scale(Var a, double c);
    Var scale_by(Var a, Var s);  // s is a size-1 tensor (learned gain)
    Var add_scalar(Var a, double c);
    Var leaky_relu(Var x, double slope);
    Var relu(Var x) { return leaky_relu(x, 0.0); }
    Var abs(Var x);
    Var sqrt(Var x);
    Var clamp01(Var x);
    Var reshape(Var x, std::vector<int> shape);
    Var permute(Var x, std::vector<int> axes);
    Var broadcast(Var x, int batch);  // new leading axis, replicated
    Var concat(const std::vector<Var>& xs, int axis);
    std::vector<Var> split(Var x, int axis, int parts);

    // bias broadcasts: trailing-shape bias (linear layers) and channel bias
    // on [B,C,H,W] (conv layers)
    Var add_bias(Var x, Var bias);
    Var add_channel_bias(Var x, Var bias);

    // linear algebra
    Var matmul(Var a, Var b);  // [M,K]x[K,N], [B,M,K]x[B,K,N], [B,M,K]x[K,N]
    Var conv2d(Var x, Var w, int stride, int pad);            // w [Cout,Cin,KH,KW]
    Var transpose_conv2d(Var x, Var w, int stride);           // w [Cin,Cout,KH,KW]
    Var avg_pool2d(Var x, int k);                             // [B,C,H,W]
    Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-5);  // last axis
    Var softmax(Var x);                                       // last axis

    // reductions
    Var reduce_sum(Var x);        // -> scalar
    Var reduce_mean(Var x);       // -> scalar
    Var mean_axis(Var x, int axis);
    Var l2_norm(Var x);           // -> scalar

    // spectral: unnormalized forward 2D DFT over the trailing two axes;
    // idft2 applies the 1/(H*W) factor so idft2(dft2(x)) == x.
    std::pair<Var, Var> dft2(Var x);
    Var idft2(Var re, Var im);

    const Tensor& value(Var v) const;
    void backward(Var loss);
    bool has_grad(Var v) const;
    const Tensor& grad(Var v) const;
    size_t num_nodes() const { return nodes_.size(); }

private:
    struct Node {
        Tensor value;
        bool needs_grad = false;
        std::vector<int> parents;
        std::function<void(Graph&, int)> backprop;  // reads nodes_[id].grad
        Tensor grad;
        bool has_grad = false;
    };

    const Node& node(Var v) const;
    Node& node(Var v);
    int check(Var v, const char* op) const;
    Var push(Tensor value, std::vector<int> parents, std::function<void(Graph&, int)> backprop);
    void accumulate(int node_id, const Tensor& delta);
    void accumulate_raw(int node_id, const double* delta, int64_t n);
    Tensor& ensure_grad(int node_id);

    std::vector<Node> nodes_;
    bool backward_run_ = false;

    friend struct GraphTestPeer;
};

}  // namespace lrnoise

#endif
