#ifndef LRNOISE_TESTS_HELPERS_HPP
#define LRNOISE_TESTS_HELPERS_HPP

#include <cmath>
#include <functional>
#include <vector>

#include "lrnoise/rng.hpp"
#include "lrnoise/tensor.hpp"

namespace lrnoise::testing {

inline Tensor random_tensor(std::vector<int> shape, RngStream& rng, double lo = -1.0,
                            double hi = 1.0) {
    Tensor t(std::move(shape));
    for (int64_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
    return t;
}

/**
 * Central finite-difference gradient check.
 *
 * `loss` evaluates a scalar from flat inputs; `grads` holds the reverse-mode
 * gradient for each input tensor. Checks up to `max_coords` randomly chosen
 * coordinates per tensor and returns the worst relative error seen.
 */
struct FdCheck {
    double max_rel_err = 0.0;
    int checked = 0;
};

inline FdCheck fd_check(const std::function<double(const std::vector<Tensor>&)>& loss,
                        std::vector<Tensor> inputs, const std::vector<Tensor>& grads,
                        RngStream& rng, int max_coords = 12, double h = 1e-5) {
    FdCheck result;
    for (size_t t = 0; t < inputs.size(); ++t) {
        const int64_t n = inputs[t].size();
        const int ncheck = static_cast<int>(std::min<int64_t>(n, max_coords));
        for (int c = 0; c < ncheck; ++c) {
            int64_t i = (n <= max_coords) ? c
                                          : static_cast<int64_t>(rng.next_u64() %
                                                                 static_cast<uint64_t>(n));
            const double orig = inputs[t][i];
            const double step = h * std::max(1.0, std::fabs(orig));
            inputs[t][i] = orig + step;
            const double up = loss(inputs);
            inputs[t][i] = orig - step;
            const double dn = loss(inputs);
            inputs[t][i] = orig;
            const double fd = (up - dn) / (2.0 * step);
            const double ad = grads[t][i];
            const double rel = std::fabs(ad - fd) / std::max({std::fabs(fd), std::fabs(ad), 1e-3});
            result.max_rel_err = std::max(result.max_rel_err, rel);
            ++result.checked;
        }
    }
    return result;
}

}  // namespace lrnoise::testing

#include "lrnoise/blocks.hpp"

namespace lrnoise::testing {

/// FD check over an input tensor plus every parameter bound through a
/// Binder. `forward` must bind parameters through the Binder it is given.
/// Returns the worst relative error; callers assert against their tolerance.
inline double param_fd_check(Tensor input, std::vector<Tensor*> params,
                             const std::function<Var(Graph&, Binder&, Var)>& forward,
                             uint64_t seed, int coords_per_tensor = 5) {
    RngStream rng(seed);

    Tensor weights;
    {
        Graph g;
        Binder bind(g, false);
        Var out = forward(g, bind, g.leaf(input, false));
        weights = random_tensor(g.value(out).shape(), rng, 0.2, 1.0);
    }
    auto eval = [&]() {
        Graph g;
        Binder bind(g, false);
        Var out = forward(g, bind, g.leaf(input, false));
        Var w = g.leaf(weights, false);
        return g.value(g.reduce_sum(g.mul(out, w))).item();
    };

    Graph g;
    Binder bind(g, true);
    Var x = g.leaf(input, true);
    Var out = forward(g, bind, x);
    Var loss = g.reduce_sum(g.mul(out, g.leaf(weights, false)));
    g.backward(loss);

    Tensor input_grad = g.grad(x);
    std::vector<Tensor> param_grads;
    for (Tensor* t : params) {
        Var v = bind.bound(*t);
        param_grads.push_back(g.has_grad(v) ? g.grad(v) : Tensor::zeros(t->shape()));
    }

    double max_rel = 0.0;
    auto check_tensor = [&](Tensor& target, const Tensor& grad) {
        const int64_t n = target.size();
        int ncheck = static_cast<int>(std::min<int64_t>(n, coords_per_tensor));
        for (int c = 0; c < ncheck; ++c) {
            int64_t i = (n <= coords_per_tensor)
                            ? c
                            : static_cast<int64_t>(rng.next_u64() % static_cast<uint64_t>(n));
            double orig = target[i];
            double h = 1e-5 * std::max(1.0, std::fabs(orig));
            target[i] = orig + h;
            double up = eval();
            target[i] = orig - h;
            double dn = eval();
            target[i] = orig;
            double fd = (up - dn) / (2.0 * h);
            double ad = grad[i];
            double rel = std::fabs(ad - fd) / std::max({std::fabs(fd), std::fabs(ad), 1e-3});
            max_rel = std::max(max_rel, rel);
        }
    };
    check_tensor(input, input_grad);
    for (size_t t = 0; t < params.size(); ++t) check_tensor(*params[t], param_grads[t]);
    return max_rel;
}

inline double mean_of(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

inline double var_of(const std::vector<double>& v) {
    const double m = mean_of(v);
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return s / static_cast<double>(v.size());
}

}  // namespace lrnoise::testing

#endif
