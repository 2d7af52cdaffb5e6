#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <functional>
#include <vector>

#include "helpers.hpp"
#include "lrnoise/errors.hpp"
#include "lrnoise/graph.hpp"

using namespace lrnoise;
using lrnoise::testing::fd_check;
using lrnoise::testing::random_tensor;

namespace {

using Builder = std::function<Var(Graph&, const std::vector<Var>&)>;

// Runs `builder` on leaves with requires_grad, reduces the output to a scalar
// with fixed random weights, and compares reverse-mode gradients against
// central finite differences.
void check_gradients(const char* name, const std::vector<Tensor>& inputs, const Builder& builder,
                     uint64_t seed, double tol = 1e-4) {
    CAPTURE(name);
    RngStream rng(seed);

    // Fixed reduction weights matching the output shape.
    Tensor weights;
    {
        Graph g;
        std::vector<Var> vars;
        for (const auto& t : inputs) vars.push_back(g.leaf(t, false));
        Var out = builder(g, vars);
        weights = random_tensor(g.value(out).shape(), rng, 0.2, 1.0);
    }

    auto eval = [&](const std::vector<Tensor>& ins) {
        Graph g;
        std::vector<Var> vars;
        for (const auto& t : ins) vars.push_back(g.leaf(t, false));
        Var out = builder(g, vars);
        Var w = g.leaf(weights, false);
        return g.value(g.reduce_sum(g.mul(out, w))).item();
    };

    Graph g;
    std::vector<Var> vars;
    for (const auto& t : inputs) vars.push_back(g.leaf(t, true));
    Var out = builder(g, vars);
    Var w = g.leaf(weights, false);
    Var loss = g.reduce_sum(g.mul(out, w));
    g.backward(loss);
    std::vector<Tensor> grads;
    for (Var v : vars) grads.push_back(g.grad(v));

    auto res = fd_check(eval, inputs, grads, rng);
    CHECK(res.max_rel_err <= tol);
}

}  // namespace

TEST_CASE("conv2d with an identity kernel is the identity map") {
    Graph g;
    RngStream rng(50);
    Tensor x = random_tensor({1, 1, 5, 7}, rng);
    Tensor k({1, 1, 3, 3});
    k[4] = 1.0;  // center tap
    Var y = g.conv2d(g.leaf(x), g.leaf(k), 1, 1);
    const Tensor& out = g.value(y);
    REQUIRE(out.same_shape(x));
    for (int64_t i = 0; i < x.size(); ++i) CHECK(out[i] == doctest::Approx(x[i]).epsilon(1e-15));
}

TEST_CASE("matmul by the identity is the identity") {
    Graph g;
    RngStream rng(51);
    Tensor a = random_tensor({4, 6}, rng);
    Tensor eye({6, 6});
    for (int i = 0; i < 6; ++i) eye[static_cast<int64_t>(i) * 6 + i] = 1.0;
    Var y = g.matmul(g.leaf(a), g.leaf(eye));
    for (int64_t i = 0; i < a.size(); ++i)
        CHECK(g.value(y)[i] == doctest::Approx(a[i]).epsilon(1e-15));
}

TEST_CASE("conv2d matches a quadruple-loop oracle to 1e-12") {
    Graph g;
    RngStream rng(52);
    Tensor x = random_tensor({2, 3, 8, 8}, rng);
    Tensor w = random_tensor({4, 3, 3, 3}, rng);
    Var y = g.conv2d(g.leaf(x), g.leaf(w), 1, 1);
    const Tensor& out = g.value(y);
    REQUIRE(out.shape() == std::vector<int>{2, 4, 8, 8});
    for (int b = 0; b < 2; ++b)
        for (int co = 0; co < 4; ++co)
            for (int oh = 0; oh < 8; ++oh)
                for (int ow = 0; ow < 8; ++ow) {
                    double acc = 0.0;
                    for (int ci = 0; ci < 3; ++ci)
                        for (int fh = 0; fh < 3; ++fh)
                            for (int fw = 0; fw < 3; ++fw) {
                                int ih = oh - 1 + fh, iw = ow - 1 + fw;
                                if (ih < 0 || ih >= 8 || iw < 0 || iw >= 8) continue;
                                acc += x[((static_cast<int64_t>(b) * 3 + ci) * 8 + ih) * 8 + iw] *
                                       w[((static_cast<int64_t>(co) * 3 + ci) * 3 + fh) * 3 + fw];
                            }
                    CHECK(out[((static_cast<int64_t>(b) * 4 + co) * 8 + oh) * 8 + ow] ==
                          doctest::Approx(acc).epsilon(1e-12));
                }
}

TEST_CASE("dft2 of a constant image has a single DC bin") {
    Graph g;
    const double c = 0.7;
    Var x = g.leaf(Tensor::full({4, 4}, c));
    auto [re, im] = g.dft2(x);
    const Tensor& tre = g.value(re);
    const Tensor& tim = g.value(im);
    CHECK(tre[0] == doctest::Approx(16.0 * c).epsilon(1e-12));
    for (int64_t i = 1; i < 16; ++i) CHECK(tre[i] == doctest::Approx(0.0).scale(1.0));
    for (int64_t i = 0; i < 16; ++i) CHECK(tim[i] == doctest::Approx(0.0).scale(1.0));
}

TEST_CASE("spectral identities: round trip and Parseval over 100 random 16x16 trials") {
    RngStream rng(53);
    for (int trial = 0; trial < 100; ++trial) {
        Graph g;
        Tensor x = random_tensor({16, 16}, rng);
        Var vx = g.leaf(x);
        auto [re, im] = g.dft2(vx);
        Var back = g.idft2(re, im);
        const Tensor& b = g.value(back);
        double max_err = 0.0;
        for (int64_t i = 0; i < x.size(); ++i) max_err = std::max(max_err, std::fabs(b[i] - x[i]));
        CHECK(max_err <= 1e-10);

        double sum_x2 = 0.0;
        for (int64_t i = 0; i < x.size(); ++i) sum_x2 += x[i] * x[i];
        const Tensor& tre = g.value(re);
        const Tensor& tim = g.value(im);
        double sum_spec = 0.0;
        for (int64_t i = 0; i < tre.size(); ++i) sum_spec += tre[i] * tre[i] + tim[i] * tim[i];
        CHECK(std::fabs(sum_x2 - sum_spec / 256.0) <= 1e-10);
    }
}

TEST_CASE("d/dx (x*x) at x=3 is 6") {
    Graph g;
    Var x = g.leaf(Tensor::scalar(3.0), true);
    Var y = g.mul(x, x);
    g.backward(y);
    CHECK(g.grad(x)[0] == doctest::Approx(6.0).epsilon(1e-12));
}

TEST_CASE("finite-difference gradient suite over every op") {
    RngStream rng(54);

    SUBCASE("add")  { check_gradients("add", {random_tensor({3, 4}, rng), random_tensor({3, 4}, rng)},
        [](Graph& g, const std::vector<Var>& v) { return g.add(v[0], v[1]); }, 100); }
    SUBCASE("sub")  { check_gradients("sub", {random_tensor({3, 4}, rng), random_tensor({3, 4}, rng)},
        [](Graph& g, const std::vector<Var>& v) { return g.sub(v[0], v[1]); }, 101); }
    SUBCASE("mul")  { check_gradients("mul", {random_tensor({3, 4}, rng), random_tensor({3, 4}, rng)},
        [](Graph& g, const std::vector<Var>& v) { return g.mul(v[0], v[1]); }, 102); }
    SUBCASE("scale") { check_gradients("scale", {random_tensor({5}, rng)},
        [](Graph& g, const std::vector<Var>& v) { return g.scale(v[0], -1.7); }, 103); }
    SUBCASE("scale_by") { check_gradients("scale_by", {random_tensor({5}, rng), random_tensor({1}, rng)},
        [](Graph& g, const std::vector<Var>& v) { return g.scale_by(v[0], v[1]); }, 140); }
    SUBCASE("add_scalar") { check_gradients("add_scalar", {random_tensor({5}, rng)},
        [](Graph& g, const std::vector<Var>& v) { return g.add_scalar(v[0], 0.3); }, 104); }
    SUBCASE("leaky_relu") { check_gradients("leaky_relu", {random_tensor({64}, rng)},
        [](Graph& g, const std::vector<Var>& v) { return g.leaky_relu(v[0], 0.2); }, 105); }
    SUBCASE("abs") {
        Tensor x = random_tensor({32}, rng);
        for (int64_t i = 0; i < x.size(); ++i)
            if (std::fabs(x[i]) < 0.05) x[i] = 0.1;  // keep FD away from the kink
        check_gradients("abs", {x},
            [](Graph& g, const std::vector<Var>& v) { return g.abs(v[0]); }, 106);
    }
    SUBCASE("sqrt") { check_gradients("sqrt", {random_tensor({16}, rng, 0.1, 2.0)},
        [](Graph& g, const std::vector<Var>& v) { return g.sqrt(v[0]); }, 107); }
    SUBCASE("clamp01") {
        Tensor x = random_tensor({48}, rng, -0.5, 1.5);
        for (int64_t i = 0; i < x.size(); ++i)
            if (std::fabs(x[i]) < 0.05 || std::fabs(x[i] - 1.0) < 0.05) x[i] = 0.5;
        check_gradients("clamp01", {x},
            [](Graph& g, const std::vector<Var>& v) { return g.clamp01(v[0]); }, 108);
    }
    SUBCASE("reshape") { check_gradients("reshape", {random_tensor({2, 6}, rng)},
        [](Graph& g, const std::vector<Var>& v) { return g.reshape(v[0], {3, 4}); }, 109); }
    SUBCASE("permute") { check_gradients("permute", {random_tensor({2, 3, 4}, rng)},
        [](Graph& g, const std::vector<Var>& v) { return g.permute(v[0], {2, 0, 1}); }, 110); }
    SUBCASE("broadcast") { check_gradients("broadcast", {random_tensor({3, 2}, rng)},
        [](Graph& g, const std::vector<Var>& v) { return g.broadcast(v[0], 4); }, 111); }
    SUBCASE("concat") {
        check_gradients("concat",
            {random_tensor({2, 3, 2}, rng), random_tensor({2, 1, 2}, rng),
             random_tensor({2, 2, 2}, rng)},
            [](Graph& g, const std::vector<Var>& v) {
                return g.concat({v[0], v[1], v[2]}, 1);
            }, 112);
    }
    SUBCASE("split") {
        check_gradients("split", {random_tensor({2, 6}, rng)},
            [](Graph& g, const std::vector<Var>& v) {
                auto parts = g.split(v[0], 1, 3);
                // combine so all three slices contribute differently
                return g.concat({parts[2], g.scale(parts[0], 2.0), parts[1]}, 1);
            }, 113);
    }
    SUBCASE("add_bias") {
        check_gradients("add_bias", {random_tensor({2, 3, 4}, rng), random_tensor({4}, rng)},
            [](Graph& g, const std::vector<Var>& v) { return g.add_bias(v[0], v[1]); }, 114);
    }
    SUBCASE("add_channel_bias") {
        check_gradients("add_channel_bias",
            {random_tensor({2, 3, 4, 4}, rng), random_tensor({3}, rng)},
            [](Graph& g, const std::vector<Var>& v) { return g.add_channel_bias(v[0], v[1]); },
            115);
    }
    SUBCASE("matmul 2d") {
        check_gradients("matmul2", {random_tensor({3, 4}, rng), random_tensor({4, 5}, rng)},
            [](Graph& g, const std::vector<Var>& v) { return g.matmul(v[0], v[1]); }, 116);
    }
    SUBCASE("matmul batched") {
        check_gradients("matmul3", {random_tensor({2, 3, 4}, rng), random_tensor({2, 4, 5}, rng)},
            [](Graph& g, const std::vector<Var>& v) { return g.matmul(v[0], v[1]); }, 117);
    }
    SUBCASE("matmul 3d by 2d") {
        check_gradients("matmul32", {random_tensor({2, 3, 4}, rng), random_tensor({4, 5}, rng)},
            [](Graph& g, const std::vector<Var>& v) { return g.matmul(v[0], v[1]); }, 118);
    }
    SUBCASE("conv2d") {
        check_gradients("conv2d", {random_tensor({2, 3, 6, 6}, rng), random_tensor({4, 3, 3, 3}, rng)},
            [](Graph& g, const std::vector<Var>& v) { return g.conv2d(v[0], v[1], 1, 1); }, 119);
    }
    SUBCASE("conv2d strided") {
        check_gradients("conv2d_s2", {random_tensor({1, 2, 6, 6}, rng), random_tensor({3, 2, 2, 2}, rng)},
            [](Graph& g, const std::vector<Var>& v) { return g.conv2d(v[0], v[1], 2, 0); }, 120);
    }
    SUBCASE("transpose_conv2d") {
        check_gradients("tconv2d", {random_tensor({1, 3, 4, 4}, rng), random_tensor({3, 2, 2, 2}, rng)},
            [](Graph& g, const std::vector<Var>& v) { return g.transpose_conv2d(v[0], v[1], 2); },
            121);
    }
    SUBCASE("avg_pool2d") {
        check_gradients("avg_pool", {random_tensor({2, 3, 4, 6}, rng)},
            [](Graph& g, const std::vector<Var>& v) { return g.avg_pool2d(v[0], 2); }, 122);
    }
    SUBCASE("layer_norm") {
        check_gradients("layer_norm",
            {random_tensor({3, 5, 8}, rng), random_tensor({8}, rng, 0.5, 1.5),
             random_tensor({8}, rng)},
            [](Graph& g, const std::vector<Var>& v) { return g.layer_norm(v[0], v[1], v[2]); },
            123);
    }
    SUBCASE("softmax") {
        check_gradients("softmax", {random_tensor({4, 6}, rng, -2.0, 2.0)},
            [](Graph& g, const std::vector<Var>& v) { return g.softmax(v[0]); }, 124);
    }
    SUBCASE("reduce_sum") { check_gradients("reduce_sum", {random_tensor({3, 4}, rng)},
        [](Graph& g, const std::vector<Var>& v) { return g.reduce_sum(v[0]); }, 125); }
    SUBCASE("reduce_mean") { check_gradients("reduce_mean", {random_tensor({3, 4}, rng)},
        [](Graph& g, const std::vector<Var>& v) { return g.reduce_mean(v[0]); }, 126); }
    SUBCASE("mean_axis") { check_gradients("mean_axis", {random_tensor({3, 4, 2}, rng)},
        [](Graph& g, const std::vector<Var>& v) { return g.mean_axis(v[0], 1); }, 127); }
    SUBCASE("l2_norm") { check_gradients("l2_norm", {random_tensor({10}, rng, 0.3, 1.0)},
        [](Graph& g, const std::vector<Var>& v) { return g.l2_norm(v[0]); }, 128); }
    SUBCASE("dft2") {
        check_gradients("dft2", {random_tensor({2, 4, 4}, rng)},
            [](Graph& g, const std::vector<Var>& v) {
                auto [re, im] = g.dft2(v[0]);
                return g.concat({re, im}, 0);
            }, 129);
    }
    SUBCASE("idft2") {
        check_gradients("idft2", {random_tensor({4, 4}, rng), random_tensor({4, 4}, rng)},
            [](Graph& g, const std::vector<Var>& v) { return g.idft2(v[0], v[1]); }, 130);
    }
    SUBCASE("idft2 of dft2, squared mean") {
        check_gradients("spec_roundtrip", {random_tensor({8, 8}, rng)},
            [](Graph& g, const std::vector<Var>& v) {
                auto [re, im] = g.dft2(v[0]);
                Var back = g.idft2(re, im);
                return g.reduce_mean(g.mul(back, back));
            }, 131);
    }
}

TEST_CASE("gradient of mean(conv2d(x,k)) w.r.t. k matches finite differences") {
    RngStream rng(55);
    check_gradients("conv_mean",
        {random_tensor({1, 2, 5, 5}, rng), random_tensor({3, 2, 3, 3}, rng)},
        [](Graph& g, const std::vector<Var>& v) {
            return g.reduce_mean(g.conv2d(v[0], v[1], 1, 1));
        }, 132);
}

TEST_CASE("backward of a sum of losses equals the sum of backwards") {
    RngStream rng(56);
    Tensor x0 = random_tensor({4, 4}, rng);
    Tensor w0 = random_tensor({4, 4}, rng);

    auto grads_for = [&](int which) {
        Graph g;
        Var x = g.leaf(x0, true);
        Var w = g.leaf(w0, false);
        Var l1 = g.reduce_mean(g.mul(g.matmul(x, w), x));
        Var l2 = g.l2_norm(g.leaky_relu(x, 0.2));
        Var loss = which == 0 ? l1 : (which == 1 ? l2 : g.add(l1, l2));
        g.backward(loss);
        return g.grad(x);
    };
    Tensor g1 = grads_for(0), g2 = grads_for(1), gsum = grads_for(2);
    for (int64_t i = 0; i < g1.size(); ++i)
        CHECK(gsum[i] == doctest::Approx(g1[i] + g2[i]).epsilon(1e-10));
}

TEST_CASE("shape errors name the op and the shapes") {
    Graph g;
    Var a = g.leaf(Tensor({2, 3}));
    Var b = g.leaf(Tensor({3, 2}));
    try {
        g.add(a, b);
        FAIL("expected DimError");
    } catch (const DimError& e) {
        std::string msg = e.what();
        CHECK(msg.find("add") != std::string::npos);
        CHECK(msg.find("[2,3]") != std::string::npos);
        CHECK(msg.find("[3,2]") != std::string::npos);
    }
    CHECK_THROWS_AS(g.matmul(a, a), DimError);
    CHECK_THROWS_AS(g.conv2d(a, b, 1, 0), DimError);
}

TEST_CASE("backward guards: non-scalar loss, double backward, foreign vars") {
    Graph g;
    Var x = g.leaf(Tensor({2, 2}), true);
    Var y = g.mul(x, x);
    CHECK_THROWS_AS(g.backward(y), DimError);
    Var loss = g.reduce_sum(y);
    g.backward(loss);
    CHECK_THROWS_AS(g.backward(loss), StateError);

    Graph g2;
    CHECK_THROWS_AS(g2.value(Var{5}), StateError);
}
