#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "textmux/gradcheck.hpp"
#include "textmux/parameters.hpp"
#include "textmux/rng.hpp"
#include "textmux/tensor.hpp"

using namespace textmux;

namespace {

// Finite-difference probe for a scalar loss built from one parameter set.
double max_fd_error(const std::function<Tensor<double>()>& build, ParameterSet<double>& params,
                    double step = 1e-4) {
    return grad_check<double>(build, params, step).max_rel_error;
}

}  // namespace

TEST_CASE("polynomial derivative: f(x)=x^2 at x=3") {
    auto x = Tensor<double>::leaf_param({1}, {3.0}, "x");
    auto y = mul(x, x);
    forward_backward(y);
    REQUIRE(y.item() == Catch::Approx(9.0));
    REQUIRE(x.grad()[0] == Catch::Approx(6.0));
}

TEST_CASE("softmax cross-entropy gradient is p - y") {
    Rng rng(11);
    const int n = 6;
    std::vector<double> logits(n);
    for (auto& v : logits) v = rng.uniform(-2.0, 2.0);
    auto z = Tensor<double>::leaf_param({n}, logits, "logits");
    const int target = 2;
    auto loss = scale(pick(log_softmax_vec(z), target), -1.0);
    forward_backward(loss);
    auto p = softmax_vec(z);
    for (int i = 0; i < n; ++i) {
        double want = p.values()[i] - (i == target ? 1.0 : 0.0);
        REQUIRE(z.grad()[i] == Catch::Approx(want).margin(1e-12));
    }
}

TEST_CASE("conv-relu-pool-affine chain matches central finite differences") {
    Rng rng(7);
    ParameterSet<double> params;
    auto w = params.add("conv/w", {2, 1, 2, 2}, 4, rng);
    auto b = params.add("conv/b", {2}, 4, rng);
    auto fw = params.add("fc/w", {3, 2 * 4 * 4}, 32, rng);
    auto fb = params.add("fc/b", {3}, 32, rng);

    std::vector<double> img(8 * 8);
    for (auto& v : img) v = rng.uniform(0.0, 1.0);
    auto x = Tensor<double>::constant({1, 8, 8}, img, "input");

    auto build = [&]() {
        auto c = relu(conv2d(x, w, b, 1, 1));            // 2 x 9 x 9 -> pad keeps 9? (8+2-2)/1+1 = 9
        auto p = maxpool2x2(c);                          // 2 x 4 x 4
        auto f = linear(fw, reshape(p, {2 * 4 * 4}), fb);
        return sum(f);
    };
    REQUIRE(max_fd_error(build, params) < 1e-5);
}

TEST_CASE("primitive gradients pass finite differences on randomized shapes") {
    Rng rng(21);

    SECTION("matmul / add_col_broadcast / tanh / sigmoid") {
        ParameterSet<double> params;
        auto a = params.add("a", {3, 4}, 4, rng);
        auto b = params.add("b", {4, 5}, 4, rng);
        auto v = params.add("v", {3}, 3, rng);
        auto build = [&]() {
            auto m = matmul(a, b);
            auto s = add_col_broadcast(reshape(tanh_op(m), {3, 5}), v);
            return sum(sigmoid(s));
        };
        REQUIRE(max_fd_error(build, params) < 1e-5);
    }

    SECTION("softmax / log / exp / div / clamp") {
        ParameterSet<double> params;
        auto a = params.add("a", {7}, 7, rng);
        auto c = params.add("c", {7}, 7, rng);
        auto build = [&]() {
            auto sm = softmax_vec(a);
            auto num = exp_op(clamp(c, -0.9, 0.9));
            auto q = div(num, add_scalar(sm, 1.0));
            return sum(log_op(add_scalar(q, 2.0)));
        };
        REQUIRE(max_fd_error(build, params) < 1e-5);
    }

    SECTION("embedding / concat / pick") {
        ParameterSet<double> params;
        auto table = params.add("emb", {5, 3}, 3, rng);
        auto w = params.add("w", {2, 6}, 6, rng);
        auto b = params.add("b", {2}, 6, rng);
        auto build = [&]() {
            auto e0 = embedding(table, 1);
            auto e1 = embedding(table, 4);
            auto h = linear(w, concat(e0, e1), b);
            return pick(softmax_vec(h), 0);
        };
        REQUIRE(max_fd_error(build, params) < 1e-5);
    }

    SECTION("bilinear / crop / upsample / masked_fill") {
        ParameterSet<double> params;
        auto x = params.add("x", {2, 5, 6}, 8, rng);
        std::vector<double> mask(2 * 3 * 3);
        for (auto& m : mask) m = rng.bernoulli(0.6) ? 1.0 : 0.0;
        auto build = [&]() {
            auto up = upsample2x_nearest(x);             // 2 x 10 x 12
            auto cr = crop2d(up, 1, 2, 6, 7);            // 2 x 6 x 7
            auto rs = bilinear_resize(cr, 3, 3);         // 2 x 3 x 3
            return sum(masked_fill(rs, mask, 0.25));
        };
        REQUIRE(max_fd_error(build, params) < 1e-5);
    }

    SECTION("strided padded conv") {
        ParameterSet<double> params;
        auto w = params.add("w", {3, 2, 3, 3}, 18, rng);
        auto b = params.add("b", {3}, 18, rng);
        std::vector<double> img(2 * 7 * 9);
        for (auto& v : img) v = rng.uniform(-1.0, 1.0);
        auto x = Tensor<double>::constant({2, 7, 9}, img, "input");
        auto build = [&]() { return mean(relu(conv2d(x, w, b, 2, 1))); };
        REQUIRE(max_fd_error(build, params) < 1e-5);
    }
}

TEST_CASE("randomized 4-D gradient sweep over the primitive set") {
    for (int trial = 0; trial < 20; ++trial) {
        Rng rng(1000 + trial);
        ParameterSet<double> params;
        int c = rng.range_int(1, 3), h = rng.range_int(4, 7), w = rng.range_int(4, 7);
        int co = rng.range_int(1, 3);
        auto cw = params.add("cw", {co, c, 2, 2}, c * 4, rng);
        auto cb = params.add("cb", {co}, c * 4, rng);
        std::vector<double> img(static_cast<std::size_t>(c) * h * w);
        for (auto& v : img) v = rng.uniform(-1.0, 1.0);
        auto x = Tensor<double>::constant({c, h, w}, img, "input");
        auto build = [&]() {
            auto y = relu(conv2d(x, cw, cb, 1, 0));
            auto p = maxpool2x2(y);
            return mean(mul(p, p));
        };
        INFO("trial " << trial);
        REQUIRE(max_fd_error(build, params) < 1e-5);
    }
}

TEST_CASE("linearity of gradients") {
    Rng rng(5);
    auto x = Tensor<double>::leaf_param({4}, {0.3, -0.2, 0.8, 0.1}, "x");

    auto f = [&]() { return sum(mul(x, x)); };
    auto g = [&]() { return sum(tanh_op(x)); };

    const double a = 2.5, b = -1.25;

    x.zero_grad();
    forward_backward(f());
    auto gf = x.grad();
    x.zero_grad();
    forward_backward(g());
    auto gg = x.grad();
    x.zero_grad();
    forward_backward(add(scale(f(), a), scale(g(), b)));
    for (int i = 0; i < 4; ++i)
        REQUIRE(x.grad()[i] == Catch::Approx(a * gf[i] + b * gg[i]).epsilon(1e-12));
}

TEST_CASE("softmax rows are positive and sum to one") {
    Rng rng(9);
    for (int trial = 0; trial < 10; ++trial) {
        int n = rng.range_int(2, 40);
        std::vector<double> v(n);
        for (auto& x : v) x = rng.uniform(-30.0, 30.0);
        auto sm = softmax_vec(Tensor<double>::constant({n}, v));
        double total = 0;
        for (double p : sm.values()) {
            REQUIRE(p > 0.0);
            total += p;
        }
        REQUIRE(total == Catch::Approx(1.0).margin(1e-6));
    }
}

TEST_CASE("gradient accumulation across calls, zeroing resets") {
    auto x = Tensor<double>::leaf_param({1}, {2.0}, "x");
    forward_backward(mul(x, x));
    forward_backward(mul(x, x));
    REQUIRE(x.grad()[0] == Catch::Approx(8.0));
    x.zero_grad();
    forward_backward(mul(x, x));
    REQUIRE(x.grad()[0] == Catch::Approx(4.0));
}

TEST_CASE("non-scalar root is rejected") {
    auto x = Tensor<double>::leaf_param({3}, {1, 2, 3}, "x");
    REQUIRE_THROWS_AS(forward_backward(mul(x, x)), std::invalid_argument);
}

TEST_CASE("NaN in forward pass is reported with the node name") {
    auto x = Tensor<double>::leaf_param({1}, {-1.0}, "x");
    auto y = log_op(x);  // NaN
    auto z = mul(y, y);
    try {
        forward_backward(z);
        FAIL("expected NumericError");
    } catch (const NumericError& e) {
        REQUIRE(std::string(e.what()).find("log") != std::string::npos);
    }
}

TEST_CASE("frozen parameter receives exactly zero gradient") {
    Rng rng(3);
    ParameterSet<double> params;
    auto a = params.add("a", {3}, 3, rng);
    auto b = params.add("b", {3}, 3, rng);
    params.set_trainable("b", false);
    params.zero_grad();
    forward_backward(sum(mul(a, b)));
    for (double g : b.grad()) REQUIRE(g == 0.0);
    bool any = false;
    for (double g : a.grad()) any = any || g != 0.0;
    REQUIRE(any);
}

TEST_CASE("determinism: identical seeds give bit-identical values and gradients") {
    auto run = [](std::uint64_t seed) {
        Rng rng(seed);
        ParameterSet<float> params;
        auto w = params.add("w", {2, 1, 3, 3}, 9, rng);
        auto b = params.add("b", {2}, 9, rng);
        std::vector<float> img(6 * 6);
        for (auto& v : img) v = static_cast<float>(rng.uniform(0.0, 1.0));
        auto x = Tensor<float>::constant({1, 6, 6}, img, "in");
        auto loss = mean(relu(conv2d(x, w, b, 1, 1)));
        params.zero_grad();
        forward_backward(loss);
        std::vector<float> out{loss.item()};
        out.insert(out.end(), w.grad().begin(), w.grad().end());
        return out;
    };
    auto a = run(42), b = run(42), c = run(43);
    REQUIRE(a == b);
    REQUIRE(a != c);
}

TEST_CASE("grad sinks route leaf gradients and reduce in fixed order") {
    Rng rng(17);
    ParameterSet<double> params;
    auto w = params.add("w", {2, 3}, 3, rng);
    auto b = params.add("b", {2}, 3, rng);
    std::vector<std::vector<double>> inputs = {{0.1, -0.4, 0.7}, {0.9, 0.2, -0.3}};

    // reference: sequential accumulation
    params.zero_grad();
    for (auto& in : inputs)
        forward_backward(sum(linear(w, Tensor<double>::constant({3}, in), b)));
    auto ref_w = w.grad();
    auto ref_b = b.grad();

    params.zero_grad();
    std::vector<GradSink<double>> sinks(2);
    for (std::size_t i = 0; i < inputs.size(); ++i)
        forward_backward(sum(linear(w, Tensor<double>::constant({3}, inputs[i]), b)), &sinks[i]);
    for (double g : w.grad()) REQUIRE(g == 0.0);  // untouched until reduction
    params.reduce_sinks(sinks);
    REQUIRE(w.grad() == ref_w);
    REQUIRE(b.grad() == ref_b);
}

TEST_CASE("no-grad mode skips graph construction") {
    auto x = Tensor<double>::leaf_param({2}, {1.0, 2.0}, "x");
    NoGradGuard guard;
    auto y = mul(x, x);
    REQUIRE_FALSE(y.requires_grad());
    REQUIRE(y.node()->parents.empty());
}
