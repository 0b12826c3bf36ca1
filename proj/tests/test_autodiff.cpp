// Copyright (c) 2026, The TAP Lab Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <functional>
#include <random>

#include "doctest.h"
#include "taplab/ad/graph.hpp"

using namespace taplab::ad;

namespace {

Tensor random_tensor(std::mt19937_64& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    Tensor t(std::move(shape));
    for (auto& v : t.data()) v = u(rng);
    return t;
}

// Reduces any node to a scalar through a fixed random projection so every
// output coordinate carries a distinct weight.
NodeId project(Graph& g, NodeId x, std::mt19937_64& rng) {
    Tensor w = random_tensor(rng, g.shape(x));
    return g.sum(g.mul(x, g.constant(std::move(w))));
}

}  // namespace

TEST_CASE("matmul by identity returns the left operand") {
    Graph g;
    auto a = g.constant(Tensor::matrix({{1, 2}, {3, 4}}));
    auto i = g.constant(Tensor::matrix({{1, 0}, {0, 1}}));
    CHECK(g.eval(g.matmul(a, i)) == Tensor::matrix({{1, 2}, {3, 4}}));
}

TEST_CASE("softmax of equal logits is uniform") {
    Graph g;
    auto s = g.eval(g.softmax(g.constant(Tensor::vector({0, 0}))));
    CHECK(s[0] == 0.5);
    CHECK(s[1] == 0.5);
}

TEST_CASE("layer norm of [2,4]") {
    Graph g;
    auto x = g.constant(Tensor::matrix({{2, 4}}));
    auto y = g.eval(g.layer_norm(x, g.constant(Tensor::vector({1, 1})), g.constant(Tensor::vector({0, 0})), 1e-5));
    // mean 3, variance 1
    const double inv = 1.0 / std::sqrt(1.0 + 1e-5);
    CHECK(std::abs(y[0] + inv) < 1e-12);
    CHECK(std::abs(y[1] - inv) < 1e-12);
    CHECK(std::abs(y[0] + 1.0) < 1e-4);
    CHECK(std::abs(y[1] - 1.0) < 1e-4);
}

TEST_CASE("gradient of sum is all ones") {
    Graph g;
    auto w = g.parameter(Tensor({3, 2}, 0.3));
    auto grads = g.backward(g.sum(w));
    REQUIRE(grads.size() == 1);
    for (double v : grads.at(w).data()) CHECK(v == 1.0);
}

TEST_CASE("gradient of half squared distance") {
    Graph g;
    auto w = g.parameter(Tensor::vector({1, 2}));
    auto c = g.constant(Tensor::vector({0, 0}));
    auto d = g.sub(w, c);
    auto root = g.scale(g.sum(g.mul(d, d)), 0.5);
    auto grad = g.backward(root).at(w);
    CHECK(grad[0] == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(grad[1] == doctest::Approx(2.0).epsilon(1e-15));
}

TEST_CASE("cross entropy gradient is softmax minus one-hot") {
    Graph g;
    auto z = g.parameter(Tensor::matrix({{0, 0}}));
    auto root = g.cross_entropy(z, g.constant(Tensor::matrix({{0, 1}})));
    auto grad = g.backward(root).at(z);
    CHECK(grad[0] == doctest::Approx(0.5));
    CHECK(grad[1] == doctest::Approx(-0.5));
    CHECK(g.value(root).item() == doctest::Approx(std::log(2.0)));
}

TEST_CASE("grad_check on a quadratic is exact to roundoff") {
    std::mt19937_64 rng(7);
    Graph g;
    auto w = g.parameter(random_tensor(rng, {4, 3}));
    auto c = g.constant(random_tensor(rng, {4, 3}));
    auto d = g.sub(w, c);
    auto root = g.scale(g.sum(g.mul(d, d)), 0.5);
    CHECK(grad_check(g, root, w, 1e-5) < 1e-6);
}

TEST_CASE("grad_check on a two-layer ReLU net away from kinks") {
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 10; ++trial) {
        Graph g;
        auto x = g.constant(random_tensor(rng, {5, 4}));
        auto w1 = g.parameter(random_tensor(rng, {6, 4}));
        auto b1 = g.parameter(random_tensor(rng, {6}));
        auto w2 = g.parameter(random_tensor(rng, {3, 6}));
        auto pre = g.add_row(g.matmul_nt(x, w1), b1);
        // Keep every pre-activation at least 1e-3 from zero.
        bool near_kink = false;
        for (double v : g.value(pre).data()) near_kink |= std::abs(v) < 1e-3;
        if (near_kink) continue;
        auto out = g.matmul_nt(g.relu(pre), w2);
        Tensor t({5, 3}, 0.0);
        for (std::size_t i = 0; i < 5; ++i) t.at(i, i % 3) = 1.0;
        auto root = g.cross_entropy(out, g.constant(t));
        CHECK(grad_check(g, root, w1, 1e-5) < 1e-4);
        CHECK(grad_check(g, root, b1, 1e-5) < 1e-4);
        CHECK(grad_check(g, root, w2, 1e-5) < 1e-4);
    }
}

TEST_CASE("grad_check rejects steps outside (0, 1e-2]") {
    Graph g;
    auto w = g.parameter(Tensor::vector({1}));
    auto root = g.sum(w);
    CHECK_THROWS_AS(grad_check(g, root, w, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(grad_check(g, root, w, 0.02), std::invalid_argument);
    CHECK_NOTHROW(grad_check(g, root, w, 1e-2));
}

TEST_CASE("backward requires a scalar root") {
    Graph g;
    auto w = g.parameter(Tensor::vector({1, 2}));
    CHECK_THROWS_AS(g.backward(g.relu(w)), GraphError);
}

TEST_CASE("shape mismatch names the node") {
    Graph g;
    auto a = g.constant(Tensor({2, 3}));
    auto b = g.constant(Tensor({2, 3}));
    try {
        (void)g.matmul(a, b);
        FAIL("expected a shape error");
    } catch (const ShapeError& e) {
        CHECK(e.node().index == 2);
        CHECK(std::string(e.what()).find("matmul") != std::string::npos);
    }
}

TEST_CASE("non-finite intermediate is reported with its node") {
    Graph g;
    auto x = g.constant(Tensor::vector({1e308}));
    CHECK_THROWS_AS((void)g.scale(x, 10.0), NonFiniteError);

    Graph h;
    auto p = h.placeholder({1});
    auto y = h.scale(p, 10.0);
    CHECK_THROWS_AS((void)h.eval(y, {{p, Tensor::vector({1e308})}}), NonFiniteError);
}

TEST_CASE("placeholders must be bound") {
    Graph g;
    auto p = g.placeholder({2});
    auto y = g.relu(p);
    CHECK_THROWS((void)g.eval(y));
    CHECK(g.eval(y, {{p, Tensor::vector({-1, 2})}}) == Tensor::vector({0, 2}));
}

TEST_CASE("unreachable trainable leaves receive zero gradients") {
    Graph g;
    auto w = g.parameter(Tensor::vector({1, 2}));
    auto unused = g.parameter(Tensor({2, 2}, 5.0));
    auto grads = g.backward(g.sum(w));
    REQUIRE(grads.count(unused));
    for (double v : grads.at(unused).data()) CHECK(v == 0.0);
    CHECK(grads.size() == g.trainable_leaves().size());
}

TEST_CASE("every primitive matches finite differences at 100 random points") {
    std::mt19937_64 rng(2026);
    using Builder = std::function<NodeId(Graph&, NodeId, std::mt19937_64&)>;
    struct Case {
        const char* name;
        Shape shape;
        Builder build;
        double tol;
    };
    const std::vector<Case> cases = {
        {"matmul", {3, 4}, [](Graph& g, NodeId x, std::mt19937_64& r) { return g.matmul(x, g.constant(random_tensor(r, {4, 2}))); }, 1e-4},
        {"matmul rhs", {4, 2}, [](Graph& g, NodeId x, std::mt19937_64& r) { return g.matmul(g.constant(random_tensor(r, {3, 4})), x); }, 1e-4},
        {"matmul_nt", {3, 4}, [](Graph& g, NodeId x, std::mt19937_64& r) { return g.matmul_nt(x, g.constant(random_tensor(r, {5, 4}))); }, 1e-4},
        {"matmul_nt rhs", {5, 4}, [](Graph& g, NodeId x, std::mt19937_64& r) { return g.matmul_nt(g.constant(random_tensor(r, {3, 4})), x); }, 1e-4},
        {"add", {3, 4}, [](Graph& g, NodeId x, std::mt19937_64& r) { return g.add(x, g.constant(random_tensor(r, {3, 4}))); }, 1e-4},
        {"sub", {3, 4}, [](Graph& g, NodeId x, std::mt19937_64& r) { return g.sub(g.constant(random_tensor(r, {3, 4})), x); }, 1e-4},
        {"mul", {3, 4}, [](Graph& g, NodeId x, std::mt19937_64& r) { return g.mul(x, g.constant(random_tensor(r, {3, 4}))); }, 1e-4},
        {"mul self", {3, 4}, [](Graph& g, NodeId x, std::mt19937_64&) { return g.mul(x, x); }, 1e-4},
        {"add_row bias", {4}, [](Graph& g, NodeId x, std::mt19937_64& r) { return g.add_row(g.constant(random_tensor(r, {3, 4})), x); }, 1e-4},
        {"relu", {3, 4}, [](Graph& g, NodeId x, std::mt19937_64&) { return g.relu(x); }, 1e-4},
        {"gelu", {3, 4}, [](Graph& g, NodeId x, std::mt19937_64&) { return g.gelu(x); }, 1e-3},
        {"layer_norm x", {3, 5}, [](Graph& g, NodeId x, std::mt19937_64& r) {
             return g.layer_norm(x, g.constant(random_tensor(r, {5})), g.constant(random_tensor(r, {5})));
         }, 1e-4},
        {"layer_norm gain", {5}, [](Graph& g, NodeId x, std::mt19937_64& r) {
             return g.layer_norm(g.constant(random_tensor(r, {3, 5})), x, g.constant(random_tensor(r, {5})));
         }, 1e-4},
        {"layer_norm bias", {5}, [](Graph& g, NodeId x, std::mt19937_64& r) {
             return g.layer_norm(g.constant(random_tensor(r, {3, 5})), g.constant(random_tensor(r, {5})), x);
         }, 1e-4},
        {"softmax", {3, 4}, [](Graph& g, NodeId x, std::mt19937_64&) { return g.softmax(x); }, 1e-4},
        {"log_softmax", {3, 4}, [](Graph& g, NodeId x, std::mt19937_64&) { return g.log_softmax(x); }, 1e-4},
        {"mse", {3, 4}, [](Graph& g, NodeId x, std::mt19937_64& r) { return g.mse(x, g.constant(random_tensor(r, {3, 4}))); }, 1e-4},
        {"cross_entropy", {3, 4}, [](Graph& g, NodeId x, std::mt19937_64& r) {
             Tensor t = random_tensor(r, {3, 4}, 0.0, 1.0);
             return g.cross_entropy(x, g.constant(t));
         }, 1e-4},
        {"scale", {3, 4}, [](Graph& g, NodeId x, std::mt19937_64&) { return g.scale(x, -2.5); }, 1e-4},
        {"mean", {3, 4}, [](Graph& g, NodeId x, std::mt19937_64&) { return g.mean(x); }, 1e-4},
        {"slice_cols", {3, 6}, [](Graph& g, NodeId x, std::mt19937_64&) { return g.slice_cols(x, 1, 4); }, 1e-4},
        {"slice_rows", {5, 3}, [](Graph& g, NodeId x, std::mt19937_64&) { return g.slice_rows(x, 2, 5); }, 1e-4},
        {"concat_cols", {3, 2}, [](Graph& g, NodeId x, std::mt19937_64& r) {
             return g.concat_cols({g.constant(random_tensor(r, {3, 1})), x, x});
         }, 1e-4},
        {"concat_rows", {2, 3}, [](Graph& g, NodeId x, std::mt19937_64& r) {
             return g.concat_rows({x, g.constant(random_tensor(r, {1, 3}))});
         }, 1e-4},
        {"reshape", {3, 4}, [](Graph& g, NodeId x, std::mt19937_64&) { return g.reshape(x, {2, 6}); }, 1e-4},
    };
    for (const auto& c : cases) {
        CAPTURE(c.name);
        double worst = 0.0;
        for (int point = 0; point < 100; ++point) {
            Graph g;
            auto x = g.parameter(random_tensor(rng, c.shape, -2.0, 2.0));
            if (std::string(c.name) == "relu") {
                bool near_kink = false;
                for (double v : g.value(x).data()) near_kink |= std::abs(v) < 1e-3;
                if (near_kink) continue;
            }
            auto root = project(g, c.build(g, x, rng), rng);
            worst = std::max(worst, grad_check(g, root, x, 1e-5));
        }
        CHECK(worst < c.tol);
    }
}

TEST_CASE("softmax sums to one and ignores a constant shift") {
    std::mt19937_64 rng(3);
    for (int i = 0; i < 100; ++i) {
        Tensor z = random_tensor(rng, {4, 7}, -20.0, 20.0);
        Tensor shifted = z;
        const double c = std::uniform_real_distribution<double>(-50.0, 50.0)(rng);
        for (auto& v : shifted.data()) v += c;
        Graph g;
        auto p = g.eval(g.softmax(g.constant(z)));
        auto q = g.eval(g.softmax(g.constant(shifted)));
        for (std::size_t r = 0; r < 4; ++r) {
            double s = 0.0;
            for (std::size_t k = 0; k < 7; ++k) {
                s += p.at(r, k);
                CHECK(std::abs(p.at(r, k) - q.at(r, k)) < 1e-10);
            }
            CHECK(std::abs(s - 1.0) < 1e-12);
        }
    }
}

TEST_CASE("evaluation is bit-deterministic") {
    std::mt19937_64 rng(5);
    Graph g;
    auto x = g.placeholder({6, 5});
    auto w = g.parameter(random_tensor(rng, {4, 5}));
    auto y = g.softmax(g.gelu(g.matmul_nt(x, w)));
    const Bindings b{{x, random_tensor(rng, {6, 5})}};
    CHECK(g.eval(y, b).bit_equal(g.eval(y, b)));
    const auto g1 = g.backward(g.sum(y), b), g2 = g.backward(g.sum(y), b);
    CHECK(g1.at(w).bit_equal(g2.at(w)));
}

TEST_CASE("hash distinguishes payloads and shapes") {
    Tensor a = Tensor::vector({1, 2, 3, 4});
    Tensor b = Tensor::matrix(2, 2, {1, 2, 3, 4});
    Tensor c = Tensor::vector({1, 2, 3, 5});
    CHECK(hash_tensor(a) == hash_tensor(Tensor::vector({1, 2, 3, 4})));
    CHECK(hash_tensor(a) != hash_tensor(b));
    CHECK(hash_tensor(a) != hash_tensor(c));
}
