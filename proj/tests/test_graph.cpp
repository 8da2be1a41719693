#include <cmath>
#include <memory>

#include "doctest.h"
#include "recon/graph.hpp"
#include "recon/rng.hpp"

using namespace recon;
using namespace recon::ad;

namespace {

double rel_err(double a, double b) {
    double scale = std::max({std::fabs(a), std::fabs(b), 1e-6});
    return std::fabs(a - b) / scale;
}

// FD-vs-reverse check over every entry of every listed leaf.
void check_grads(Graph& g, Value loss, const std::vector<Value>& leaves, double tol = 1e-5, double h = 1e-6) {
    g.backward(loss);
    std::vector<Tensor> grads;
    for (Value p : leaves) grads.push_back(g.grad(p));
    for (size_t pi = 0; pi < leaves.size(); ++pi) {
        const Tensor& ga = grads[pi];
        for (int64_t k = 0; k < ga.numel(); ++k) {
            double fd = fd_grad_entry(g, loss, leaves[pi], k, h);
            INFO("leaf ", pi, " entry ", k, " ad=", ga(k), " fd=", fd);
            CHECK(rel_err(ga(k), fd) < tol);
        }
    }
}

// random scalarization so every output entry contributes to the loss
Value scalarize(Graph& g, Value y, uint64_t seed) {
    Rng r(seed);
    Tensor w = Tensor::uniform(g.shape(y), r, 0.3, 1.3);
    return g.sum_all(g.mul(y, g.constant(w)));
}

}  // namespace

TEST_CASE("forward: x^2 at x=3 is 9, sum of identity is 2") {
    Graph g;
    Value x = g.leaf(Tensor::scalar(3.0));
    Value y = g.mul(x, x);
    CHECK(g.value(y)(0) == 9.0);

    Graph g2;
    Value eye = g2.leaf(Tensor::from({2, 2}, {1, 0, 0, 1}));
    CHECK(g2.value(g2.sum_all(eye))(0) == 2.0);
}

TEST_CASE("backward: d(x^2)/dx at 3 is 6; constant has zero gradient") {
    Graph g;
    Value x = g.leaf(Tensor::scalar(3.0));
    Value y = g.mul(x, x);
    g.backward(y);
    CHECK(g.grad(x)(0) == 6.0);

    Graph g2;
    Value z = g2.leaf(Tensor::from({3}, {1, 2, 3}));
    Value c = g2.constant(Tensor::scalar(5.0));
    // loss = 5 + 0*sum(z): z participates but with zero coefficient
    Value loss = g2.add(c, g2.scale(g2.sum_all(z), 0.0));
    g2.backward(loss);
    for (int64_t i = 0; i < 3; ++i) CHECK(g2.grad(z)(i) == 0.0);
}

TEST_CASE("forward determinism: identical graph + inputs give identical bits") {
    auto build = [] {
        Rng r(42);
        Graph g;
        Value a = g.leaf(Tensor::randn({4, 4}, r));
        Value b = g.leaf(Tensor::randn({4, 4}, r));
        Value y = g.softmax_rows(g.matmul(a, b));
        return g.value(g.sum_all(y))(0);
    };
    CHECK(build() == build());
}

TEST_CASE("error paths: shape mismatch names node, stale backward rejected") {
    Graph g;
    Value a = g.leaf(Tensor::zeros({2, 3}));
    Value b = g.leaf(Tensor::zeros({3, 3}));
    CHECK_THROWS_WITH_AS(g.add(a, b), doctest::Contains("node 2"), std::runtime_error);

    Value y = g.sum_all(g.mul(a, a));
    g.set_leaf(a, Tensor::full({2, 3}, 1.0));
    CHECK_THROWS_WITH_AS(g.backward(y), doctest::Contains("backward before forward"), std::runtime_error);
    g.forward();
    g.backward(y);
    CHECK(g.grad(a)(0, 0) == 2.0);
}

TEST_CASE("chain rule composition exact on scalar chain") {
    // f(g(x)) with g(x)=exp(x), f(u)=u*u: d/dx = 2*exp(x)*exp(x)
    Graph g;
    Value x = g.leaf(Tensor::scalar(0.37));
    Value u = g.exp(x);
    Value y = g.mul(u, u);
    g.backward(y);
    double expect = 2.0 * std::exp(0.37) * std::exp(0.37);
    CHECK(std::fabs(g.grad(x)(0) - expect) < 1e-10 * std::fabs(expect));

    // component Jacobians multiplied by hand
    Graph g1;
    Value x1 = g1.leaf(Tensor::scalar(0.37));
    Value u1 = g1.exp(x1);
    g1.backward(u1);
    double du_dx = g1.grad(x1)(0);
    Graph g2;
    Value u2 = g2.leaf(Tensor::scalar(std::exp(0.37)));
    Value y2 = g2.mul(u2, u2);
    g2.backward(y2);
    double dy_du = g2.grad(u2)(0);
    CHECK(std::fabs(g.grad(x)(0) - dy_du * du_dx) < 1e-10);
}

TEST_CASE("fd check: elementwise ops") {
    Rng r(1);
    Graph g;
    Value a = g.leaf(Tensor::uniform({3, 4}, r, -1, 1));
    Value b = g.leaf(Tensor::uniform({3, 4}, r, -1, 1));
    Value y = g.add(g.mul(a, b), g.scale(g.add_scalar(a, 0.5), 0.75));
    check_grads(g, scalarize(g, y, 11), {a, b});
}

TEST_CASE("fd check: exp log clamp softmax") {
    Rng r(2);
    Graph g;
    Value a = g.leaf(Tensor::uniform({2, 5}, r, -1, 1));
    Value b = g.leaf(Tensor::uniform({2, 5}, r, 0.5, 2.0));
    Value y = g.add(g.exp(a), g.log(b));
    // clamp bounds far from samples so FD stays smooth
    Value z = g.clamp(y, -50.0, 50.0);
    Value s = g.softmax_rows(z);
    check_grads(g, scalarize(g, s, 12), {a, b});
}

TEST_CASE("fd check: matmul") {
    Rng r(3);
    Graph g;
    Value a = g.leaf(Tensor::uniform({3, 4}, r, -1, 1));
    Value b = g.leaf(Tensor::uniform({4, 2}, r, -1, 1));
    check_grads(g, scalarize(g, g.matmul(a, b), 13), {a, b});
}

TEST_CASE("fd check: conv2d variants") {
    Rng r(4);
    for (auto [stride, pad] : {std::pair<int64_t, int64_t>{1, 1}, {2, 1}, {1, 0}}) {
        Graph g;
        Value x = g.leaf(Tensor::uniform({2, 5, 5}, r, -1, 1));
        Value w = g.leaf(Tensor::uniform({3, 2, 3, 3}, r, -1, 1));
        Value y = g.conv2d(x, w, stride, pad);
        check_grads(g, scalarize(g, y, 14), {x, w});
    }
}

TEST_CASE("fd check: conv_transpose2d") {
    Rng r(5);
    Graph g;
    Value x = g.leaf(Tensor::uniform({2, 3, 3}, r, -1, 1));
    Value w = g.leaf(Tensor::uniform({2, 3, 4, 4}, r, -1, 1));
    Value y = g.conv_transpose2d(x, w, 2, 1);
    CHECK(g.shape(y) == std::vector<int64_t>{3, 6, 6});
    check_grads(g, scalarize(g, y, 15), {x, w});
}

TEST_CASE("fd check: conv3d") {
    Rng r(6);
    Graph g;
    Value x = g.leaf(Tensor::uniform({2, 3, 3, 3}, r, -1, 1));
    Value w = g.leaf(Tensor::uniform({2, 2, 3, 3, 3}, r, -1, 1));
    Value y = g.conv3d(x, w, 1);
    CHECK(g.shape(y) == std::vector<int64_t>{2, 3, 3, 3});
    check_grads(g, scalarize(g, y, 16), {x, w});
}

TEST_CASE("fd check: bilinear wrt plane and coords") {
    Rng r(7);
    Graph g;
    Value plane = g.leaf(Tensor::uniform({3, 4, 4}, r, -1, 1));
    Value uv = g.leaf(Tensor::uniform({6, 2}, r, -0.85, 0.85));
    Value y = g.bilinear(plane, uv);
    check_grads(g, scalarize(g, y, 17), {plane, uv}, 1e-5, 1e-7);
}

TEST_CASE("fd check: bilinear_du/dv wrt plane") {
    Rng r(8);
    Graph g;
    Value plane = g.leaf(Tensor::uniform({2, 5, 5}, r, -1, 1));
    Value uv = g.constant(Tensor::uniform({4, 2}, r, -0.8, 0.8));
    Value y = g.add(g.bilinear_du(plane, uv), g.bilinear_dv(plane, uv));
    check_grads(g, scalarize(g, y, 18), {plane});
}

TEST_CASE("bilinear at lattice nodes returns stored features verbatim") {
    Rng r(9);
    Tensor plane = Tensor::uniform({2, 4, 4}, r, -1, 1);
    Graph g;
    Value p = g.leaf(plane);
    // node (ix=2, iy=1) corresponds to u = -1 + 2*ix/(N-1), v likewise
    double u = -1.0 + 2.0 * 2.0 / 3.0;
    double v = -1.0 + 2.0 * 1.0 / 3.0;
    Value uv = g.constant(Tensor::from({1, 2}, {u, v}));
    Value y = g.bilinear(p, uv);
    CHECK(g.value(y)(0, 0) == doctest::Approx(plane(0, 1, 2)).epsilon(1e-12));
    CHECK(g.value(y)(0, 1) == doctest::Approx(plane(1, 1, 2)).epsilon(1e-12));
}

TEST_CASE("bilinear partition of unity") {
    Graph g;
    Value plane = g.leaf(Tensor::full({1, 8, 8}, 1.0));
    Rng r(10);
    Value uv = g.constant(Tensor::uniform({64, 2}, r, -1, 1));
    Value y = g.bilinear(plane, uv);
    for (int64_t i = 0; i < 64; ++i) CHECK(std::fabs(g.value(y)(i, 0) - 1.0) < 1e-12);
}

TEST_CASE("fd check: gather, concat, reshape, slices") {
    Rng r(11);
    Graph g;
    Value a = g.leaf(Tensor::uniform({2, 3}, r, -1, 1));
    Value b = g.leaf(Tensor::uniform({3}, r, -1, 1));
    auto idx = std::make_shared<std::vector<int64_t>>(std::vector<int64_t>{5, 0, -1, 3, 3, 1});
    Value ga = g.gather(a, idx, {6});
    Value cat = g.concat({ga, b}, {9});
    Value rs = g.reshape(cat, {3, 3});
    Value t = transpose2d(g, rs);
    Value sl = slice_rows(g, t, 0, 2);
    check_grads(g, scalarize(g, sl, 19), {a, b});
}

TEST_CASE("fd check: composition helpers") {
    Rng r(12);
    Graph g;
    Value a = g.leaf(Tensor::uniform({8}, r, -2, 2));
    Value pos = g.leaf(Tensor::uniform({8}, r, 0.2, 2.0));
    Value y = g.add(softplus(g, a), sigmoid(g, a));
    y = g.add(y, div_pos(g, a, pos, 1e-9));
    y = g.add(y, sqrt_pos(g, pos, 1e-12));
    check_grads(g, scalarize(g, y, 20), {a, pos}, 2e-5);
}

TEST_CASE("softplus stable at large inputs") {
    Graph g;
    Value a = g.leaf(Tensor::from({3}, {-600.0, 0.0, 600.0}));
    Value y = softplus(g, a);
    CHECK(g.value(y)(0) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(g.value(y)(1) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    CHECK(g.value(y)(2) == doctest::Approx(600.0).epsilon(1e-12));
}

TEST_CASE("fd check: mean_over_axis and stack_cols") {
    Rng r(13);
    Graph g;
    Value a = g.leaf(Tensor::uniform({2, 3, 4}, r, -1, 1));
    Value m1 = mean_over_axis(g, a, 1);  // -> [2,4]
    CHECK(g.shape(m1) == std::vector<int64_t>{2, 4});
    Value c0 = g.leaf(Tensor::uniform({5}, r, -1, 1));
    Value c1 = g.leaf(Tensor::uniform({5}, r, -1, 1));
    Value st = stack_cols(g, {c0, c1});
    CHECK(g.shape(st) == std::vector<int64_t>{5, 2});
    Value loss = g.add(scalarize(g, m1, 21), scalarize(g, st, 22));
    check_grads(g, loss, {a, c0, c1});
}

TEST_CASE("mean_over_axis matches hand-computed means") {
    Graph g;
    Value a = g.leaf(Tensor::from({2, 2, 2}, {1, 2, 3, 4, 5, 6, 7, 8}));
    Value m = mean_over_axis(g, a, 0);
    CHECK(g.value(m)(0, 0) == doctest::Approx(3.0));
    CHECK(g.value(m)(1, 1) == doctest::Approx(6.0));
    Value m2 = mean_over_axis(g, a, 2);
    CHECK(g.value(m2)(0, 0) == doctest::Approx(1.5));
    CHECK(g.value(m2)(1, 1) == doctest::Approx(7.5));
}

// Independent straight-line oracle: bilinear interp + 2-layer MLP, seed 42.
namespace oracle {

double bilinear_plain(const Tensor& plane, int64_t ch, double u, double v) {
    int64_t n = plane.shape[1];
    double gx = std::min(std::max((u + 1.0) * 0.5 * (n - 1), 0.0), double(n - 1));
    double gy = std::min(std::max((v + 1.0) * 0.5 * (n - 1), 0.0), double(n - 1));
    int64_t x0 = std::min<int64_t>(int64_t(gx), n - 2), y0 = std::min<int64_t>(int64_t(gy), n - 2);
    double fx = gx - x0, fy = gy - y0;
    return (1 - fy) * ((1 - fx) * plane(ch, y0, x0) + fx * plane(ch, y0, x0 + 1)) +
           fy * ((1 - fx) * plane(ch, y0 + 1, x0) + fx * plane(ch, y0 + 1, x0 + 1));
}

}  // namespace oracle

TEST_CASE("composed bilinear + 2-layer MLP matches straight-line reimplementation (seed 42)") {
    Rng r(42);
    Tensor plane = Tensor::uniform({3, 5, 5}, r, -1, 1);
    Tensor w0 = Tensor::uniform({3, 4}, r, -1, 1);
    Tensor b0 = Tensor::uniform({1, 4}, r, -1, 1);
    Tensor w1 = Tensor::uniform({4, 1}, r, -1, 1);
    Tensor b1 = Tensor::uniform({1, 1}, r, -1, 1);
    Tensor uv = Tensor::uniform({7, 2}, r, -0.9, 0.9);

    Graph g;
    Value vp = g.leaf(plane);
    Value vuv = g.constant(uv);
    Value feats = g.bilinear(vp, vuv);
    Value h = act_softplus(g, linear(g, feats, g.leaf(w0), g.leaf(b0)), 1.0);
    Value out = linear(g, h, g.leaf(w1), g.leaf(b1));

    for (int64_t p = 0; p < 7; ++p) {
        // straight-line: interp each channel, then MLP by explicit loops
        double f[3];
        for (int64_t c = 0; c < 3; ++c) f[c] = oracle::bilinear_plain(plane, c, uv(p, 0), uv(p, 1));
        double hdn[4];
        for (int j = 0; j < 4; ++j) {
            double pre = b0(0, j);
            for (int c = 0; c < 3; ++c) pre += f[c] * w0(c, j);
            hdn[j] = std::log1p(std::exp(-std::fabs(pre))) + std::max(pre, 0.0);  // softplus
        }
        double y = b1(0, 0);
        for (int j = 0; j < 4; ++j) y += hdn[j] * w1(j, 0);
        CHECK(std::fabs(g.value(out)(p, 0) - y) < 1e-12);
    }
}

TEST_CASE("forward_eval rebinding: same graph evaluates new inputs") {
    Graph g;
    Value x = g.leaf(Tensor::scalar(2.0));
    Value y = g.mul(x, x);
    CHECK(g.value(y)(0) == 4.0);
    g.set_leaf(x, Tensor::scalar(5.0));
    g.forward();
    CHECK(g.value(y)(0) == 25.0);
}

TEST_CASE("exp overflow and log domain are rejected with node id") {
    Graph g;
    Value a = g.leaf(Tensor::scalar(1000.0));
    CHECK_THROWS_WITH_AS(g.exp(a), doctest::Contains("exp overflow"), std::runtime_error);
    Value b = g.leaf(Tensor::scalar(-1.0));
    CHECK_THROWS_WITH_AS(g.log(b), doctest::Contains("log of non-positive"), std::runtime_error);
}
