#include <cmath>

#include "doctest.h"
#include "recon/graph.hpp"
#include "recon/optim.hpp"

using namespace recon;

TEST_CASE("adam: zero gradient leaves parameters unchanged") {
    Tensor p = Tensor::from({3}, {1.0, -2.0, 0.5});
    Tensor g = Tensor::zeros({3});
    Adam opt({&p}, {});
    Tensor before = p;
    opt.step({&p}, {&g});
    for (int64_t i = 0; i < 3; ++i) CHECK(p(i) == before(i));
}

TEST_CASE("adam first step moves a scalar by ~lr (hand-evaluated update)") {
    Tensor p = Tensor::scalar(0.0);
    Tensor g = Tensor::scalar(1.0);
    AdamConfig cfg;
    cfg.lr = 0.1;
    Adam opt({&p}, cfg);
    opt.step({&p}, {&g});
    // m_hat = 1, v_hat = 1 -> delta = lr / (1 + eps)
    double expect = -0.1 / (1.0 + cfg.eps);
    CHECK(p(0) == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("adam minimizes a convex quadratic to 1e-6") {
    // f(x) = (x - 3.7)^2, minimum at 3.7
    Tensor x = Tensor::scalar(-5.0);
    AdamConfig cfg;
    cfg.lr = 0.05;
    Adam opt({&x}, cfg);
    for (int i = 0; i < 2000; ++i) {
        Tensor g = Tensor::scalar(2.0 * (x(0) - 3.7));
        opt.step({&x}, {&g});
    }
    CHECK(std::fabs(x(0) - 3.7) < 1e-6);
}

TEST_CASE("adam rejects non-finite gradients naming the parameter") {
    Tensor p = Tensor::scalar(0.0);
    Tensor g = Tensor::scalar(std::nan(""));
    Adam opt({&p}, {});
    CHECK_THROWS_WITH_AS(opt.step({&p}, {&g}, {"decoder.w0"}), doctest::Contains("decoder.w0"), std::runtime_error);
}

TEST_CASE("adam step count advances monotonically") {
    Tensor p = Tensor::scalar(1.0);
    Tensor g = Tensor::scalar(0.1);
    Adam opt({&p}, {});
    CHECK(opt.step_count() == 0);
    opt.step({&p}, {&g});
    opt.step({&p}, {&g});
    CHECK(opt.step_count() == 2);
}
