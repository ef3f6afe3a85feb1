#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "qzoff/estimators.hpp"
#include "qzoff/rng.hpp"

using namespace qzoff;

namespace {

// f(w) = sum w_i^2, grad = 2w.
est::GradFn quad_grad = [](std::span<const double> w) {
    std::vector<double> g(w.size());
    for (size_t i = 0; i < w.size(); ++i) g[i] = 2.0 * w[i];
    return g;
};
est::LossFn quad_loss = [](std::span<const double> w) {
    double s = 0.0;
    for (double v : w) s += v * v;
    return s;
};

}  // namespace

TEST_CASE("perturbation: regeneration from seed and stored values") {
    est::Perturbation z{99, est::Distribution::Normal, 8};
    auto v = z.materialize();
    REQUIRE(v.size() == 8);
    for (size_t i = 0; i < 8; ++i) CHECK(z.value(i) == v[i]);
    auto stored = est::Perturbation::from_values({1.0, -2.0, 3.0});
    CHECK(stored.count == 3);
    CHECK(stored.value(1) == -2.0);
    est::Perturbation pm{7, est::Distribution::Binomial, 100};
    for (size_t i = 0; i < 100; ++i) CHECK(std::abs(pm.value(i)) == 1.0);
}

TEST_CASE("forward_gradient: trivial cases") {
    std::vector<double> w{1.0, -0.5};
    // z aligned with the gradient direction reproduces (g.z) z exactly.
    auto z = est::Perturbation::from_values({1.0, 0.0});
    auto g = est::forward_gradient(quad_grad, w, z);
    CHECK(g[0] == doctest::Approx(2.0));  // (2*1.0 * 1) * 1
    CHECK(g[1] == 0.0);
    // At w = 0 every directional estimate vanishes.
    std::vector<double> zero{0.0, 0.0};
    auto g0 = est::forward_gradient(quad_grad, zero, z);
    CHECK(g0[0] == 0.0);
    CHECK(g0[1] == 0.0);
}

TEST_CASE("forward_gradient: Monte-Carlo mean approaches the true gradient") {
    std::vector<double> w{0.4, -1.2, 0.7, 2.0, -0.3};
    auto grad = quad_grad(w);
    std::vector<double> mean(w.size(), 0.0);
    const int n = 100000;
    for (int s = 0; s < n; ++s) {
        est::Perturbation z{rng::derive_seed(1234, s), est::Distribution::Normal, w.size()};
        auto g = est::forward_gradient(quad_grad, w, z);
        for (size_t i = 0; i < w.size(); ++i) mean[i] += g[i] / n;
    }
    double num = 0.0, den = 0.0;
    for (size_t i = 0; i < w.size(); ++i) {
        num += (mean[i] - grad[i]) * (mean[i] - grad[i]);
        den += grad[i] * grad[i];
    }
    CHECK(std::sqrt(num / den) < 0.02);
}

TEST_CASE("spsa: matches the true directional estimate on a quadratic") {
    // For f quadratic the central difference is exact: spsa == (grad.z) z.
    std::vector<double> w{0.3, -0.9, 1.4};
    est::Perturbation z{5, est::Distribution::Normal, 3};
    auto got = est::spsa(quad_loss, w, z, 1e-3);
    auto want = est::forward_gradient(quad_grad, w, z);
    for (size_t i = 0; i < w.size(); ++i) CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-7));
    CHECK_THROWS_AS(est::spsa(quad_loss, w, z, 0.0), ConfigError);
}

TEST_CASE("spsa: error shrinks as O(eps^2) on a smooth non-quadratic") {
    est::LossFn f = [](std::span<const double> w) {
        double s = 0.0;
        for (double v : w) s += std::exp(0.5 * v);
        return s;
    };
    est::GradFn fg = [](std::span<const double> w) {
        std::vector<double> g(w.size());
        for (size_t i = 0; i < w.size(); ++i) g[i] = 0.5 * std::exp(0.5 * w[i]);
        return g;
    };
    std::vector<double> w{0.2, -0.6, 1.1};
    est::Perturbation z{17, est::Distribution::Normal, 3};
    auto exact = est::forward_gradient(fg, w, z);
    std::vector<double> eps{1e-2, 1e-3, 1e-4}, errs;
    for (double e : eps) {
        auto got = est::spsa(f, w, z, e);
        double err = 0.0;
        for (size_t i = 0; i < w.size(); ++i) err += (got[i] - exact[i]) * (got[i] - exact[i]);
        errs.push_back(std::sqrt(err));
    }
    // Successive eps decades shrink the error by ~100x.
    CHECK(errs[0] / errs[1] > 30.0);
    CHECK(errs[1] / errs[2] > 30.0);
}

TEST_CASE("spsa: non-finite loss raises a numeric error naming the branch") {
    est::LossFn bad_plus = [](std::span<const double> w) {
        return w[0] > 0.5 ? std::numeric_limits<double>::infinity() : 0.0;
    };
    std::vector<double> w{0.5};
    auto z = est::Perturbation::from_values({1.0});
    CHECK_THROWS_WITH_AS(est::spsa(bad_plus, w, z, 0.1),
                         "spsa: non-finite loss at w + eps*z", NumericError);
}

TEST_CASE("sign_m_spsa: sign conventions and tie handling") {
    // Loss increasing in w[0]: sign(L+ - L-) = sign(z_0); contribution is
    // sign(z_0) * z, so g[0] = |z_0| > 0 always.
    est::LossFn inc = [](std::span<const double> w) { return 3.0 * w[0]; };
    std::vector<double> w{0.0};
    std::vector<uint64_t> seeds{1, 2, 3, 4, 5};
    auto est1 = est::sign_m_spsa(inc, w, seeds, 0.1);
    CHECK(est1.m == 5);
    CHECK(est1.sign_pos + est1.sign_neg + est1.sign_zero == 5);
    CHECK(est1.g[0] > 0.0);

    // Constant loss: all ties, zero estimate.
    est::LossFn flat = [](std::span<const double>) { return 1.0; };
    auto est2 = est::sign_m_spsa(flat, w, seeds, 0.1);
    CHECK(est2.sign_zero == 5);
    CHECK(est2.g[0] == 0.0);

    CHECK_THROWS_AS(est::sign_m_spsa(inc, w, std::span<const uint64_t>{}, 0.1), ConfigError);
    CHECK(est::sign_of(0.0) == 0);
    CHECK(est::sign_of(1e-300) == 1);
    CHECK(est::sign_of(-2.0) == -1);
}

TEST_CASE("sign_m_spsa: descent direction correlates with the gradient") {
    std::vector<double> w{1.0, -2.0, 0.5, 3.0};
    auto grad = quad_grad(w);
    std::vector<uint64_t> seeds(64);
    for (size_t i = 0; i < seeds.size(); ++i) seeds[i] = rng::derive_seed(88, i);
    auto e = est::sign_m_spsa(quad_loss, w, seeds, 1e-3);
    double dot = 0.0;
    for (size_t i = 0; i < w.size(); ++i) dot += e.g[i] * grad[i];
    CHECK(dot > 0.0);  // stepping along -g decreases the loss
}

TEST_CASE("kernelwise_normalize: worked example and zero-norm warning") {
    est::FwdGradEstimate e;
    e.g = {3.0, 4.0};
    std::vector<double> z{3.0, 4.0};
    std::vector<double> w{1.0, 0.0};
    std::vector<size_t> blocks{2};
    int warn = est::kernelwise_normalize(e, z, w, blocks);
    CHECK(warn == 0);
    // scale = ||w|| / ||z|| = 1/5
    CHECK(e.g[0] == doctest::Approx(0.6));
    CHECK(e.g[1] == doctest::Approx(0.8));

    est::FwdGradEstimate e2;
    e2.g = {1.0, 1.0};
    std::vector<double> z0{0.0, 0.0};
    warn = est::kernelwise_normalize(e2, z0, w, blocks);
    CHECK(warn == 1);
    CHECK(e2.g[0] == 1.0);  // zero-norm block left unscaled
}

TEST_CASE("kernelwise_normalize: per-block scaling with two blocks") {
    est::FwdGradEstimate e;
    e.g = {1.0, 0.0, 0.0, 2.0};
    std::vector<double> z{1.0, 0.0, 0.0, 2.0};
    std::vector<double> w{2.0, 0.0, 0.0, 1.0};
    std::vector<size_t> blocks{2, 2};
    est::kernelwise_normalize(e, z, w, blocks);
    CHECK(e.g[0] == doctest::Approx(2.0));  // block 1 scale 2/1
    CHECK(e.g[3] == doctest::Approx(1.0));  // block 2 scale 1/2
}
