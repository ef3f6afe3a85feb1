#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numeric>
#include <vector>

#include "qzoff/enhancements.hpp"
#include "qzoff/net.hpp"

using namespace qzoff;

namespace {

net::Network two_layer(const std::vector<double>& w0, const std::vector<double>& w1) {
    auto nw = net::build_network({2}, {net::LayerSpec::dense(2, true, false),
                                       net::LayerSpec::relu(),
                                       net::LayerSpec::dense(2, true, false),
                                       net::LayerSpec::softmax_xent_head()});
    nw.layers[0].w = w0;
    nw.layers[2].w = w1;
    return nw;
}

}  // namespace

TEST_CASE("momentum sampling: alpha=1, beta=1 reduces to a plain Gaussian") {
    enh::MomentumState st(50000, 1.0, 1.0);
    auto z = enh::momentum_sample(st, 42, 0).materialize();
    double mean = std::accumulate(z.begin(), z.end(), 0.0) / z.size();
    double var = 0.0;
    for (double v : z) var += (v - mean) * (v - mean);
    var /= z.size();
    CHECK(std::abs(mean) < 0.02);
    CHECK(std::abs(var - 1.0) < 0.03);
    CHECK(st.z_t == z);  // the draw becomes the next momentum state
}

TEST_CASE("momentum sampling: variance follows beta^2 a + (1-beta)^2 (1-a)") {
    double alpha = 0.5, beta = 0.5;
    enh::MomentumState st(50000, alpha, beta);  // z_t starts at zero
    auto z = enh::momentum_sample(st, 9, 0).materialize();
    double var = 0.0;
    for (double v : z) var += v * v;
    var /= z.size();
    double want = beta * beta * alpha + (1 - beta) * (1 - beta) * (1 - alpha);
    CHECK(var == doctest::Approx(want).epsilon(0.05));
}

TEST_CASE("momentum sampling: history feeds the next draw; schedule applies") {
    enh::MomentumState st(4, 0.5, 0.0);  // beta=0: z = z_t + sqrt(0.5) n2
    st.z_t = {10.0, 10.0, 10.0, 10.0};
    auto z = enh::momentum_sample(st, 3, 0).materialize();
    for (double v : z) CHECK(std::abs(v - 10.0) < 5.0);  // dominated by the carried state

    enh::MomentumState st2(4, 0.5, 0.5);
    st2.schedule = [](long step) { return std::make_pair(1.0, 1.0); };
    enh::momentum_sample(st2, 3, 7);
    CHECK(st2.alpha == 1.0);
    CHECK(st2.beta == 1.0);
}

TEST_CASE("build_mask: topk keeps the largest magnitudes") {
    auto nw = two_layer({0.9, -0.1, 0.5, 0.05}, {0.2, 0.3, -0.8, 0.0});
    auto mask = enh::build_mask(nw, train::SparseStrategy::TopkMagnitude, 0.5, 1);
    REQUIRE(mask.layers.size() == 2);
    CHECK(mask.kept_count(0) == 2);
    CHECK(mask.layers[0] == std::vector<uint8_t>{1, 0, 1, 0});  // 0.9 and 0.5
    CHECK(mask.layers[1] == std::vector<uint8_t>{0, 1, 1, 0});  // -0.8 and 0.3
}

TEST_CASE("build_mask: random density and determinism") {
    auto nw = two_layer(std::vector<double>(4, 0.1), std::vector<double>(4, 0.1));
    auto a = enh::build_mask(nw, train::SparseStrategy::Random, 0.25, 7);
    auto b = enh::build_mask(nw, train::SparseStrategy::Random, 0.25, 7);
    CHECK(a.layers == b.layers);
    CHECK(a.kept_count(0) == 1);
    CHECK(a.kept_count(1) == 1);
    auto c = enh::build_mask(nw, train::SparseStrategy::Random, 0.25, 8);
    CHECK(a.layers != c.layers);  // different seed, different mask (4-element layers)
}

TEST_CASE("build_mask: threshold strategy and empty-mask rejection") {
    auto nw = two_layer({0.9, -0.1, 0.5, 0.05}, {0.2, 0.3, -0.8, 0.0});
    auto mask = enh::build_mask(nw, train::SparseStrategy::Threshold, 1.0, 1, 0.25);
    CHECK(mask.layers[0] == std::vector<uint8_t>{1, 0, 1, 0});
    CHECK(mask.layers[1] == std::vector<uint8_t>{0, 1, 1, 0});
    CHECK_THROWS_AS(enh::build_mask(nw, train::SparseStrategy::Threshold, 1.0, 1, 99.0),
                    ConfigError);
    CHECK_THROWS_AS(enh::build_mask(nw, train::SparseStrategy::Random, 0.0, 1), ConfigError);
    CHECK_THROWS_AS(enh::build_mask(nw, train::SparseStrategy::Random, 1.5, 1), ConfigError);
}

TEST_CASE("apply_mask zeroes masked positions in both element types") {
    enh::SparseMask mask;
    mask.layers = {{1, 0}, {0, 1}};
    std::vector<double> d{1.0, 2.0, 3.0, 4.0};
    enh::apply_mask(std::span<double>(d), mask);
    CHECK(d == std::vector<double>{1.0, 0.0, 0.0, 4.0});
    std::vector<int32_t> q{5, 6, 7, 8};
    enh::apply_mask(std::span<int32_t>(q), mask);
    CHECK(q == std::vector<int32_t>{5, 0, 0, 8});
}

TEST_CASE("sharpness-aware float step: rho=0 equals the plain sign step") {
    est::LossFn loss = [](std::span<const double> w) {
        double s = 0.0;
        for (double v : w) s += (v - 0.3) * (v - 0.3);
        return s;
    };
    std::vector<double> w{1.0, -1.0, 0.5};
    std::vector<uint64_t> seeds{11, 22, 33};
    double eps = 1e-3, eta = 0.01;

    auto sam = enh::sharpness_aware_sign_spsa_step(loss, w, eps, 0.0, eta, seeds, 999);
    auto plain = est::sign_m_spsa(loss, w, seeds, eps);
    CHECK(sam.forward_calls == 2 * 3);  // no ascent pair when rho = 0
    for (size_t i = 0; i < w.size(); ++i)
        CHECK(sam.w[i] == doctest::Approx(w[i] - eta * plain.g[i]).epsilon(1e-12));

    auto climbed = enh::sharpness_aware_sign_spsa_step(loss, w, eps, 0.05, eta, seeds, 999);
    CHECK(climbed.forward_calls == 2 + 2 * 3);
    // On a convex bowl the ascent cannot flip any sign, so the update is the
    // same even though the ascent pair was evaluated.
    for (size_t i = 0; i < w.size(); ++i) CHECK(climbed.w[i] == sam.w[i]);
}

TEST_CASE("sharpness-aware step: the ascent changes the estimate across a ridge") {
    est::LossFn loss = [](std::span<const double> w) {
        double x = w[0];
        return std::min(40.0 * (x + 1.0) * (x + 1.0), 0.5 * (x - 1.0) * (x - 1.0));
    };
    std::vector<double> w{-0.8};
    std::vector<uint64_t> seeds{1, 101, 201};
    auto plain = enh::sharpness_aware_sign_spsa_step(loss, w, 1e-2, 0.0, 0.05, seeds, 999);
    auto climbed = enh::sharpness_aware_sign_spsa_step(loss, w, 1e-2, 0.6, 0.05, seeds, 999);
    CHECK(plain.w[0] != climbed.w[0]);  // ascent hops the rim and flips signs
}

TEST_CASE("sharpness-aware step favors the flat basin of a double well") {
    // f has a sharp minimum near x = -1 and a flat one near x = +1.
    est::LossFn loss = [](std::span<const double> w) {
        double x = w[0];
        double sharp = 40.0 * (x + 1.0) * (x + 1.0);
        double flat = 0.5 * (x - 1.0) * (x - 1.0);
        return std::min(sharp, flat);
    };
    std::vector<double> w{-0.8};  // inside the sharp basin, near its rim
    int toward_flat = 0;
    const int trials = 200;
    for (int t = 0; t < trials; ++t) {
        std::vector<uint64_t> seeds{rng::derive_seed(500, t)};
        auto res = enh::sharpness_aware_sign_spsa_step(loss, w, 1e-2, 0.6, 0.05, seeds,
                                                       rng::derive_seed(900, t));
        if (res.w[0] > w[0]) ++toward_flat;
    }
    // The ascent step usually hops the rim, so the inner step sees the flat
    // basin's slope and moves right in a clear majority of trials.
    CHECK(toward_flat > trials / 2);
}
