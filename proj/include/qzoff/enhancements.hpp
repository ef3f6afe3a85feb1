#pragma once

// Training enhancements: momentum-guided perturbation sampling, sparse
// update masks, and the float-space sharpness-aware sign-SPSA step.
// Kernel-wise normalization lives with the estimators.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "qzoff/errors.hpp"
#include "qzoff/estimators.hpp"
#include "qzoff/net.hpp"
#include "qzoff/rng.hpp"
#include "qzoff/train_common.hpp"

namespace qzoff::enh {

// --- momentum-guided sampling ------------------------------------------

// z1 ~ N(0, I*sqrt(alpha)), z2 ~ N(z_t, I*sqrt(1-alpha)),
// z_{t+1} = beta*z1 + (1-beta)*z2. beta = 1 reduces to the plain sampler.
struct MomentumState {
    std::vector<double> z_t;
    double alpha = 0.5;
    double beta = 1.0;
    // Optional schedule: step -> (alpha, beta). Default keeps constants.
    std::function<std::pair<double, double>(long)> schedule;

    explicit MomentumState(size_t count, double alpha_ = 0.5, double beta_ = 1.0)
        : z_t(count, 0.0), alpha(alpha_), beta(beta_) {}
};

inline est::Perturbation momentum_sample(MomentumState& state, uint64_t seed, long step = 0) {
    if (state.schedule) {
        auto [a, b] = state.schedule(step);
        state.alpha = a;
        state.beta = b;
    }
    double sa = std::sqrt(state.alpha);
    double sb = std::sqrt(1.0 - state.alpha);
    rng::CounterRng g1{rng::derive_seed(seed, 1)};
    rng::CounterRng g2{rng::derive_seed(seed, 2)};
    std::vector<double> z(state.z_t.size());
    for (size_t i = 0; i < z.size(); ++i) {
        double z1 = sa * g1.normal(i);
        double z2 = state.z_t[i] + sb * g2.normal(i);
        z[i] = state.beta * z1 + (1.0 - state.beta) * z2;
    }
    state.z_t = z;
    return est::Perturbation::from_values(std::move(z));
}

// --- sparse update masks --------------------------------------------------

struct SparseMask {
    train::SparseStrategy strategy = train::SparseStrategy::Random;
    double density = 1.0;
    long refresh_every = 0;
    // One bool array per trainable layer, in layer-traversal order.
    std::vector<std::vector<uint8_t>> layers;

    size_t kept_count(size_t layer) const {
        return static_cast<size_t>(
            std::count(layers[layer].begin(), layers[layer].end(), uint8_t{1}));
    }
};

inline SparseMask build_mask(const net::Network& nw, train::SparseStrategy strategy,
                             double density, uint64_t seed, double threshold = 0.0) {
    if (!(density > 0.0) || density > 1.0)
        throw ConfigError("build_mask: density must be in (0, 1]");
    SparseMask mask;
    mask.strategy = strategy;
    mask.density = density;
    auto idx = nw.trainable_layer_indices();
    rng::CounterRng gen{rng::derive_seed(seed, 0x3A5C)};
    uint64_t ctr = 0;
    for (size_t li : idx) {
        const auto& w = nw.layers[li].w;
        std::vector<uint8_t> m(w.size(), 0);
        switch (strategy) {
            case train::SparseStrategy::TopkMagnitude: {
                size_t keep = static_cast<size_t>(std::llround(density * w.size()));
                keep = std::max<size_t>(keep, 1);
                std::vector<size_t> order(w.size());
                std::iota(order.begin(), order.end(), size_t{0});
                std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
                    return std::fabs(w[a]) > std::fabs(w[b]);
                });
                for (size_t i = 0; i < keep && i < order.size(); ++i) m[order[i]] = 1;
                break;
            }
            case train::SparseStrategy::Random: {
                size_t keep = static_cast<size_t>(std::llround(density * w.size()));
                keep = std::max<size_t>(keep, 1);
                // Seeded Fisher-Yates over the index list, keep the prefix.
                std::vector<size_t> order(w.size());
                std::iota(order.begin(), order.end(), size_t{0});
                for (size_t i = w.size() - 1; i > 0; --i) {
                    size_t j = gen.raw(ctr++) % (i + 1);
                    std::swap(order[i], order[j]);
                }
                for (size_t i = 0; i < keep; ++i) m[order[i]] = 1;
                break;
            }
            case train::SparseStrategy::Threshold: {
                for (size_t i = 0; i < w.size(); ++i)
                    if (std::fabs(w[i]) >= threshold) m[i] = 1;
                if (std::count(m.begin(), m.end(), uint8_t{1}) == 0)
                    throw ConfigError("build_mask: threshold leaves layer '" +
                                      nw.layers[li].name + "' with an empty mask");
                break;
            }
        }
        mask.layers.push_back(std::move(m));
    }
    return mask;
}

// Zero masked-out positions of a flat layout-ordered vector (perturbation
// or update), so masked weights never move.
inline void apply_mask(std::span<double> flat, const SparseMask& mask) {
    size_t off = 0;
    for (const auto& m : mask.layers) {
        for (size_t i = 0; i < m.size(); ++i)
            if (!m[i]) flat[off + i] = 0.0;
        off += m.size();
    }
}

inline void apply_mask(std::span<int32_t> flat, const SparseMask& mask) {
    size_t off = 0;
    for (const auto& m : mask.layers) {
        for (size_t i = 0; i < m.size(); ++i)
            if (!m[i]) flat[off + i] = 0;
        off += m.size();
    }
}

// --- sharpness-aware perturbation (float-space core) ---------------------

struct SamStepResult {
    std::vector<double> w;
    int forward_calls = 0;
};

// One sign-SPSA training step taken from an ascent point: estimate a
// single sign direction d, climb to w + rho*d, run a plain sign-m-SPSA
// step there, and apply the resulting delta at the original w.
inline SamStepResult sharpness_aware_sign_spsa_step(const est::LossFn& loss,
                                                    std::span<const double> w, double eps,
                                                    double rho, double eta,
                                                    std::span<const uint64_t> seeds,
                                                    uint64_t ascent_seed,
                                                    est::Distribution dist =
                                                        est::Distribution::Normal) {
    SamStepResult res;
    std::vector<double> base(w.begin(), w.end());
    std::vector<double> anchor = base;
    if (rho > 0.0) {
        auto ascent = est::sign_m_spsa(loss, base, std::span(&ascent_seed, 1), eps, dist);
        res.forward_calls += 2;
        for (size_t i = 0; i < anchor.size(); ++i) anchor[i] += rho * ascent.g[i];
    }
    auto g = est::sign_m_spsa(loss, anchor, seeds, eps, dist);
    res.forward_calls += 2 * g.m;
    res.w = base;
    for (size_t i = 0; i < res.w.size(); ++i) res.w[i] -= eta * g.g[i];
    return res;
}

}  // namespace qzoff::enh
