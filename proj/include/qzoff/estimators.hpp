#pragma once

// Float-space forward-gradient estimators: true directional forward
// gradient, SPSA, sign-m-SPSA, and kernel-wise normalization. These serve
// as the float reference path and as the semantic oracle for the
// quantized trainer.

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "qzoff/errors.hpp"
#include "qzoff/rng.hpp"

namespace qzoff::est {

enum class Distribution { Normal, Binomial };

// A perturbation direction regenerable from (seed, distribution, count);
// only stored explicitly when momentum-guided sampling needs history.
struct Perturbation {
    uint64_t seed = 0;
    Distribution dist = Distribution::Normal;
    size_t count = 0;
    std::optional<std::vector<double>> stored;

    double value(size_t i) const {
        if (stored) return (*stored)[i];
        rng::CounterRng gen{seed};
        return dist == Distribution::Normal ? gen.normal(i) : gen.pm_one(i);
    }
    std::vector<double> materialize() const {
        if (stored) return *stored;
        std::vector<double> v(count);
        for (size_t i = 0; i < count; ++i) v[i] = value(i);
        return v;
    }
    static Perturbation from_values(std::vector<double> values) {
        Perturbation p;
        p.count = values.size();
        p.stored = std::move(values);
        return p;
    }
};

struct FwdGradEstimate {
    std::vector<double> g;  // flat, fixed layer-traversal order
    int m = 0;
    int sign_pos = 0, sign_neg = 0, sign_zero = 0;
};

using LossFn = std::function<double(std::span<const double>)>;
using GradFn = std::function<std::vector<double>(std::span<const double>)>;

// g(w) = (grad(w) . z) z, with the exact gradient. Used for unbiasedness
// testing, not training.
inline std::vector<double> forward_gradient(const GradFn& grad_fn, std::span<const double> w,
                                            const Perturbation& z) {
    std::vector<double> grad = grad_fn(w);
    double dir = 0.0;
    for (size_t i = 0; i < grad.size(); ++i) dir += grad[i] * z.value(i);
    std::vector<double> out(grad.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = dir * z.value(i);
    return out;
}

// Central-difference directional estimate from exactly two loss calls.
inline std::vector<double> spsa(const LossFn& loss, std::span<const double> w,
                                const Perturbation& z, double eps) {
    if (!(eps > 0.0)) throw ConfigError("spsa: eps must be > 0");
    std::vector<double> wp(w.begin(), w.end()), wm(w.begin(), w.end());
    for (size_t i = 0; i < w.size(); ++i) {
        double zi = z.value(i);
        wp[i] += eps * zi;
        wm[i] -= eps * zi;
    }
    double lp = loss(wp);
    if (!std::isfinite(lp)) throw NumericError("spsa: non-finite loss at w + eps*z");
    double lm = loss(wm);
    if (!std::isfinite(lm)) throw NumericError("spsa: non-finite loss at w - eps*z");
    double scale = (lp - lm) / (2.0 * eps);
    std::vector<double> out(w.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = scale * z.value(i);
    return out;
}

inline int sign_of(double d) { return d > 0.0 ? 1 : (d < 0.0 ? -1 : 0); }

// (1/m) sum_i sign(L(w+eps z_i) - L(w-eps z_i)) z_i; a tie contributes the
// zero vector.
inline FwdGradEstimate sign_m_spsa(const LossFn& loss, std::span<const double> w,
                                   std::span<const uint64_t> seeds, double eps,
                                   Distribution dist = Distribution::Normal) {
    if (seeds.empty()) throw ConfigError("sign_m_spsa: m must be >= 1");
    if (!(eps > 0.0)) throw ConfigError("sign_m_spsa: eps must be > 0");
    FwdGradEstimate est;
    est.m = static_cast<int>(seeds.size());
    est.g.assign(w.size(), 0.0);
    std::vector<double> wp(w.size()), wm(w.size());
    for (uint64_t s : seeds) {
        Perturbation z{s, dist, w.size()};
        for (size_t i = 0; i < w.size(); ++i) {
            double zi = z.value(i);
            wp[i] = w[i] + eps * zi;
            wm[i] = w[i] - eps * zi;
        }
        double lp = loss(wp);
        if (!std::isfinite(lp)) throw NumericError("sign_m_spsa: non-finite loss at w + eps*z");
        double lm = loss(wm);
        if (!std::isfinite(lm)) throw NumericError("sign_m_spsa: non-finite loss at w - eps*z");
        int s01 = sign_of(lp - lm);
        if (s01 > 0)
            ++est.sign_pos;
        else if (s01 < 0)
            ++est.sign_neg;
        else
            ++est.sign_zero;
        if (s01 != 0)
            for (size_t i = 0; i < w.size(); ++i) est.g[i] += s01 * z.value(i);
    }
    for (auto& v : est.g) v /= est.m;
    return est;
}

// Scale each layer block of the estimate by ||w_block|| / ||z_block||.
// Blocks with a zero-norm perturbation are left unscaled; the return value
// counts them.
inline int kernelwise_normalize(FwdGradEstimate& est, std::span<const double> z_values,
                                std::span<const double> w_values,
                                std::span<const size_t> block_sizes) {
    int warnings = 0;
    size_t off = 0;
    for (size_t bs : block_sizes) {
        double zn = 0.0, wn = 0.0;
        for (size_t i = off; i < off + bs; ++i) {
            zn += z_values[i] * z_values[i];
            wn += w_values[i] * w_values[i];
        }
        zn = std::sqrt(zn);
        wn = std::sqrt(wn);
        if (zn == 0.0) {
            ++warnings;
        } else {
            double s = wn / zn;
            for (size_t i = off; i < off + bs; ++i) est.g[i] *= s;
        }
        off += bs;
    }
    return warnings;
}

}  // namespace qzoff::est
