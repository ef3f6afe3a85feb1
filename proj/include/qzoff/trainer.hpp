#pragma once

// The quantized zeroth-order forward-gradient training loop: integer
// perturbation, sign-based gradient accumulation, and multiply-shift
// weight updates, all on the quantized parameter set.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "qzoff/enhancements.hpp"
#include "qzoff/errors.hpp"
#include "qzoff/estimators.hpp"
#include "qzoff/fxp.hpp"
#include "qzoff/net.hpp"
#include "qzoff/rng.hpp"
#include "qzoff/train_common.hpp"

namespace qzoff::qzo {

using net::Batch;
using net::Mode;
using net::Network;
using train::ResetMode;
using train::StepLogRecord;
using train::TrainConfig;

// Derived integer constants of the quantized loop. delta_eta carries the
// current learning rate; the quantized learning-rate value is 1.
struct QuantConstants {
    double delta_z = 0.0;
    int32_t one_q = 0;
    int32_t pert_qmax = 127;
    fxp::RequantMultiplier pert_mult;        // ~ delta_z
    std::vector<double> delta_w;             // per trainable layer
    std::vector<int32_t> eps_q;              // per trainable layer
    std::vector<size_t> layer_sizes;         // weight counts, traversal order
    size_t total = 0;
};

struct ValidationResult {
    bool ok = false;
    QuantConstants consts;
    std::vector<std::string> report;
};

// Computes all quantized constants; rejects configurations whose
// perturbation vanishes (eps_q = 0) or whose accumulator could overflow.
// Rejection is a value, not an exception; cfg.force downgrades the eps_q
// rejection to a warning.
inline ValidationResult validate_config(const Network& nw, const TrainConfig& cfg) {
    ValidationResult res;
    QuantConstants& c = res.consts;
    if (!(cfg.eps > 0.0)) {
        res.report.push_back("rejected: eps must be > 0");
        return res;
    }
    if (cfg.m < 1) {
        res.report.push_back("rejected: m must be >= 1");
        return res;
    }
    if (cfg.weight_bits != 8 && cfg.weight_bits != 16) {
        res.report.push_back("rejected: weight_bits must be 8 or 16");
        return res;
    }
    if (!nw.quantized_ready || nw.weight_bits != cfg.weight_bits) {
        res.report.push_back("rejected: network not quantized at weight_bits=" +
                             std::to_string(cfg.weight_bits));
        return res;
    }
    c.pert_qmax = (1 << (cfg.pert_bits - 1)) - 1;
    c.delta_z = cfg.zmax / c.pert_qmax;
    c.one_q = static_cast<int32_t>(fxp::round_half_even(1.0 / c.delta_z));
    c.pert_mult = fxp::derive_multiplier(c.delta_z);

    int32_t wqmax = (1 << (cfg.weight_bits - 1)) - 1;
    bool eps_reject = false;
    for (size_t li : nw.trainable_layer_indices()) {
        const auto& st = nw.layers[li];
        double dw = st.w_q.params.delta;
        int32_t eq = static_cast<int32_t>(fxp::round_half_even(cfg.eps / dw));
        c.delta_w.push_back(dw);
        c.eps_q.push_back(eq);
        c.layer_sizes.push_back(st.w.size());
        c.total += st.w.size();
        if (eq < 1) {
            eps_reject = true;
            res.report.push_back("layer '" + st.name + "': eps_q = 0 (eps=" +
                                 std::to_string(cfg.eps) + ", delta_w=" + std::to_string(dw) +
                                 "); perturbation vanishes in the quantized domain");
        }
        // Worst-case accumulator: |w_q|*one_q + 2*eps_q*|z_q| must stay in 32 bits.
        long double worst = static_cast<long double>(wqmax) * c.one_q +
                            2.0L * std::abs(eq) * c.pert_qmax;
        if (worst >= 2147483647.0L) {
            res.report.push_back("layer '" + st.name +
                                 "': perturbation accumulator would overflow 32 bits");
            return res;
        }
    }
    if (c.total == 0) {
        res.report.push_back("rejected: no trainable layers");
        return res;
    }
    if (eps_reject && !cfg.force) return res;
    res.ok = true;
    return res;
}

namespace detail {

// Regenerable quantized perturbation: element -> z_q integer.
struct QuantPerturbation {
    const rng::CounterRng gen;
    est::Distribution dist;
    double zmax, delta_z;
    int32_t pert_qmax;
    const std::vector<double>* stored = nullptr;  // momentum path
    const enh::SparseMask* mask = nullptr;

    int32_t at(size_t global_index, size_t layer, size_t in_layer) const {
        if (mask && !(*mask).layers[layer][in_layer]) return 0;
        double z = stored ? (*stored)[global_index]
                          : (dist == est::Distribution::Normal ? gen.normal(global_index)
                                                               : gen.pm_one(global_index));
        z = std::clamp(z, -zmax, zmax);
        return fxp::clamp_q(fxp::round_half_even(z / delta_z), pert_qmax);
    }
};

}  // namespace detail

// In-place quantized perturbation of one layer:
// w_q <- requant(w_q * 1_q + eps_q * z_q) at the layer's own weight scale.
// eps_q_signed is +eps_q, -2*eps_q, or +eps_q depending on direction.
inline void perturb_layer(std::span<int32_t> wq, int32_t wqmax, const QuantConstants& c,
                          int32_t eps_q_signed, size_t layer, size_t global_offset,
                          const detail::QuantPerturbation& zq) {
    for (size_t i = 0; i < wq.size(); ++i) {
        int64_t acc = int64_t{wq[i]} * c.one_q +
                      int64_t{eps_q_signed} * zq.at(global_offset + i, layer, i);
        wq[i] = fxp::requantize_one(net::detail::sat_acc(acc), c.pert_mult, wqmax);
    }
}

// Standalone form matching a single tensor (tests and the worked example).
inline fxp::QTensor perturb_parameters(const fxp::QTensor& wq, const fxp::QTensor& zq,
                                       int32_t eps_q_signed, int32_t one_q,
                                       const fxp::RequantMultiplier& pert_mult) {
    if (zq.size() != wq.size())
        throw ConfigError("perturb_parameters: perturbation layout mismatch");
    fxp::QTensor out = wq;
    for (size_t i = 0; i < wq.size(); ++i) {
        int64_t acc = int64_t{wq.data[i]} * one_q + int64_t{eps_q_signed} * zq.data[i];
        out.data[i] = fxp::requantize_one(net::detail::sat_acc(acc), pert_mult,
                                          wq.params.qmax);
    }
    return out;
}

struct StepReport {
    std::vector<double> loss_plus, loss_minus;  // per inner sample
    int sign_pos = 0, sign_neg = 0, sign_zero = 0;
    double mean_loss = 0.0;
    double update_l2 = 0.0;                  // real units
    std::vector<double> layer_update_l2;     // per trainable layer
    long forward_calls = 0;
};

struct TrainerState {
    std::optional<enh::SparseMask> mask;
    std::optional<enh::MomentumState> momentum;
    // Instrumentation for the memory contract.
    size_t snapshot_bytes = 0;
    size_t accum_bytes = 0;
};

namespace detail {

struct LayerView {
    std::vector<std::span<int32_t>> wq;  // trainable weight data, traversal order
    std::vector<size_t> offsets;
    int32_t wqmax = 0;
};

inline LayerView trainable_view(Network& nw) {
    LayerView v;
    size_t off = 0;
    for (size_t li : nw.trainable_layer_indices()) {
        auto& st = nw.layers[li];
        v.wq.push_back(std::span<int32_t>(st.w_q.data));
        v.offsets.push_back(off);
        off += st.w_q.size();
        v.wqmax = st.w_q.params.qmax;
    }
    return v;
}

inline void perturb_all(LayerView& view, const QuantConstants& c, int sign_times_eps,
                        const QuantPerturbation& zq) {
    for (size_t l = 0; l < view.wq.size(); ++l)
        perturb_layer(view.wq[l], view.wqmax, c, sign_times_eps * c.eps_q[l], l,
                      view.offsets[l], zq);
}

}  // namespace detail

// One Algorithm-1 step: M inner perturbed loss pairs, integer sign
// accumulation, truncating average, and the multiply-shift weight update.
inline StepReport train_step(Network& nw, const Batch& batch, const TrainConfig& cfg,
                             const QuantConstants& c, long step, TrainerState* state = nullptr) {
    StepReport rep;
    auto view = detail::trainable_view(nw);

    std::vector<int32_t> snapshot;
    if (cfg.reset == ResetMode::Snapshot) {
        snapshot.reserve(c.total);
        for (auto& w : view.wq) snapshot.insert(snapshot.end(), w.begin(), w.end());
        if (state) state->snapshot_bytes = snapshot.size() * (cfg.weight_bits / 8);
    }
    auto restore = [&]() {
        size_t off = 0;
        for (auto& w : view.wq) {
            std::copy(snapshot.begin() + off, snapshot.begin() + off + w.size(), w.begin());
            off += w.size();
        }
    };

    std::vector<int32_t> g_acc(c.total, 0);
    if (state) state->accum_bytes = g_acc.size() * 4;

    uint64_t step_seed = rng::derive_seed(cfg.seed, static_cast<uint64_t>(step) + 0x57E9);
    const enh::SparseMask* mask =
        state && state->mask ? &*state->mask : nullptr;

    for (int j = 0; j < cfg.m; ++j) {
        uint64_t seed_j = rng::derive_seed(step_seed, static_cast<uint64_t>(j));
        std::vector<double> momentum_values;
        if (state && state->momentum) {
            momentum_values = enh::momentum_sample(*state->momentum, seed_j, step).materialize();
        }
        detail::QuantPerturbation zq{rng::CounterRng{seed_j}, cfg.dist, cfg.zmax, c.delta_z,
                                     c.pert_qmax,
                                     momentum_values.empty() ? nullptr : &momentum_values, mask};
        // Both loss evaluations must see the weights after exactly one
        // re-quantization, otherwise the scale shrink of the multiply-shift
        // (1_q * delta_z < 1) enters the sign asymmetrically and drowns out
        // the +-eps*z signal.  With a snapshot we restore between the two
        // probes; without one we chain a -2eps perturbation, which doubles
        // the shrink on the minus side and reperturbs afterwards, accepting
        // the bounded drift that entails.
        double lp, lm;
        try {
            detail::perturb_all(view, c, +1, zq);
            lp = net::forward_loss(nw, batch, Mode::Quantized);
            if (cfg.reset == ResetMode::Snapshot) {
                restore();
                detail::perturb_all(view, c, -1, zq);
            } else {
                detail::perturb_all(view, c, -2, zq);
            }
            lm = net::forward_loss(nw, batch, Mode::Quantized);
        } catch (...) {
            if (cfg.reset == ResetMode::Snapshot) restore();
            throw;
        }
        rep.loss_plus.push_back(lp);
        rep.loss_minus.push_back(lm);
        rep.forward_calls += 2;
        int s = est::sign_of(lp - lm);
        if (s > 0)
            ++rep.sign_pos;
        else if (s < 0)
            ++rep.sign_neg;
        else
            ++rep.sign_zero;
        if (s != 0) {
            for (size_t l = 0; l < view.wq.size(); ++l) {
                size_t off = view.offsets[l];
                for (size_t i = 0; i < view.wq[l].size(); ++i)
                    g_acc[off + i] += s * zq.at(off + i, l, i);
            }
        }
        if (cfg.reset == ResetMode::Snapshot)
            restore();
        else
            detail::perturb_all(view, c, +1, zq);
    }

    for (double lp : rep.loss_plus) rep.mean_loss += lp;
    for (double lm : rep.loss_minus) rep.mean_loss += lm;
    rep.mean_loss /= (2.0 * cfg.m);

    // g_q = g_q^a / M, integer division toward zero; remainder discarded.
    if (cfg.m > 1)
        for (auto& v : g_acc) v /= cfg.m;

    double eta = cfg.lr.at(step);
    double sumsq_total = 0.0;
    for (size_t l = 0; l < view.wq.size(); ++l) {
        double factor = eta * c.delta_z / c.delta_w[l];
        auto mult = fxp::derive_multiplier_wide(factor);
        size_t off = view.offsets[l];
        double sumsq = 0.0;
        for (size_t i = 0; i < view.wq[l].size(); ++i) {
            int32_t wbar = fxp::requantize_one(g_acc[off + i], mult, view.wqmax);
            if (mask && !mask->layers[l][i]) wbar = 0;
            view.wq[l][i] = fxp::clamp_q(int64_t{view.wq[l][i]} - wbar, view.wqmax);
            double real = wbar * c.delta_w[l];
            sumsq += real * real;
        }
        rep.layer_update_l2.push_back(std::sqrt(sumsq));
        sumsq_total += sumsq;
    }
    rep.update_l2 = std::sqrt(sumsq_total);
    return rep;
}

// Sharpness-aware variant: one extra sign-SPSA pair picks an ascent
// direction, the plain step runs from the climbed point, and its weight
// delta is applied back at the original parameters.
inline StepReport sharpness_aware_step(Network& nw, const Batch& batch, const TrainConfig& cfg,
                                       const QuantConstants& c, long step,
                                       TrainerState* state = nullptr) {
    double rho = cfg.rho > 0.0 ? cfg.rho : cfg.eps;
    auto view = detail::trainable_view(nw);
    std::vector<int32_t> original;
    original.reserve(c.total);
    for (auto& w : view.wq) original.insert(original.end(), w.begin(), w.end());

    StepReport rep;
    uint64_t ascent_seed = rng::derive_seed(cfg.seed, static_cast<uint64_t>(step) + 0x5A11);
    detail::QuantPerturbation za{rng::CounterRng{ascent_seed}, cfg.dist, cfg.zmax, c.delta_z,
                                 c.pert_qmax, nullptr,
                                 state && state->mask ? &*state->mask : nullptr};
    int ascent_sign;
    {
        detail::perturb_all(view, c, +1, za);
        double lp = net::forward_loss(nw, batch, Mode::Quantized);
        detail::perturb_all(view, c, -2, za);
        double lm = net::forward_loss(nw, batch, Mode::Quantized);
        rep.forward_calls += 2;
        ascent_sign = est::sign_of(lp - lm);
        size_t off = 0;
        for (auto& w : view.wq) {  // back to the original position
            std::copy(original.begin() + off, original.begin() + off + w.size(), w.begin());
            off += w.size();
        }
    }
    // Ascend: w' = w + rho * sign * z (rho expressed per layer in eps_q units).
    if (ascent_sign != 0) {
        for (size_t l = 0; l < view.wq.size(); ++l) {
            int32_t rho_q = static_cast<int32_t>(fxp::round_half_even(rho / c.delta_w[l]));
            perturb_layer(view.wq[l], view.wqmax, c, ascent_sign * rho_q, l, view.offsets[l], za);
        }
    }

    std::vector<int32_t> anchor;
    anchor.reserve(c.total);
    for (auto& w : view.wq) anchor.insert(anchor.end(), w.begin(), w.end());

    StepReport inner = train_step(nw, batch, cfg, c, step, state);

    // The inner step left the weights at anchor - wbar; apply the same
    // delta at the original position and discard the ascent perturbation.
    size_t off = 0;
    for (auto& w : view.wq) {
        for (size_t i = 0; i < w.size(); ++i) {
            int64_t delta = int64_t{w[i]} - anchor[off + i];
            w[i] = fxp::clamp_q(int64_t{original[off + i]} + delta, view.wqmax);
        }
        off += w.size();
    }
    rep.loss_plus = inner.loss_plus;
    rep.loss_minus = inner.loss_minus;
    rep.sign_pos = inner.sign_pos;
    rep.sign_neg = inner.sign_neg;
    rep.sign_zero = inner.sign_zero;
    rep.mean_loss = inner.mean_loss;
    rep.update_l2 = inner.update_l2;
    rep.layer_update_l2 = inner.layer_update_l2;
    rep.forward_calls += inner.forward_calls;
    return rep;
}

// Outer loop: T steps over batches from the hook, per-step log records,
// periodic checkpoint callbacks. Enhancements are armed from cfg.
inline std::vector<StepLogRecord> train(Network& nw, const TrainConfig& cfg,
                                        const QuantConstants& c, const train::TrainHooks& hooks) {
    std::vector<StepLogRecord> log;
    TrainerState state;
    if (cfg.sparse && cfg.density < 1.0) {
        net::sync_float_from_quant(nw);
        state.mask = enh::build_mask(nw, cfg.sparse_strategy, cfg.density,
                                     rng::derive_seed(cfg.seed, 0x3A5C), cfg.threshold);
    }
    if (cfg.momentum) {
        state.momentum.emplace(c.total, cfg.alpha, cfg.beta);
    }
    for (long t = 0; t < cfg.steps; ++t) {
        if (cfg.sparse && cfg.refresh_every > 0 && t > 0 && t % cfg.refresh_every == 0) {
            net::sync_float_from_quant(nw);
            state.mask = enh::build_mask(nw, cfg.sparse_strategy, cfg.density,
                                         rng::derive_seed(cfg.seed, 0x3A5C + t), cfg.threshold);
        }
        Batch batch = hooks.next_batch(t);
        auto t0 = std::chrono::steady_clock::now();
        StepReport rep = cfg.sharpness ? sharpness_aware_step(nw, batch, cfg, c, t, &state)
                                       : train_step(nw, batch, cfg, c, t, &state);
        auto t1 = std::chrono::steady_clock::now();
        StepLogRecord rec;
        rec.step = t;
        rec.mean_loss = rep.mean_loss;
        rec.sign_pos = rep.sign_pos;
        rec.sign_neg = rep.sign_neg;
        rec.sign_zero = rep.sign_zero;
        rec.update_l2 = rep.update_l2;
        rec.lr = cfg.lr.at(t);
        rec.wall_ms = cfg.timing
                          ? std::chrono::duration_cast<std::chrono::milliseconds>(t1 - t0).count()
                          : 0;
        if (hooks.on_step) hooks.on_step(rec);
        log.push_back(rec);
        if (hooks.on_checkpoint && cfg.checkpoint_every > 0 && (t + 1) % cfg.checkpoint_every == 0)
            hooks.on_checkpoint(t + 1);
    }
    return log;
}

}  // namespace qzoff::qzo
