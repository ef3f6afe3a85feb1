#pragma once

// Float-space trainers over the same network zoo: the forward-gradient
// (sign-m-SPSA) reference trainer and the backpropagation baseline. Both
// emit the shared log format.

#include <cmath>
#include <vector>

#include "qzoff/backprop.hpp"
#include "qzoff/enhancements.hpp"
#include "qzoff/estimators.hpp"
#include "qzoff/net.hpp"
#include "qzoff/train_common.hpp"

namespace qzoff::fftrain {

using net::Batch;
using net::Mode;
using net::Network;
using train::StepLogRecord;
using train::TrainConfig;

namespace detail {

struct FloatView {
    std::vector<std::span<double>> w;
    std::vector<size_t> offsets, sizes;
    size_t total = 0;

    explicit FloatView(Network& nw) {
        for (size_t li : nw.trainable_layer_indices()) {
            auto& st = nw.layers[li];
            w.push_back(std::span<double>(st.w));
            offsets.push_back(total);
            sizes.push_back(st.w.size());
            total += st.w.size();
        }
    }
    std::vector<double> flat() const {
        std::vector<double> v;
        v.reserve(total);
        for (auto& s : w) v.insert(v.end(), s.begin(), s.end());
        return v;
    }
    void assign(std::span<const double> flat_values) {
        size_t off = 0;
        for (auto& s : w) {
            std::copy(flat_values.begin() + off, flat_values.begin() + off + s.size(), s.begin());
            off += s.size();
        }
    }
};

}  // namespace detail

// Float sign-m-SPSA training. Perturbs and updates trainable weight
// tensors, mirroring the parameter set of the quantized trainer.
inline std::vector<StepLogRecord> train_ff_float(Network& nw, const TrainConfig& cfg,
                                                 const train::TrainHooks& hooks) {
    std::vector<StepLogRecord> log;
    detail::FloatView view(nw);
    std::optional<enh::SparseMask> mask;
    if (cfg.sparse && cfg.density < 1.0)
        mask = enh::build_mask(nw, cfg.sparse_strategy, cfg.density,
                               rng::derive_seed(cfg.seed, 0x3A5C), cfg.threshold);
    std::optional<enh::MomentumState> momentum;
    if (cfg.momentum) momentum.emplace(view.total, cfg.alpha, cfg.beta);

    for (long t = 0; t < cfg.steps; ++t) {
        if (mask && cfg.refresh_every > 0 && t > 0 && t % cfg.refresh_every == 0)
            mask = enh::build_mask(nw, cfg.sparse_strategy, cfg.density,
                                   rng::derive_seed(cfg.seed, 0x3A5C + t), cfg.threshold);
        Batch batch = hooks.next_batch(t);
        auto loss_at = [&](std::span<const double> wv) {
            view.assign(wv);
            return net::forward_loss(nw, batch, Mode::Float);
        };
        std::vector<double> base = view.flat();
        uint64_t step_seed = rng::derive_seed(cfg.seed, static_cast<uint64_t>(t) + 0x57E9);

        std::vector<double> anchor = base;
        if (cfg.sharpness) {
            double rho = cfg.rho > 0.0 ? cfg.rho : cfg.eps;
            uint64_t aseed = rng::derive_seed(cfg.seed, static_cast<uint64_t>(t) + 0x5A11);
            auto ascent = est::sign_m_spsa(loss_at, base, std::span(&aseed, 1), cfg.eps, cfg.dist);
            for (size_t i = 0; i < anchor.size(); ++i) anchor[i] += rho * ascent.g[i];
        }

        StepLogRecord rec;
        rec.step = t;
        std::vector<double> g(view.total, 0.0);
        double loss_sum = 0.0;
        for (int j = 0; j < cfg.m; ++j) {
            uint64_t seed_j = rng::derive_seed(step_seed, static_cast<uint64_t>(j));
            est::Perturbation z =
                momentum ? enh::momentum_sample(*momentum, seed_j, t)
                         : est::Perturbation{seed_j, cfg.dist, view.total};
            std::vector<double> zv = z.materialize();
            if (mask) enh::apply_mask(std::span<double>(zv), *mask);
            std::vector<double> wp(anchor.size()), wm(anchor.size());
            for (size_t i = 0; i < anchor.size(); ++i) {
                wp[i] = anchor[i] + cfg.eps * zv[i];
                wm[i] = anchor[i] - cfg.eps * zv[i];
            }
            double lp = loss_at(wp);
            double lm = loss_at(wm);
            loss_sum += lp + lm;
            int s = est::sign_of(lp - lm);
            if (s > 0)
                ++rec.sign_pos;
            else if (s < 0)
                ++rec.sign_neg;
            else
                ++rec.sign_zero;
            if (s != 0) {
                if (cfg.kernel_norm) {
                    // Per-layer block scaled by ||w|| / ||z|| before averaging.
                    size_t off = 0;
                    for (size_t l = 0; l < view.sizes.size(); ++l) {
                        double zn = 0.0, wn = 0.0;
                        for (size_t i = off; i < off + view.sizes[l]; ++i) {
                            zn += zv[i] * zv[i];
                            wn += anchor[i] * anchor[i];
                        }
                        double scale = zn > 0.0 ? std::sqrt(wn) / std::sqrt(zn) : 0.0;
                        for (size_t i = off; i < off + view.sizes[l]; ++i)
                            g[i] += s * scale * zv[i];
                        off += view.sizes[l];
                    }
                } else {
                    for (size_t i = 0; i < g.size(); ++i) g[i] += s * zv[i];
                }
            }
        }
        for (auto& v : g) v /= cfg.m;
        if (mask) enh::apply_mask(std::span<double>(g), *mask);

        double eta = cfg.lr.at(t);
        std::vector<double> updated = base;
        double sumsq = 0.0;
        for (size_t i = 0; i < updated.size(); ++i) {
            double d = eta * g[i];
            updated[i] -= d;
            sumsq += d * d;
        }
        view.assign(updated);

        rec.mean_loss = loss_sum / (2.0 * cfg.m);
        rec.update_l2 = std::sqrt(sumsq);
        rec.lr = eta;
        if (hooks.on_step) hooks.on_step(rec);
        log.push_back(rec);
        if (hooks.on_checkpoint && cfg.checkpoint_every > 0 && (t + 1) % cfg.checkpoint_every == 0)
            hooks.on_checkpoint(t + 1);
    }
    return log;
}

// Plain SGD on exact backprop gradients; the baseline the forward path is
// measured against.
inline std::vector<StepLogRecord> train_bp(Network& nw, const TrainConfig& cfg,
                                           const train::TrainHooks& hooks) {
    std::vector<StepLogRecord> log;
    for (long t = 0; t < cfg.steps; ++t) {
        Batch batch = hooks.next_batch(t);
        auto g = bp::backprop(nw, batch);
        double eta = cfg.lr.at(t);
        double sumsq = 0.0;
        for (size_t li = 0; li < nw.layers.size(); ++li) {
            auto& st = nw.layers[li];
            if (!net::is_compute(st.spec.kind) || !st.spec.trainable) continue;
            for (size_t i = 0; i < st.w.size(); ++i) {
                double d = eta * g.dw[li][i];
                st.w[i] -= d;
                sumsq += d * d;
            }
            for (size_t i = 0; i < st.b.size(); ++i) {
                double d = eta * g.db[li][i];
                st.b[i] -= d;
                sumsq += d * d;
            }
        }
        StepLogRecord rec;
        rec.step = t;
        rec.mean_loss = g.loss;
        rec.update_l2 = std::sqrt(sumsq);
        rec.lr = eta;
        if (hooks.on_step) hooks.on_step(rec);
        log.push_back(rec);
        if (hooks.on_checkpoint && cfg.checkpoint_every > 0 && (t + 1) % cfg.checkpoint_every == 0)
            hooks.on_checkpoint(t + 1);
    }
    return log;
}

}  // namespace qzoff::fftrain
