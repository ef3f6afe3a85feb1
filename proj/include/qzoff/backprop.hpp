#pragma once

// Float backpropagation reference: exact reverse-mode gradients of the
// batch loss, used as the oracle for the forward-gradient estimators and
// as the BP baseline trainer.

#include <cmath>
#include <vector>

#include "qzoff/net.hpp"

namespace qzoff::bp {

using net::Batch;
using net::LayerKind;
using net::Network;

struct Gradients {
    // Indexed like net.layers; empty vectors for non-compute layers.
    std::vector<std::vector<double>> dw;
    std::vector<std::vector<double>> db;
    double loss = 0.0;
};

inline Gradients backprop(const Network& nw, const Batch& batch) {
    std::vector<std::vector<double>> tape;  // input of every non-head layer
    std::vector<double> logits = net::forward_logits_float(nw, batch, &tape);
    ++nw.forward_calls;

    Gradients g;
    g.dw.resize(nw.layers.size());
    g.db.resize(nw.layers.size());
    g.loss = net::loss_from_logits(nw, logits, batch);

    int oc = nw.out_count;
    std::vector<double> grad(logits.size());
    if (nw.head_kind == LayerKind::SoftmaxXentHead) {
        for (int s = 0; s < batch.size; ++s) {
            const double* l = logits.data() + static_cast<size_t>(s) * oc;
            double mx = *std::max_element(l, l + oc);
            double sum = 0.0;
            for (int j = 0; j < oc; ++j) sum += std::exp(l[j] - mx);
            for (int j = 0; j < oc; ++j) {
                double p = std::exp(l[j] - mx) / sum;
                grad[static_cast<size_t>(s) * oc + j] =
                    (p - (j == batch.labels[s] ? 1.0 : 0.0)) / batch.size;
            }
        }
    } else {
        for (size_t i = 0; i < logits.size(); ++i)
            grad[i] = 2.0 * (logits[i] - batch.targets[i]) / batch.size;
    }

    // Walk the layers backwards, skipping the head.
    for (int li = static_cast<int>(nw.layers.size()) - 1; li >= 0; --li) {
        const auto& st = nw.layers[li];
        if (net::is_head(st.spec.kind)) continue;
        const std::vector<double>& x = tape[li];
        size_t icount = fxp::shape_count(st.in_shape);
        size_t ocount = fxp::shape_count(st.out_shape);
        switch (st.spec.kind) {
            case LayerKind::Dense: {
                int in = st.in_shape[0], out = st.spec.units;
                g.dw[li].assign(st.w.size(), 0.0);
                if (st.spec.bias) g.db[li].assign(st.b.size(), 0.0);
                std::vector<double> dx(x.size(), 0.0);
                for (int s = 0; s < batch.size; ++s) {
                    const double* xs = x.data() + static_cast<size_t>(s) * in;
                    const double* gs = grad.data() + static_cast<size_t>(s) * out;
                    for (int j = 0; j < out; ++j) {
                        double gj = gs[j];
                        if (st.spec.bias) g.db[li][j] += gj;
                        double* wr = g.dw[li].data() + static_cast<size_t>(j) * in;
                        const double* w = st.w.data() + static_cast<size_t>(j) * in;
                        double* dxs = dx.data() + static_cast<size_t>(s) * in;
                        for (int i = 0; i < in; ++i) {
                            wr[i] += gj * xs[i];
                            dxs[i] += gj * w[i];
                        }
                    }
                }
                grad = std::move(dx);
                break;
            }
            case LayerKind::Conv2d: {
                int ic = st.in_shape[0], ih = st.in_shape[1], iw = st.in_shape[2];
                int ocn = st.out_shape[0], oh = st.out_shape[1], ow = st.out_shape[2];
                int kh = st.spec.kh, kw = st.spec.kw, stride = st.spec.stride;
                g.dw[li].assign(st.w.size(), 0.0);
                if (st.spec.bias) g.db[li].assign(st.b.size(), 0.0);
                std::vector<double> dx(x.size(), 0.0);
                for (int s = 0; s < batch.size; ++s) {
                    const double* xs = x.data() + static_cast<size_t>(s) * icount;
                    const double* gs = grad.data() + static_cast<size_t>(s) * ocount;
                    double* dxs = dx.data() + static_cast<size_t>(s) * icount;
                    for (int o = 0; o < ocn; ++o)
                        for (int r = 0; r < oh; ++r)
                            for (int c = 0; c < ow; ++c) {
                                double go = gs[(static_cast<size_t>(o) * oh + r) * ow + c];
                                if (st.spec.bias) g.db[li][o] += go;
                                for (int i = 0; i < ic; ++i)
                                    for (int u = 0; u < kh; ++u)
                                        for (int v = 0; v < kw; ++v) {
                                            size_t xi = (static_cast<size_t>(i) * ih +
                                                         r * stride + u) *
                                                            iw +
                                                        c * stride + v;
                                            size_t wi = ((static_cast<size_t>(o) * ic + i) * kh +
                                                         u) *
                                                            kw +
                                                        v;
                                            g.dw[li][wi] += go * xs[xi];
                                            dxs[xi] += go * st.w[wi];
                                        }
                            }
                }
                grad = std::move(dx);
                break;
            }
            case LayerKind::Relu: {
                for (size_t i = 0; i < grad.size(); ++i)
                    if (x[i] <= 0.0) grad[i] = 0.0;
                break;
            }
            case LayerKind::Flatten:
                break;
            default:
                break;
        }
    }
    return g;
}

}  // namespace qzoff::bp
