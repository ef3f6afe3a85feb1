#pragma once

// Minimal forward-only network executor. The same parameter set runs in
// float mode (double precision reference) and quantized mode (integer
// matmuls, 32-bit accumulation, multiply-shift re-quantization between
// layers).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "qzoff/errors.hpp"
#include "qzoff/fxp.hpp"
#include "qzoff/rng.hpp"

namespace qzoff::net {

enum class LayerKind { Dense, Conv2d, Relu, Flatten, SoftmaxXentHead, MseHead };

enum class Mode { Float, Quantized };

struct LayerSpec {
    LayerKind kind;
    bool trainable = false;
    bool bias = true;
    int units = 0;                            // dense
    int out_channels = 0, kh = 0, kw = 0;     // conv2d
    int stride = 1;

    static LayerSpec dense(int units, bool trainable = true, bool bias = true) {
        LayerSpec s{LayerKind::Dense};
        s.units = units;
        s.trainable = trainable;
        s.bias = bias;
        return s;
    }
    static LayerSpec conv2d(int out_channels, int kh, int kw, int stride = 1,
                            bool trainable = true, bool bias = true) {
        LayerSpec s{LayerKind::Conv2d};
        s.out_channels = out_channels;
        s.kh = kh;
        s.kw = kw;
        s.stride = stride;
        s.trainable = trainable;
        s.bias = bias;
        return s;
    }
    static LayerSpec relu() { return LayerSpec{LayerKind::Relu}; }
    static LayerSpec flatten() { return LayerSpec{LayerKind::Flatten}; }
    static LayerSpec softmax_xent_head() { return LayerSpec{LayerKind::SoftmaxXentHead}; }
    static LayerSpec mse_head() { return LayerSpec{LayerKind::MseHead}; }
};

inline bool is_compute(LayerKind k) { return k == LayerKind::Dense || k == LayerKind::Conv2d; }
inline bool is_head(LayerKind k) { return k == LayerKind::SoftmaxXentHead || k == LayerKind::MseHead; }

struct Batch {
    std::vector<double> inputs;   // size × input count, row-major
    std::vector<int> labels;      // classification targets
    std::vector<double> targets;  // regression targets (mse head), size × out count
    int size = 0;
};

struct LayerState {
    LayerSpec spec;
    std::vector<int> in_shape, out_shape;
    std::string name;

    // Float-mode parameters (reference path).
    std::vector<double> w, b;

    // Quantized-mode parameters. b_q is a 32-bit bias at scale
    // delta_w * incoming activation delta.
    fxp::QTensor w_q;
    std::vector<int32_t> b_q;
    double act_in_delta = 0.0;
    double act_out_delta = 0.0;
    fxp::RequantMultiplier act_mult;
    bool final_compute = false;  // output leaves the integer domain as logits
};

struct Network {
    std::vector<int> input_shape;
    std::vector<LayerState> layers;
    LayerKind head_kind = LayerKind::SoftmaxXentHead;
    int out_count = 0;  // logits / prediction width
    int weight_bits = 16;
    int act_bits = 8;
    double act_in_delta = 0.0;
    bool quantized_ready = false;
    bool calibrated = false;

    mutable long forward_calls = 0;       // loss evaluations, any mode
    mutable size_t peak_act_elems = 0;    // quantized-path activation high-water mark

    int input_count() const { return static_cast<int>(fxp::shape_count(input_shape)); }

    std::vector<size_t> trainable_layer_indices() const {
        std::vector<size_t> idx;
        for (size_t i = 0; i < layers.size(); ++i)
            if (is_compute(layers[i].spec.kind) && layers[i].spec.trainable) idx.push_back(i);
        return idx;
    }
    size_t trainable_weight_count() const {
        size_t n = 0;
        for (size_t i : trainable_layer_indices()) n += layers[i].w.size();
        return n;
    }
};

inline std::vector<int> conv_out_shape(const std::vector<int>& in, const LayerSpec& s) {
    if (in.size() != 3)
        throw ConfigError("conv2d requires CxHxW input, got rank " + std::to_string(in.size()));
    int oh = (in[1] - s.kh) / s.stride + 1;
    int ow = (in[2] - s.kw) / s.stride + 1;
    if (s.kh <= 0 || s.kw <= 0 || oh <= 0 || ow <= 0)
        throw ConfigError("conv2d kernel does not fit input " + std::to_string(in[1]) + "x" +
                          std::to_string(in[2]));
    return {s.out_channels, oh, ow};
}

// Shape-checks the layer stack and sets up per-layer state. Parameters are
// left zero; call init_params or load a checkpoint.
inline Network build_network(std::vector<int> input_shape, const std::vector<LayerSpec>& specs) {
    Network net;
    net.input_shape = std::move(input_shape);
    std::vector<int> cur = net.input_shape;
    bool head_seen = false;
    int dense_i = 0, conv_i = 0;
    for (const LayerSpec& s : specs) {
        if (head_seen) throw ConfigError("no layers may follow the loss head");
        LayerState st;
        st.spec = s;
        st.in_shape = cur;
        switch (s.kind) {
            case LayerKind::Dense: {
                if (cur.size() != 1)
                    throw ConfigError("dense layer requires flat input (use flatten)");
                if (s.units <= 0) throw ConfigError("dense layer needs units > 0");
                st.out_shape = {s.units};
                st.w.assign(static_cast<size_t>(s.units) * cur[0], 0.0);
                if (s.bias) st.b.assign(s.units, 0.0);
                st.name = "dense" + std::to_string(dense_i++);
                break;
            }
            case LayerKind::Conv2d: {
                st.out_shape = conv_out_shape(cur, s);
                st.w.assign(static_cast<size_t>(s.out_channels) * cur[0] * s.kh * s.kw, 0.0);
                if (s.bias) st.b.assign(s.out_channels, 0.0);
                st.name = "conv" + std::to_string(conv_i++);
                break;
            }
            case LayerKind::Relu:
                st.out_shape = cur;
                st.name = "relu";
                break;
            case LayerKind::Flatten:
                st.out_shape = {static_cast<int>(fxp::shape_count(cur))};
                st.name = "flatten";
                break;
            case LayerKind::SoftmaxXentHead:
            case LayerKind::MseHead:
                if (cur.size() != 1) throw ConfigError("loss head requires flat input");
                st.out_shape = cur;
                st.name = "head";
                net.head_kind = s.kind;
                net.out_count = cur[0];
                head_seen = true;
                break;
        }
        cur = st.out_shape;
        net.layers.push_back(std::move(st));
    }
    if (!head_seen) throw ConfigError("network must end with a loss head");
    // Mark the last compute layer: its accumulator is dequantized straight
    // to float logits instead of an 8-bit activation.
    for (auto it = net.layers.rbegin(); it != net.layers.rend(); ++it) {
        if (is_compute(it->spec.kind)) {
            it->final_compute = true;
            break;
        }
    }
    return net;
}

// He-style init on weights, zero biases. last_layer_scale inflates the
// final compute layer, which controls its w_max and therefore its
// quantization step.
inline void init_params(Network& net, uint64_t seed, double last_layer_scale = 1.0) {
    rng::CounterRng gen{rng::derive_seed(seed, 0xA11)};
    uint64_t ctr = 0;
    for (auto& st : net.layers) {
        if (!is_compute(st.spec.kind)) continue;
        size_t fan_in = st.w.size() / (st.spec.kind == LayerKind::Dense
                                           ? static_cast<size_t>(st.spec.units)
                                           : static_cast<size_t>(st.spec.out_channels));
        double scale = std::sqrt(2.0 / static_cast<double>(fan_in));
        if (st.final_compute) scale *= last_layer_scale;
        for (auto& v : st.w) v = scale * gen.normal(ctr++);
        for (auto& v : st.b) v = 0.0;
    }
}

// --- float path -------------------------------------------------------

namespace detail {

inline void dense_forward_f(const LayerState& st, std::span<const double> x, std::span<double> y) {
    int in = st.in_shape[0], out = st.spec.units;
    for (int j = 0; j < out; ++j) {
        double acc = st.spec.bias ? st.b[j] : 0.0;
        const double* wr = st.w.data() + static_cast<size_t>(j) * in;
        for (int i = 0; i < in; ++i) acc += wr[i] * x[i];
        y[j] = acc;
    }
}

inline void conv_forward_f(const LayerState& st, std::span<const double> x, std::span<double> y) {
    int ic = st.in_shape[0], ih = st.in_shape[1], iw = st.in_shape[2];
    int oc = st.out_shape[0], oh = st.out_shape[1], ow = st.out_shape[2];
    int kh = st.spec.kh, kw = st.spec.kw, stride = st.spec.stride;
    for (int o = 0; o < oc; ++o)
        for (int r = 0; r < oh; ++r)
            for (int c = 0; c < ow; ++c) {
                double acc = st.spec.bias ? st.b[o] : 0.0;
                for (int i = 0; i < ic; ++i)
                    for (int u = 0; u < kh; ++u)
                        for (int v = 0; v < kw; ++v) {
                            double xv = x[(static_cast<size_t>(i) * ih + r * stride + u) * iw +
                                          c * stride + v];
                            double wv = st.w[((static_cast<size_t>(o) * ic + i) * kh + u) * kw + v];
                            acc += xv * wv;
                        }
                y[(static_cast<size_t>(o) * oh + r) * ow + c] = acc;
            }
}

}  // namespace detail

// Float forward producing logits for the whole batch; optionally records
// every layer input (the tape backprop consumes).
inline std::vector<double> forward_logits_float(const Network& net, const Batch& batch,
                                                std::vector<std::vector<double>>* tape = nullptr) {
    size_t in_count = net.input_count();
    if (batch.inputs.size() != in_count * static_cast<size_t>(batch.size))
        throw ConfigError("batch input size does not match network input shape");
    std::vector<double> cur = batch.inputs;
    for (const auto& st : net.layers) {
        if (is_head(st.spec.kind)) break;
        if (tape) tape->push_back(cur);
        size_t oc = fxp::shape_count(st.out_shape);
        switch (st.spec.kind) {
            case LayerKind::Dense: {
                std::vector<double> out(oc * batch.size);
                size_t icount = fxp::shape_count(st.in_shape);
                for (int s = 0; s < batch.size; ++s)
                    detail::dense_forward_f(st, {cur.data() + s * icount, icount},
                                            {out.data() + s * oc, oc});
                cur = std::move(out);
                break;
            }
            case LayerKind::Conv2d: {
                std::vector<double> out(oc * batch.size);
                size_t icount = fxp::shape_count(st.in_shape);
                for (int s = 0; s < batch.size; ++s)
                    detail::conv_forward_f(st, {cur.data() + s * icount, icount},
                                           {out.data() + s * oc, oc});
                cur = std::move(out);
                break;
            }
            case LayerKind::Relu:
                for (auto& v : cur) v = std::max(0.0, v);
                break;
            case LayerKind::Flatten:
                break;  // identity on the flat buffer
            default:
                break;
        }
    }
    return cur;
}

// --- quantized path -----------------------------------------------------

// Freeze per-layer weight scales from the current float weights.
inline void quantize_weights(Network& net, int weight_bits) {
    net.weight_bits = weight_bits;
    for (auto& st : net.layers) {
        if (!is_compute(st.spec.kind)) continue;
        double wmax = 0.0;
        for (double v : st.w) wmax = std::max(wmax, std::fabs(v));
        auto qp = fxp::QuantParams::from_max_abs(wmax, weight_bits);
        std::vector<int> wshape = st.spec.kind == LayerKind::Dense
                                      ? std::vector<int>{st.spec.units, st.in_shape[0]}
                                      : std::vector<int>{st.spec.out_channels, st.in_shape[0],
                                                         st.spec.kh, st.spec.kw};
        st.w_q = fxp::quantize(st.w, wshape, qp);
    }
    net.quantized_ready = true;
    net.calibrated = false;
}

// Overwrite float weights from the quantized side (after quantized training).
inline void sync_float_from_quant(Network& net) {
    for (auto& st : net.layers) {
        if (!is_compute(st.spec.kind)) continue;
        for (size_t i = 0; i < st.w.size(); ++i) st.w[i] = st.w_q.data[i] * st.w_q.params.delta;
    }
}

// One-shot static calibration: activation scales from a float-mode pass on
// a calibration batch, then frozen for the whole training run.
inline void calibrate_activations(Network& net, const Batch& calib, int act_bits = 8) {
    if (!net.quantized_ready) throw ConfigError("calibrate: quantize weights first");
    net.act_bits = act_bits;
    int aqmax = (1 << (act_bits - 1)) - 1;
    double in_max = 0.0;
    for (double v : calib.inputs) in_max = std::max(in_max, std::fabs(v));
    net.act_in_delta = (in_max > 0 ? in_max : 1.0) / aqmax;

    std::vector<std::vector<double>> tape;
    forward_logits_float(net, calib, &tape);
    // tape[i] is the input of layer i; a compute layer's output range is the
    // next layer's input (pre-relu ranges are what the requant must cover).
    double flowing_delta = net.act_in_delta;
    for (size_t i = 0; i < net.layers.size(); ++i) {
        auto& st = net.layers[i];
        if (!is_compute(st.spec.kind)) continue;
        st.act_in_delta = flowing_delta;
        double bias_scale = st.w_q.params.delta * st.act_in_delta;
        st.b_q.assign(st.spec.bias ? st.b.size() : 0, 0);
        for (size_t j = 0; j < st.b_q.size(); ++j) {
            double v = st.b[j] / bias_scale;
            st.b_q[j] = static_cast<int32_t>(std::clamp<double>(
                std::nearbyint(v), std::numeric_limits<int32_t>::min(),
                std::numeric_limits<int32_t>::max()));
        }
        if (!st.final_compute) {
            double out_max = 0.0;
            if (i + 1 < tape.size()) {
                for (double v : tape[i + 1]) out_max = std::max(out_max, std::fabs(v));
            }
            st.act_out_delta = (out_max > 0 ? out_max : 1.0) / aqmax;
            st.act_mult = fxp::derive_multiplier_wide(bias_scale / st.act_out_delta);
            flowing_delta = st.act_out_delta;
        }
    }
    net.calibrated = true;
}

namespace detail {

inline int32_t sat_acc(int64_t v) {
    constexpr int64_t lo = std::numeric_limits<int32_t>::min();
    constexpr int64_t hi = std::numeric_limits<int32_t>::max();
    return static_cast<int32_t>(std::clamp(v, lo, hi));
}

}  // namespace detail

// Quantized forward: int8 activations between layers, int32 accumulators,
// the final compute layer dequantized straight to float logits.
inline std::vector<double> forward_logits_quant(const Network& net, const Batch& batch) {
    if (!net.quantized_ready || !net.calibrated)
        throw ConfigError("quantized forward requires quantized weights and calibration");
    int aqmax = (1 << (net.act_bits - 1)) - 1;
    size_t in_count = net.input_count();
    if (batch.inputs.size() != in_count * static_cast<size_t>(batch.size))
        throw ConfigError("batch input size does not match network input shape");

    size_t alive = 0;
    auto track = [&](size_t added) {
        alive += added;
        net.peak_act_elems = std::max(net.peak_act_elems, alive);
    };

    std::vector<int32_t> cur(in_count * batch.size);
    track(cur.size());
    for (size_t i = 0; i < cur.size(); ++i)
        cur[i] = fxp::clamp_q(fxp::round_half_even(batch.inputs[i] / net.act_in_delta), aqmax);

    std::vector<double> logits;
    for (const auto& st : net.layers) {
        if (is_head(st.spec.kind)) break;
        size_t icount = fxp::shape_count(st.in_shape);
        size_t ocount = fxp::shape_count(st.out_shape);
        switch (st.spec.kind) {
            case LayerKind::Dense: {
                int in = st.in_shape[0], out = st.spec.units;
                if (st.final_compute) {
                    logits.assign(ocount * batch.size, 0.0);
                    track(logits.size());
                    double scale = st.w_q.params.delta * st.act_in_delta;
                    for (int s = 0; s < batch.size; ++s)
                        for (int j = 0; j < out; ++j) {
                            int64_t acc = st.spec.bias ? st.b_q[j] : 0;
                            const int32_t* wr = st.w_q.data.data() + static_cast<size_t>(j) * in;
                            const int32_t* xr = cur.data() + static_cast<size_t>(s) * in;
                            for (int i = 0; i < in; ++i) acc += int64_t{wr[i]} * xr[i];
                            logits[static_cast<size_t>(s) * out + j] =
                                detail::sat_acc(acc) * scale;
                        }
                    alive -= cur.size();
                    cur.clear();
                } else {
                    std::vector<int32_t> next(ocount * batch.size);
                    track(next.size());
                    for (int s = 0; s < batch.size; ++s)
                        for (int j = 0; j < out; ++j) {
                            int64_t acc = st.spec.bias ? st.b_q[j] : 0;
                            const int32_t* wr = st.w_q.data.data() + static_cast<size_t>(j) * in;
                            const int32_t* xr = cur.data() + static_cast<size_t>(s) * in;
                            for (int i = 0; i < in; ++i) acc += int64_t{wr[i]} * xr[i];
                            next[static_cast<size_t>(s) * out + j] =
                                fxp::requantize_one(detail::sat_acc(acc), st.act_mult, aqmax);
                        }
                    alive -= cur.size();
                    cur = std::move(next);
                }
                break;
            }
            case LayerKind::Conv2d: {
                int ic = st.in_shape[0], ih = st.in_shape[1], iw = st.in_shape[2];
                int oc = st.out_shape[0], oh = st.out_shape[1], ow = st.out_shape[2];
                int kh = st.spec.kh, kw = st.spec.kw, stride = st.spec.stride;
                std::vector<int32_t> next;
                double scale = st.w_q.params.delta * st.act_in_delta;
                if (st.final_compute) {
                    logits.assign(ocount * batch.size, 0.0);
                    track(logits.size());
                } else {
                    next.assign(ocount * batch.size, 0);
                    track(next.size());
                }
                for (int s = 0; s < batch.size; ++s) {
                    const int32_t* x = cur.data() + static_cast<size_t>(s) * icount;
                    for (int o = 0; o < oc; ++o)
                        for (int r = 0; r < oh; ++r)
                            for (int c = 0; c < ow; ++c) {
                                int64_t acc = st.spec.bias ? st.b_q[o] : 0;
                                for (int i = 0; i < ic; ++i)
                                    for (int u = 0; u < kh; ++u)
                                        for (int v = 0; v < kw; ++v)
                                            acc += int64_t{x[(static_cast<size_t>(i) * ih +
                                                              r * stride + u) *
                                                                 iw +
                                                             c * stride + v]} *
                                                   st.w_q.data[((static_cast<size_t>(o) * ic + i) *
                                                                    kh +
                                                                u) *
                                                                   kw +
                                                               v];
                                size_t oi = static_cast<size_t>(s) * ocount +
                                            (static_cast<size_t>(o) * oh + r) * ow + c;
                                if (st.final_compute)
                                    logits[oi] = detail::sat_acc(acc) * scale;
                                else
                                    next[oi] = fxp::requantize_one(detail::sat_acc(acc),
                                                                   st.act_mult, aqmax);
                            }
                }
                alive -= cur.size();
                if (st.final_compute)
                    cur.clear();
                else
                    cur = std::move(next);
                break;
            }
            case LayerKind::Relu: {
                if (!logits.empty()) {
                    std::vector<double> next(logits.size());
                    track(next.size());
                    for (size_t i = 0; i < logits.size(); ++i) next[i] = std::max(0.0, logits[i]);
                    alive -= logits.size();
                    logits = std::move(next);
                } else {
                    std::vector<int32_t> next(cur.size());
                    track(next.size());
                    for (size_t i = 0; i < cur.size(); ++i) next[i] = std::max(0, cur[i]);
                    alive -= cur.size();
                    cur = std::move(next);
                }
                break;
            }
            case LayerKind::Flatten:
                break;
            default:
                break;
        }
    }
    return logits;
}

// --- loss heads ---------------------------------------------------------

inline double loss_from_logits(const Network& net, std::span<const double> logits,
                               const Batch& batch) {
    int oc = net.out_count;
    double total = 0.0;
    if (net.head_kind == LayerKind::SoftmaxXentHead) {
        if (static_cast<int>(batch.labels.size()) != batch.size)
            throw DataError("softmax head requires one label per sample");
        for (int s = 0; s < batch.size; ++s) {
            int y = batch.labels[s];
            if (y < 0 || y >= oc) throw DataError("label out of range");
            const double* l = logits.data() + static_cast<size_t>(s) * oc;
            double mx = *std::max_element(l, l + oc);
            double sum = 0.0;
            for (int j = 0; j < oc; ++j) sum += std::exp(l[j] - mx);
            total += std::log(sum) - (l[y] - mx);
        }
    } else {
        if (batch.targets.size() != static_cast<size_t>(batch.size) * oc)
            throw DataError("mse head requires one target row per sample");
        for (int s = 0; s < batch.size; ++s)
            for (int j = 0; j < oc; ++j) {
                double d = logits[static_cast<size_t>(s) * oc + j] -
                           batch.targets[static_cast<size_t>(s) * oc + j];
                total += d * d;
            }
    }
    return total / batch.size;
}

inline std::vector<double> forward_logits(const Network& net, const Batch& batch, Mode mode) {
    return mode == Mode::Float ? forward_logits_float(net, batch) : forward_logits_quant(net, batch);
}

inline double forward_loss(const Network& net, const Batch& batch, Mode mode) {
    ++net.forward_calls;
    auto logits = forward_logits(net, batch, mode);
    double loss = loss_from_logits(net, logits, batch);
    if (!std::isfinite(loss)) throw NumericError("forward_loss: non-finite loss");
    return loss;
}

inline double accuracy(const Network& net, const Batch& batch, Mode mode) {
    auto logits = forward_logits(net, batch, mode);
    int oc = net.out_count, correct = 0;
    for (int s = 0; s < batch.size; ++s) {
        const double* l = logits.data() + static_cast<size_t>(s) * oc;
        int arg = static_cast<int>(std::max_element(l, l + oc) - l);
        if (arg == batch.labels[s]) ++correct;
    }
    return static_cast<double>(correct) / batch.size;
}

// --- memory accounting ----------------------------------------------------

enum class TrainingKind { Inference, Bp, Ff };

// Accounting model, not a measurement: activations are 2 bytes in float
// mode (fp16-equivalent) and 1 byte quantized; the per-layer gradient
// buffer is a 32-bit accumulator of the largest trainable tensor.
inline size_t scratch_memory_bytes(const Network& net, int batch_size, TrainingKind training,
                                   Mode mode) {
    size_t ew = mode == Mode::Quantized ? 1 : 2;
    size_t b = static_cast<size_t>(batch_size);
    std::vector<size_t> acts;  // input tensor + every dense/conv/relu output
    acts.push_back(static_cast<size_t>(net.input_count()));
    size_t max_pair = 0, prev = acts[0];
    for (const auto& st : net.layers) {
        if (is_head(st.spec.kind) || st.spec.kind == LayerKind::Flatten) continue;
        size_t oc = fxp::shape_count(st.out_shape);
        acts.push_back(oc);
        max_pair = std::max(max_pair, prev + oc);
        prev = oc;
    }
    size_t act_bytes;
    if (training == TrainingKind::Bp) {
        size_t sum = 0;
        for (size_t a : acts) sum += a;
        act_bytes = sum * b * ew;
    } else {
        act_bytes = max_pair * b * ew;
    }
    size_t grad_bytes = 0;
    if (training != TrainingKind::Inference) {
        size_t largest = 0;
        for (size_t i : net.trainable_layer_indices())
            largest = std::max(largest, net.layers[i].w.size());
        grad_bytes = largest * 4;
    }
    return act_bytes + grad_bytes;
}

// Persistent weight storage under the given mode's width.
inline size_t weight_memory_bytes(const Network& net, Mode mode) {
    size_t ew = mode == Mode::Quantized ? static_cast<size_t>(net.weight_bits) / 8 : 2;
    size_t n = 0;
    for (const auto& st : net.layers)
        if (is_compute(st.spec.kind)) n += (st.w.size() + st.b.size()) * ew;
    return n;
}

}  // namespace qzoff::net
