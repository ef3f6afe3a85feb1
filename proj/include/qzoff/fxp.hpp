#pragma once

// Fixed-point numeric core: symmetric per-tensor quantization and
// bit-exact multiply-shift re-quantization.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace qzoff::fxp {

// Symmetric b-bit range [-qmax, qmax]; -2^(b-1) is never produced so
// negation cannot overflow.
struct QuantParams {
    double delta = 1.0;
    int bits = 16;
    int32_t qmax = 32767;

    static QuantParams from_delta(double delta, int bits) {
        if (!(delta > 0.0)) throw std::invalid_argument("QuantParams: delta must be > 0");
        if (bits != 8 && bits != 16) throw std::invalid_argument("QuantParams: bits must be 8 or 16");
        return QuantParams{delta, bits, static_cast<int32_t>((1 << (bits - 1)) - 1)};
    }
    // delta from the max absolute value to represent.
    static QuantParams from_max_abs(double max_abs, int bits) {
        int32_t qmax = static_cast<int32_t>((1 << (bits - 1)) - 1);
        if (!(max_abs > 0.0)) max_abs = 1.0;  // degenerate all-zero tensor
        return QuantParams{max_abs / qmax, bits, qmax};
    }
};

// Integer tensor plus its per-tensor scale. Stored values fit the
// symmetric range of params regardless of the underlying int32 storage.
struct QTensor {
    std::vector<int32_t> data;
    std::vector<int> shape;
    QuantParams params;

    size_t size() const { return data.size(); }
};

inline size_t shape_count(const std::vector<int>& shape) {
    size_t n = 1;
    for (int d : shape) n *= static_cast<size_t>(d);
    return n;
}

// m / 2^k approximates a positive real factor; product acc*m is held in
// 64 bits before the shift. m fits 31 bits; k may exceed 31 (up to 62) so
// that tiny factors keep full multiplier precision.
struct RequantMultiplier {
    uint32_t m = 0;
    int k = 0;
};

inline int32_t clamp_q(int64_t v, int32_t qmax) {
    if (v > qmax) return qmax;
    if (v < -qmax) return -qmax;
    return static_cast<int32_t>(v);
}

// Round-half-to-even, matching the default FP rounding of the target
// hardware's quantizers.
inline int64_t round_half_even(double v) {
    return static_cast<int64_t>(std::nearbyint(v));
}

inline QTensor quantize(std::span<const double> x, std::vector<int> shape, const QuantParams& params) {
    if (shape_count(shape) != x.size())
        throw std::invalid_argument("quantize: shape does not match element count");
    QTensor t;
    t.shape = std::move(shape);
    t.params = params;
    t.data.resize(x.size());
    for (size_t i = 0; i < x.size(); ++i) {
        if (!std::isfinite(x[i]))
            throw std::domain_error("quantize: non-finite input at index " + std::to_string(i));
        t.data[i] = clamp_q(round_half_even(x[i] / params.delta), params.qmax);
    }
    return t;
}

inline QTensor quantize(std::span<const double> x, const QuantParams& params) {
    return quantize(x, {static_cast<int>(x.size())}, params);
}

inline std::vector<double> dequantize(const QTensor& t) {
    std::vector<double> out(t.data.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = t.data[i] * t.params.delta;
    return out;
}

namespace detail {
// Largest k <= 62 such that round(factor * 2^k) fits in 31 bits; a 32-bit
// accumulator times a 31-bit m plus the 2^(k-1) rounding pre-add stays
// inside int64 for every k in range.
inline RequantMultiplier derive_any(double factor) {
    constexpr int64_t kMaxM = (int64_t{1} << 31) - 1;
    for (int k = 62; k >= 0; --k) {
        double p = std::ldexp(factor, k);
        if (p > static_cast<double>(kMaxM) + 0.5) continue;  // m would not fit 31 bits
        int64_t m = llround(p);
        if (m <= kMaxM) {
            if (m <= 0) throw std::domain_error("derive_multiplier: factor too small to represent");
            return RequantMultiplier{static_cast<uint32_t>(m), k};
        }
    }
    throw std::domain_error("derive_multiplier: factor too large to represent");
}
}  // namespace detail

inline RequantMultiplier derive_multiplier(double factor) {
    if (!(factor > 0.0) || factor > 1.0)
        throw std::domain_error("derive_multiplier: factor must be in (0, 1]");
    return detail::derive_any(factor);
}

// Extension used by the weight-update chain, where eta*delta_z/delta_w can
// exceed 1: the same m/2^k form with a smaller shift.
inline RequantMultiplier derive_multiplier_wide(double factor) {
    if (!(factor > 0.0)) throw std::domain_error("derive_multiplier_wide: factor must be > 0");
    return detail::derive_any(factor);
}

// (acc*m + 2^(k-1)) >> k, saturated to the output range. The pre-add makes
// the shift round half away from the floor, i.e. round-half-up on the
// scaled value; product is held in 64 bits.
inline int32_t requantize_one(int32_t acc, const RequantMultiplier& mult, int32_t qmax) {
    int64_t p = static_cast<int64_t>(acc) * static_cast<int64_t>(mult.m);
    if (mult.k > 0) p += int64_t{1} << (mult.k - 1);
    p >>= mult.k;
    return clamp_q(p, qmax);
}

inline QTensor requantize(std::span<const int32_t> acc, std::vector<int> shape,
                          const RequantMultiplier& mult, const QuantParams& out_params) {
    if (shape_count(shape) != acc.size())
        throw std::invalid_argument("requantize: shape does not match element count");
    QTensor t;
    t.shape = std::move(shape);
    t.params = out_params;
    t.data.resize(acc.size());
    for (size_t i = 0; i < acc.size(); ++i)
        t.data[i] = requantize_one(acc[i], mult, out_params.qmax);
    return t;
}

inline QTensor requantize(std::span<const int32_t> acc, const RequantMultiplier& mult,
                          const QuantParams& out_params) {
    return requantize(acc, {static_cast<int>(acc.size())}, mult, out_params);
}

}  // namespace qzoff::fxp
