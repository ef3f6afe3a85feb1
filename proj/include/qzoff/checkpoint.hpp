#pragma once

// Binary checkpoint: magic "QZOF", version u16, tensor count u32, then per
// tensor: name (u32 length + bytes), bit-width u8, delta f64 LE, shape
// (u32 rank + u32 dims), raw little-endian integers (int8 for 8-bit,
// int16 otherwise), and an optional sparse-mask bitset. Round-trips are
// bit-exact.

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "qzoff/enhancements.hpp"
#include "qzoff/errors.hpp"
#include "qzoff/net.hpp"

namespace qzoff::ckpt {

constexpr uint16_t kVersion = 1;

namespace detail {

template <typename T>
void put(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw DataError("checkpoint: truncated file");
    return v;
}

inline void put_string(std::ostream& os, const std::string& s) {
    put<uint32_t>(os, static_cast<uint32_t>(s.size()));
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string get_string(std::istream& is) {
    uint32_t n = get<uint32_t>(is);
    std::string s(n, '\0');
    is.read(s.data(), n);
    if (!is) throw DataError("checkpoint: truncated string");
    return s;
}

struct TensorRecord {
    std::string name;
    uint8_t bits;
    double delta;
    std::vector<int> shape;
    std::vector<int32_t> data;
    std::vector<uint8_t> mask;  // empty = no mask
};

inline void put_tensor(std::ostream& os, const TensorRecord& t) {
    put_string(os, t.name);
    put<uint8_t>(os, t.bits);
    put<double>(os, t.delta);
    put<uint32_t>(os, static_cast<uint32_t>(t.shape.size()));
    for (int d : t.shape) put<uint32_t>(os, static_cast<uint32_t>(d));
    if (t.bits <= 8) {
        for (int32_t v : t.data) put<int8_t>(os, static_cast<int8_t>(v));
    } else {
        for (int32_t v : t.data) put<int16_t>(os, static_cast<int16_t>(v));
    }
    put<uint8_t>(os, t.mask.empty() ? 0 : 1);
    if (!t.mask.empty()) {
        std::vector<uint8_t> packed((t.mask.size() + 7) / 8, 0);
        for (size_t i = 0; i < t.mask.size(); ++i)
            if (t.mask[i]) packed[i / 8] |= static_cast<uint8_t>(1u << (i % 8));
        os.write(reinterpret_cast<const char*>(packed.data()),
                 static_cast<std::streamsize>(packed.size()));
    }
}

inline TensorRecord get_tensor(std::istream& is) {
    TensorRecord t;
    t.name = get_string(is);
    t.bits = get<uint8_t>(is);
    t.delta = get<double>(is);
    uint32_t rank = get<uint32_t>(is);
    size_t count = 1;
    for (uint32_t i = 0; i < rank; ++i) {
        uint32_t d = get<uint32_t>(is);
        t.shape.push_back(static_cast<int>(d));
        count *= d;
    }
    t.data.resize(count);
    if (t.bits <= 8)
        for (auto& v : t.data) v = get<int8_t>(is);
    else
        for (auto& v : t.data) v = get<int16_t>(is);
    if (get<uint8_t>(is)) {
        std::vector<uint8_t> packed((count + 7) / 8);
        is.read(reinterpret_cast<char*>(packed.data()),
                static_cast<std::streamsize>(packed.size()));
        if (!is) throw DataError("checkpoint: truncated mask");
        t.mask.resize(count);
        for (size_t i = 0; i < count; ++i)
            t.mask[i] = (packed[i / 8] >> (i % 8)) & 1u;
    }
    return t;
}

inline fxp::QTensor quantize_fresh(const std::vector<double>& v, const std::vector<int>& shape,
                                   int bits) {
    double mx = 0.0;
    for (double x : v) mx = std::max(mx, std::fabs(x));
    return fxp::quantize(v, shape, fxp::QuantParams::from_max_abs(mx, bits));
}

}  // namespace detail

// Writes via a temp file and rename so readers never see a partial file.
inline void save_checkpoint(const net::Network& nw, const std::string& path,
                            const enh::SparseMask* mask = nullptr) {
    namespace fs = std::filesystem;
    fs::path tmp = fs::path(path).concat(".tmp");
    {
        std::ofstream os(tmp, std::ios::binary);
        if (!os) throw DataError("checkpoint: cannot open " + tmp.string() + " for writing");
        os.write("QZOF", 4);
        detail::put<uint16_t>(os, kVersion);

        std::vector<detail::TensorRecord> tensors;
        size_t mask_layer = 0;
        auto trainable = nw.trainable_layer_indices();
        for (size_t li = 0; li < nw.layers.size(); ++li) {
            const auto& st = nw.layers[li];
            if (!net::is_compute(st.spec.kind)) continue;
            detail::TensorRecord tw;
            tw.name = st.name + ".w";
            std::vector<int> wshape = st.spec.kind == net::LayerKind::Dense
                                          ? std::vector<int>{st.spec.units, st.in_shape[0]}
                                          : std::vector<int>{st.spec.out_channels, st.in_shape[0],
                                                             st.spec.kh, st.spec.kw};
            if (nw.quantized_ready) {
                tw.bits = static_cast<uint8_t>(st.w_q.params.bits);
                tw.delta = st.w_q.params.delta;
                tw.shape = st.w_q.shape;
                tw.data = st.w_q.data;
            } else {
                auto q = detail::quantize_fresh(st.w, wshape, 16);
                tw.bits = 16;
                tw.delta = q.params.delta;
                tw.shape = q.shape;
                tw.data = std::move(q.data);
            }
            if (mask && st.spec.trainable) {
                for (size_t t = 0; t < trainable.size(); ++t)
                    if (trainable[t] == li) mask_layer = t;
                tw.mask = mask->layers[mask_layer];
            }
            tensors.push_back(std::move(tw));
            if (st.spec.bias) {
                auto q = detail::quantize_fresh(st.b, {static_cast<int>(st.b.size())}, 16);
                detail::TensorRecord tb;
                tb.name = st.name + ".b";
                tb.bits = 16;
                tb.delta = q.params.delta;
                tb.shape = q.shape;
                tb.data = std::move(q.data);
                tensors.push_back(std::move(tb));
            }
        }
        detail::put<uint32_t>(os, static_cast<uint32_t>(tensors.size()));
        for (const auto& t : tensors) detail::put_tensor(os, t);
        if (!os) throw DataError("checkpoint: write failed for " + tmp.string());
    }
    fs::rename(tmp, path);
}

// Loads into a structurally matching network. Weights land on the
// quantized side (and are mirrored to float); biases land on the float
// side. Returns the stored sparse mask, if any.
inline std::optional<enh::SparseMask> load_checkpoint(net::Network& nw, const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("checkpoint: cannot open " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::string(magic, 4) != "QZOF")
        throw DataError("checkpoint: bad magic in " + path);
    uint16_t version = detail::get<uint16_t>(is);
    if (version != kVersion)
        throw DataError("checkpoint: unsupported version " + std::to_string(version));
    uint32_t count = detail::get<uint32_t>(is);

    std::vector<detail::TensorRecord> tensors;
    for (uint32_t i = 0; i < count; ++i) tensors.push_back(detail::get_tensor(is));

    auto trainable = nw.trainable_layer_indices();
    std::optional<enh::SparseMask> mask;
    int wbits = 16;
    for (auto& st : nw.layers) {
        if (!net::is_compute(st.spec.kind)) continue;
        bool found_w = false;
        for (auto& t : tensors) {
            if (t.name == st.name + ".w") {
                if (fxp::shape_count(t.shape) != st.w.size())
                    throw DataError("checkpoint: tensor '" + t.name + "' shape mismatch");
                st.w_q.data = t.data;
                st.w_q.shape = t.shape;
                st.w_q.params = fxp::QuantParams::from_delta(t.delta, t.bits);
                wbits = t.bits;
                for (size_t i = 0; i < st.w.size(); ++i) st.w[i] = t.data[i] * t.delta;
                if (!t.mask.empty() && st.spec.trainable) {
                    if (!mask) {
                        mask.emplace();
                        mask->layers.resize(trainable.size());
                    }
                    for (size_t ti = 0; ti < trainable.size(); ++ti)
                        if (nw.layers[trainable[ti]].name == st.name)
                            mask->layers[ti] = t.mask;
                }
                found_w = true;
            } else if (t.name == st.name + ".b") {
                if (t.data.size() != st.b.size())
                    throw DataError("checkpoint: tensor '" + t.name + "' size mismatch");
                for (size_t i = 0; i < st.b.size(); ++i) st.b[i] = t.data[i] * t.delta;
            }
        }
        if (!found_w) throw DataError("checkpoint: missing tensor '" + st.name + ".w'");
    }
    if (mask)
        for (size_t ti = 0; ti < trainable.size(); ++ti)
            if (mask->layers[ti].empty())
                mask->layers[ti].assign(nw.layers[trainable[ti]].w.size(), 1);
    nw.weight_bits = wbits;
    nw.quantized_ready = true;
    nw.calibrated = false;
    return mask;
}

}  // namespace qzoff::ckpt
