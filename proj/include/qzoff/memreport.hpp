#pragma once

// Training-memory accounting. Numbers derive solely from shapes and
// bit-widths; there is no measurement noise. Scratch = activation buffers
// plus the largest-layer gradient buffer; FF training additionally keeps
// one snapshot of the trainable weights.

#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "qzoff/net.hpp"

namespace qzoff::mem {

struct MemoryRow {
    std::string method;  // bp | ff | inference
    std::string mode;    // float | quant
    size_t scratch_bytes = 0;
    size_t weight_bytes = 0;
    size_t extra_bytes = 0;  // FF weight snapshot
    size_t total_bytes = 0;
};

inline size_t trainable_weight_bytes(const net::Network& nw, net::Mode mode) {
    size_t ew = mode == net::Mode::Quantized ? static_cast<size_t>(nw.weight_bits) / 8 : 2;
    size_t n = 0;
    for (size_t li : nw.trainable_layer_indices()) n += nw.layers[li].w.size();
    return n * ew;
}

inline std::vector<MemoryRow> memory_report(const net::Network& nw, int batch_size) {
    std::vector<MemoryRow> rows;
    auto add = [&](const std::string& method, net::Mode mode, net::TrainingKind kind) {
        MemoryRow r;
        r.method = method;
        r.mode = mode == net::Mode::Quantized ? "quant" : "float";
        r.scratch_bytes = net::scratch_memory_bytes(nw, batch_size, kind, mode);
        r.weight_bytes = net::weight_memory_bytes(nw, mode);
        if (kind == net::TrainingKind::Ff) r.extra_bytes = trainable_weight_bytes(nw, mode);
        r.total_bytes = r.scratch_bytes + r.weight_bytes + r.extra_bytes;
        rows.push_back(r);
    };
    add("inference", net::Mode::Float, net::TrainingKind::Inference);
    add("inference", net::Mode::Quantized, net::TrainingKind::Inference);
    add("bp", net::Mode::Float, net::TrainingKind::Bp);
    add("ff", net::Mode::Float, net::TrainingKind::Ff);
    add("ff", net::Mode::Quantized, net::TrainingKind::Ff);
    return rows;
}

inline std::string format_report_tsv(const std::vector<MemoryRow>& rows) {
    std::ostringstream os;
    os << "method\tmode\tscratch_bytes\tweight_bytes\textra_bytes\ttotal_bytes\n";
    for (const auto& r : rows)
        os << r.method << '\t' << r.mode << '\t' << r.scratch_bytes << '\t' << r.weight_bytes
           << '\t' << r.extra_bytes << '\t' << r.total_bytes << '\n';
    return os.str();
}

inline std::string format_report_text(const std::vector<MemoryRow>& rows) {
    std::ostringstream os;
    os << std::left << std::setw(11) << "method" << std::setw(7) << "mode" << std::right
       << std::setw(14) << "scratch" << std::setw(14) << "weights" << std::setw(14) << "extra"
       << std::setw(14) << "total" << '\n';
    for (const auto& r : rows)
        os << std::left << std::setw(11) << r.method << std::setw(7) << r.mode << std::right
           << std::setw(14) << r.scratch_bytes << std::setw(14) << r.weight_bytes << std::setw(14)
           << r.extra_bytes << std::setw(14) << r.total_bytes << '\n';
    return os.str();
}

}  // namespace qzoff::mem
