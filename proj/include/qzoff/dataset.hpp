#pragma once

// Dataset ingestion: IDX image files (MNIST-style), CSV with a label
// column, and seeded synthetic generators. Splits and batch sampling are
// deterministic under a seed.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "qzoff/errors.hpp"
#include "qzoff/net.hpp"
#include "qzoff/rng.hpp"

namespace qzoff::data {

struct Dataset {
    std::vector<int> input_shape;
    int num_classes = 0;
    bool regression = false;
    int out_count = 1;  // regression target width
    std::vector<double> X;
    std::vector<int> y;
    std::vector<double> targets;
    size_t count = 0;

    size_t input_count() const { return fxp::shape_count(input_shape); }
};

// --- synthetic generators -------------------------------------------------

// Gaussian blobs: per-class centers at sep * (random unit vector), unit
// noise around each center.
inline Dataset make_blobs(int dim, int classes, size_t n, double sep, uint64_t seed) {
    Dataset ds;
    ds.input_shape = {dim};
    ds.num_classes = classes;
    ds.count = n;
    rng::CounterRng cgen{rng::derive_seed(seed, 0xB10B)};
    std::vector<double> centers(static_cast<size_t>(classes) * dim);
    for (int c = 0; c < classes; ++c) {
        double norm = 0.0;
        for (int d = 0; d < dim; ++d) {
            double v = cgen.normal(static_cast<uint64_t>(c) * dim + d);
            centers[static_cast<size_t>(c) * dim + d] = v;
            norm += v * v;
        }
        norm = std::sqrt(norm);
        for (int d = 0; d < dim; ++d) centers[static_cast<size_t>(c) * dim + d] *= sep / norm;
    }
    rng::CounterRng xgen{rng::derive_seed(seed, 0x5A3B)};
    ds.X.resize(n * dim);
    ds.y.resize(n);
    for (size_t i = 0; i < n; ++i) {
        int c = static_cast<int>(xgen.raw(2 * i) % static_cast<uint64_t>(classes));
        ds.y[i] = c;
        for (int d = 0; d < dim; ++d)
            ds.X[i * dim + d] = centers[static_cast<size_t>(c) * dim + d] +
                                xgen.normal((i + 1) * 0x10000ULL + d);
    }
    return ds;
}

// Classic interleaved half-circles in 2-D.
inline Dataset make_moons(size_t n, double noise, uint64_t seed) {
    Dataset ds;
    ds.input_shape = {2};
    ds.num_classes = 2;
    ds.count = n;
    ds.X.resize(n * 2);
    ds.y.resize(n);
    rng::CounterRng gen{rng::derive_seed(seed, 0x300F5)};
    for (size_t i = 0; i < n; ++i) {
        int c = static_cast<int>(gen.raw(3 * i) & 1);
        double t = gen.uniform(3 * i + 1) * 3.14159265358979323846;
        double x = c == 0 ? std::cos(t) : 1.0 - std::cos(t);
        double y = c == 0 ? std::sin(t) : 0.5 - std::sin(t);
        ds.X[i * 2] = x + noise * gen.normal(3 * i + 2);
        ds.X[i * 2 + 1] = y + noise * gen.normal(3 * i + 2 + 0x8000000ULL);
        ds.y[i] = c;
    }
    return ds;
}

// 1-D linear regression data: y = a*x + b + sigma*noise, so a linear model
// under squared error sees an exactly quadratic loss surface.
inline Dataset make_quad1d(size_t n, uint64_t seed, double a = 1.7, double b = 0.3,
                           double sigma = 0.05) {
    Dataset ds;
    ds.input_shape = {1};
    ds.regression = true;
    ds.out_count = 1;
    ds.count = n;
    ds.X.resize(n);
    ds.targets.resize(n);
    rng::CounterRng gen{rng::derive_seed(seed, 0x09AD)};
    for (size_t i = 0; i < n; ++i) {
        double x = 2.0 * gen.uniform(2 * i) - 1.0;
        ds.X[i] = x;
        ds.targets[i] = a * x + b + sigma * gen.normal(2 * i + 1);
    }
    return ds;
}

// --- file ingestion ---------------------------------------------------------

namespace detail {

inline uint32_t read_be32(std::istream& is, const std::string& path, size_t offset) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is)
        throw DataError(path + ": truncated at offset " + std::to_string(offset));
    return (uint32_t{b[0]} << 24) | (uint32_t{b[1]} << 16) | (uint32_t{b[2]} << 8) | b[3];
}

}  // namespace detail

// MNIST-style IDX pair: image magic 0x0803, label magic 0x0801; pixels are
// scaled to [0, 1].
inline Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
    std::ifstream imgs(images_path, std::ios::binary);
    if (!imgs) throw DataError("cannot open IDX image file " + images_path);
    uint32_t magic = detail::read_be32(imgs, images_path, 0);
    if (magic != 0x0803)
        throw DataError(images_path + ": bad magic at offset 0 (expected 0x00000803)");
    uint32_t n = detail::read_be32(imgs, images_path, 4);
    uint32_t rows = detail::read_be32(imgs, images_path, 8);
    uint32_t cols = detail::read_be32(imgs, images_path, 12);

    std::ifstream labs(labels_path, std::ios::binary);
    if (!labs) throw DataError("cannot open IDX label file " + labels_path);
    uint32_t lmagic = detail::read_be32(labs, labels_path, 0);
    if (lmagic != 0x0801)
        throw DataError(labels_path + ": bad magic at offset 0 (expected 0x00000801)");
    uint32_t ln = detail::read_be32(labs, labels_path, 4);
    if (ln != n)
        throw DataError("IDX image/label count mismatch: " + std::to_string(n) + " vs " +
                        std::to_string(ln));

    Dataset ds;
    ds.input_shape = {static_cast<int>(rows * cols)};
    ds.count = n;
    size_t pix = static_cast<size_t>(rows) * cols;
    std::vector<unsigned char> buf(pix);
    ds.X.resize(n * pix);
    ds.y.resize(n);
    int max_label = 0;
    for (uint32_t i = 0; i < n; ++i) {
        imgs.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(pix));
        if (!imgs)
            throw DataError(images_path + ": truncated at offset " +
                            std::to_string(16 + static_cast<size_t>(i) * pix));
        for (size_t p = 0; p < pix; ++p) ds.X[i * pix + p] = buf[p] / 255.0;
        unsigned char l;
        labs.read(reinterpret_cast<char*>(&l), 1);
        if (!labs)
            throw DataError(labels_path + ": truncated at offset " + std::to_string(8 + i));
        ds.y[i] = l;
        max_label = std::max(max_label, static_cast<int>(l));
    }
    ds.num_classes = max_label + 1;
    return ds;
}

// CSV with a header row; one column (by name) carries integer labels, all
// other columns are features.
inline Dataset load_csv(const std::string& path, const std::string& label_col) {
    std::ifstream is(path);
    if (!is) throw DataError("cannot open CSV file " + path);
    std::string line;
    if (!std::getline(is, line)) throw DataError(path + ": empty file");
    std::vector<std::string> cols;
    {
        std::stringstream ss(line);
        std::string c;
        while (std::getline(ss, c, ',')) cols.push_back(c);
    }
    int label_idx = -1;
    for (size_t i = 0; i < cols.size(); ++i)
        if (cols[i] == label_col) label_idx = static_cast<int>(i);
    if (label_idx < 0) throw DataError(path + ": label column '" + label_col + "' not found");

    Dataset ds;
    ds.input_shape = {static_cast<int>(cols.size()) - 1};
    int max_label = 0;
    size_t row = 1;
    while (std::getline(is, line)) {
        ++row;
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string cell;
        size_t ci = 0;
        while (std::getline(ss, cell, ',')) {
            double v;
            try {
                v = std::stod(cell);
            } catch (...) {
                throw DataError(path + ": row " + std::to_string(row) + " column " +
                                std::to_string(ci + 1) + ": not a number: '" + cell + "'");
            }
            if (static_cast<int>(ci) == label_idx) {
                int l = static_cast<int>(v);
                ds.y.push_back(l);
                max_label = std::max(max_label, l);
            } else {
                ds.X.push_back(v);
            }
            ++ci;
        }
        if (ci != cols.size())
            throw DataError(path + ": row " + std::to_string(row) + " has " + std::to_string(ci) +
                            " columns, header has " + std::to_string(cols.size()));
    }
    ds.count = ds.y.size();
    ds.num_classes = max_label + 1;
    return ds;
}

// --- splits and batching -----------------------------------------------------

inline Dataset take(const Dataset& ds, const std::vector<size_t>& idx) {
    Dataset out;
    out.input_shape = ds.input_shape;
    out.num_classes = ds.num_classes;
    out.regression = ds.regression;
    out.out_count = ds.out_count;
    out.count = idx.size();
    size_t ic = ds.input_count();
    for (size_t i : idx) {
        out.X.insert(out.X.end(), ds.X.begin() + i * ic, ds.X.begin() + (i + 1) * ic);
        if (ds.regression)
            out.targets.insert(out.targets.end(), ds.targets.begin() + i * ds.out_count,
                               ds.targets.begin() + (i + 1) * ds.out_count);
        else
            out.y.push_back(ds.y[i]);
    }
    return out;
}

inline std::pair<Dataset, Dataset> split(const Dataset& ds, double test_fraction, uint64_t seed) {
    std::vector<size_t> order(ds.count);
    std::iota(order.begin(), order.end(), size_t{0});
    rng::CounterRng gen{rng::derive_seed(seed, 0x5B17)};
    for (size_t i = ds.count - 1; i > 0; --i)
        std::swap(order[i], order[gen.raw(i) % (i + 1)]);
    size_t ntest = static_cast<size_t>(std::llround(test_fraction * ds.count));
    std::vector<size_t> test_idx(order.begin(), order.begin() + ntest);
    std::vector<size_t> train_idx(order.begin() + ntest, order.end());
    return {take(ds, train_idx), take(ds, test_idx)};
}

inline net::Batch full_batch(const Dataset& ds) {
    net::Batch b;
    b.size = static_cast<int>(ds.count);
    b.inputs = ds.X;
    b.labels = ds.y;
    b.targets = ds.targets;
    return b;
}

// Deterministic with-replacement sampler: batch composition is a pure
// function of (seed, step).
inline net::Batch sample_batch(const Dataset& ds, int batch_size, uint64_t seed, long step) {
    if (ds.count == 0) throw DataError("sample_batch: empty dataset");
    rng::CounterRng gen{rng::derive_seed(seed, 0xBA7C)};
    std::vector<size_t> idx(batch_size);
    for (int i = 0; i < batch_size; ++i)
        idx[i] = gen.raw(static_cast<uint64_t>(step) * batch_size + i) % ds.count;
    net::Batch b;
    b.size = batch_size;
    size_t ic = ds.input_count();
    b.inputs.reserve(batch_size * ic);
    for (size_t i : idx) {
        b.inputs.insert(b.inputs.end(), ds.X.begin() + i * ic, ds.X.begin() + (i + 1) * ic);
        if (ds.regression)
            b.targets.insert(b.targets.end(), ds.targets.begin() + i * ds.out_count,
                             ds.targets.begin() + (i + 1) * ds.out_count);
        else
            b.labels.push_back(ds.y[i]);
    }
    return b;
}

}  // namespace qzoff::data
