#pragma once

// Experiment orchestration: dataset construction, model setup, method
// dispatch (bp / ff_float / ff_quant), artifact writing.

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "qzoff/checkpoint.hpp"
#include "qzoff/config.hpp"
#include "qzoff/dataset.hpp"
#include "qzoff/errors.hpp"
#include "qzoff/fftrain.hpp"
#include "qzoff/memreport.hpp"
#include "qzoff/trainer.hpp"

namespace qzoff::exp {

inline data::Dataset ingest_dataset(const cfg::DatasetSpec& spec) {
    if (spec.kind == "blobs")
        return data::make_blobs(spec.dim, spec.classes, spec.samples, spec.sep, spec.seed);
    if (spec.kind == "moons") return data::make_moons(spec.samples, spec.noise, spec.seed);
    if (spec.kind == "quad1d") return data::make_quad1d(spec.samples, spec.seed);
    if (spec.kind == "idx") {
        if (spec.images.empty() || spec.labels.empty())
            throw DataError("idx dataset needs dataset.images and dataset.labels paths");
        return data::load_idx(spec.images, spec.labels);
    }
    if (spec.kind == "csv") {
        if (spec.path.empty()) throw DataError("csv dataset needs dataset.path");
        return data::load_csv(spec.path, spec.label_col);
    }
    throw ConfigError("unknown dataset.kind '" + spec.kind + "'");
}

struct ExperimentResult {
    std::string method;
    double zero_shot_acc = -1.0;
    double final_acc = -1.0;
    double zero_shot_loss = 0.0;
    double final_loss = 0.0;
    bool regression = false;
    std::string out_dir;
};

namespace detail {

inline void write_atomic(const std::string& path, const std::string& content) {
    namespace fs = std::filesystem;
    fs::path tmp = fs::path(path).concat(".tmp");
    {
        std::ofstream os(tmp);
        if (!os) throw DataError("cannot open " + tmp.string() + " for writing");
        os << content;
    }
    fs::rename(tmp, path);
}

inline std::map<std::string, std::string> read_metrics(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw DataError("cannot open metrics file " + path);
    std::map<std::string, std::string> kv;
    std::string line;
    while (std::getline(is, line)) {
        size_t tab = line.find('\t');
        if (tab != std::string::npos) kv[line.substr(0, tab)] = line.substr(tab + 1);
    }
    return kv;
}

}  // namespace detail

inline ExperimentResult run_experiment(const cfg::ExperimentConfig& c) {
    if (c.model.empty()) throw ConfigError("experiment.model is required");
    if (c.out.empty()) throw ConfigError("experiment.out is required");

    // Everything that can fail is resolved before any artifact is written.
    data::Dataset full = ingest_dataset(c.dataset);
    auto [train_ds, test_ds] = data::split(full, c.dataset.test_fraction, c.dataset.seed);
    if (train_ds.count == 0) throw DataError("empty training split");

    net::Network nw = cfg::load_model_spec(c.model);
    if (static_cast<size_t>(nw.input_count()) != full.input_count())
        throw ConfigError("model input shape does not match dataset feature count");
    if (!c.init_checkpoint.empty())
        ckpt::load_checkpoint(nw, c.init_checkpoint);
    else
        net::init_params(nw, c.seed);

    train::TrainConfig tc = c.train;
    tc.seed = c.seed;
    net::Batch test_batch = data::full_batch(test_ds);
    net::Mode eval_mode = c.method == "ff_quant" ? net::Mode::Quantized : net::Mode::Float;

    qzo::QuantConstants consts;
    if (c.method == "ff_quant") {
        // Re-quantize when the requested width differs from the checkpoint's.
        if (!nw.quantized_ready || nw.weight_bits != tc.weight_bits)
            net::quantize_weights(nw, tc.weight_bits);
        long cb = std::min<long>(c.calib_batch, static_cast<long>(train_ds.count));
        net::Batch calib =
            data::sample_batch(train_ds, static_cast<int>(cb), rng::derive_seed(c.seed, 0xCA1), 0);
        net::calibrate_activations(nw, calib, tc.act_bits);
        auto val = qzo::validate_config(nw, tc);
        if (!val.ok) {
            std::string msg = "configuration rejected:";
            for (const auto& r : val.report) msg += "\n  " + r;
            throw ConfigError(msg);
        }
        consts = val.consts;
    }

    std::filesystem::create_directories(c.out);
    ExperimentResult res;
    res.method = c.method;
    res.regression = full.regression;
    res.out_dir = c.out;
    if (!full.regression) res.zero_shot_acc = net::accuracy(nw, test_batch, eval_mode);
    res.zero_shot_loss = net::forward_loss(nw, test_batch, eval_mode);

    std::ostringstream log, evals;
    log << train::log_header() << '\n';
    evals << "step\taccuracy\tloss\n";

    train::TrainHooks hooks;
    hooks.next_batch = [&](long step) {
        return data::sample_batch(train_ds, tc.batch_size, c.seed, step);
    };
    long eval_counter = 0;
    hooks.on_step = [&](const train::StepLogRecord& rec) {
        log << train::format_log_line(rec) << '\n';
        if (tc.eval_every > 0 && (rec.step + 1) % tc.eval_every == 0) {
            ++eval_counter;
            double acc = full.regression ? 0.0 : net::accuracy(nw, test_batch, eval_mode);
            double loss = net::forward_loss(nw, test_batch, eval_mode);
            evals << (rec.step + 1) << '\t' << acc << '\t' << loss << '\n';
        }
    };
    hooks.on_checkpoint = [&](long step) {
        if (c.method == "ff_quant") net::sync_float_from_quant(nw);
        char name[64];
        std::snprintf(name, sizeof name, "ckpt_%06ld.ckpt", step);
        ckpt::save_checkpoint(nw, (std::filesystem::path(c.out) / name).string());
    };

    if (c.method == "bp")
        fftrain::train_bp(nw, tc, hooks);
    else if (c.method == "ff_float")
        fftrain::train_ff_float(nw, tc, hooks);
    else
        qzo::train(nw, tc, consts, hooks);

    if (c.method == "ff_quant") net::sync_float_from_quant(nw);
    if (!full.regression) res.final_acc = net::accuracy(nw, test_batch, eval_mode);
    res.final_loss = net::forward_loss(nw, test_batch, eval_mode);

    namespace fs = std::filesystem;
    detail::write_atomic((fs::path(c.out) / "log.tsv").string(), log.str());
    if (tc.eval_every > 0)
        detail::write_atomic((fs::path(c.out) / "eval.tsv").string(), evals.str());
    ckpt::save_checkpoint(nw, (fs::path(c.out) / "final.ckpt").string());
    detail::write_atomic((fs::path(c.out) / "memreport.txt").string(),
                         mem::format_report_text(mem::memory_report(nw, tc.batch_size)) + "\n" +
                             mem::format_report_tsv(mem::memory_report(nw, tc.batch_size)));

    std::ostringstream ms;
    ms.precision(10);
    ms << "method\t" << c.method << '\n';
    if (!full.regression) {
        ms << "zero_shot_acc\t" << res.zero_shot_acc << '\n';
        ms << "final_acc\t" << res.final_acc << '\n';
        ms << "improvement\t" << res.final_acc - res.zero_shot_acc << '\n';
    }
    ms << "zero_shot_loss\t" << res.zero_shot_loss << '\n';
    ms << "final_loss\t" << res.final_loss << '\n';
    if (!c.baseline_metrics.empty()) {
        auto base = detail::read_metrics(c.baseline_metrics);
        if (base.count("final_acc")) {
            double b = std::stod(base["final_acc"]);
            ms << "baseline_final_acc\t" << b << '\n';
            ms << "acc_gap_vs_baseline\t" << res.final_acc - b << '\n';
        }
    }
    detail::write_atomic((fs::path(c.out) / "metrics.txt").string(), ms.str());
    return res;
}

// Diff two metrics files (the compare CLI verb).
inline std::string compare_metrics(const std::string& path_a, const std::string& path_b) {
    auto a = detail::read_metrics(path_a);
    auto b = detail::read_metrics(path_b);
    std::ostringstream os;
    os.precision(10);
    os << "metric\ta(" << a["method"] << ")\tb(" << b["method"] << ")\tdiff\n";
    for (const char* key : {"zero_shot_acc", "final_acc", "zero_shot_loss", "final_loss"}) {
        if (a.count(key) && b.count(key)) {
            double va = std::stod(a[key]), vb = std::stod(b[key]);
            os << key << '\t' << va << '\t' << vb << '\t' << va - vb << '\n';
        }
    }
    return os.str();
}

}  // namespace qzoff::exp
