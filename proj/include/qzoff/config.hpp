#pragma once

// Experiment configuration: a flat key=value file with [sections]. Every
// key is checked against the documented set; unknown keys are errors so a
// typo in eps or a bit-width cannot silently invalidate a run.

#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "qzoff/errors.hpp"
#include "qzoff/net.hpp"
#include "qzoff/train_common.hpp"

namespace qzoff::cfg {

struct DatasetSpec {
    std::string kind;  // blobs | moons | quad1d | idx | csv
    int dim = 2, classes = 2;
    long samples = 1000;
    double sep = 3.0, noise = 0.1;
    uint64_t seed = 7;
    double test_fraction = 0.2;
    std::string images, labels;  // idx
    std::string path, label_col = "label";  // csv
};

struct ExperimentConfig {
    std::string method = "bp";  // bp | ff_float | ff_quant
    uint64_t seed = 1;
    std::string out;
    std::string model;             // model spec file
    std::string init_checkpoint;   // optional starting weights
    std::string baseline_metrics;  // optional metrics file to diff against
    long calib_batch = 64;
    DatasetSpec dataset;
    train::TrainConfig train;
};

namespace detail {

inline const std::set<std::string>& known_keys() {
    static const std::set<std::string> keys = {
        "experiment.method", "experiment.seed", "experiment.out", "experiment.model",
        "experiment.init_checkpoint", "experiment.baseline_metrics", "experiment.calib_batch",
        "dataset.kind", "dataset.dim", "dataset.classes", "dataset.samples", "dataset.sep",
        "dataset.noise", "dataset.seed", "dataset.test_fraction", "dataset.images",
        "dataset.labels", "dataset.path", "dataset.label_col",
        "train.eps", "train.zmax", "train.m", "train.steps", "train.batch_size", "train.lr",
        "train.lr_schedule", "train.lr_step", "train.lr_gamma", "train.weight_bits",
        "train.act_bits", "train.pert_bits", "train.distribution", "train.reset", "train.force",
        "train.kernel_norm", "train.momentum", "train.alpha", "train.beta", "train.sharpness",
        "train.rho", "train.sparse", "train.sparse_strategy", "train.density", "train.threshold",
        "train.refresh_every", "train.eval_every", "train.checkpoint_every", "train.timing",
    };
    return keys;
}

inline std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

inline bool parse_bool(const std::string& v, const std::string& key, int line) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError("line " + std::to_string(line) + ": key '" + key + "': expected a boolean, got '" + v + "'");
}

template <typename T>
T parse_num(const std::string& v, const std::string& key, int line) {
    std::istringstream ss(v);
    T out;
    ss >> out;
    if (ss.fail() || !ss.eof())
        throw ConfigError("line " + std::to_string(line) + ": key '" + key +
                          "': expected a number, got '" + v + "'");
    return out;
}

}  // namespace detail

inline std::map<std::string, std::pair<std::string, int>> parse_kv_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config file " + path);
    std::map<std::string, std::pair<std::string, int>> kv;
    std::string line, section;
    int n = 0;
    while (std::getline(is, line)) {
        ++n;
        std::string t = detail::trim(line);
        if (t.empty() || t[0] == '#') continue;
        if (t.front() == '[' && t.back() == ']') {
            section = detail::trim(t.substr(1, t.size() - 2));
            continue;
        }
        size_t eq = t.find('=');
        if (eq == std::string::npos)
            throw ConfigError(path + ": line " + std::to_string(n) + ": expected key = value");
        std::string key = detail::trim(t.substr(0, eq));
        std::string val = detail::trim(t.substr(eq + 1));
        std::string full = section.empty() ? key : section + "." + key;
        if (!detail::known_keys().count(full))
            throw ConfigError(path + ": line " + std::to_string(n) + ": unknown key '" + full + "'");
        if (kv.count(full))
            throw ConfigError(path + ": line " + std::to_string(n) + ": duplicate key '" + full + "'");
        kv[full] = {val, n};
    }
    return kv;
}

inline ExperimentConfig load_experiment_config(const std::string& path) {
    auto kv = parse_kv_file(path);
    ExperimentConfig c;
    auto has = [&](const std::string& k) { return kv.count(k) > 0; };
    auto str = [&](const std::string& k, std::string def) {
        return has(k) ? kv[k].first : def;
    };
    auto num = [&]<typename T>(const std::string& k, T def) {
        return has(k) ? detail::parse_num<T>(kv[k].first, k, kv[k].second) : def;
    };
    auto boolean = [&](const std::string& k, bool def) {
        return has(k) ? detail::parse_bool(kv[k].first, k, kv[k].second) : def;
    };

    c.method = str("experiment.method", c.method);
    if (c.method != "bp" && c.method != "ff_float" && c.method != "ff_quant")
        throw ConfigError("experiment.method must be bp, ff_float or ff_quant");
    c.seed = num.operator()<uint64_t>("experiment.seed", c.seed);
    c.out = str("experiment.out", "");
    c.model = str("experiment.model", "");
    c.init_checkpoint = str("experiment.init_checkpoint", "");
    c.baseline_metrics = str("experiment.baseline_metrics", "");
    c.calib_batch = num.operator()<long>("experiment.calib_batch", c.calib_batch);

    auto& d = c.dataset;
    d.kind = str("dataset.kind", "");
    d.dim = num.operator()<int>("dataset.dim", d.dim);
    d.classes = num.operator()<int>("dataset.classes", d.classes);
    d.samples = num.operator()<long>("dataset.samples", d.samples);
    d.sep = num.operator()<double>("dataset.sep", d.sep);
    d.noise = num.operator()<double>("dataset.noise", d.noise);
    d.seed = num.operator()<uint64_t>("dataset.seed", d.seed);
    d.test_fraction = num.operator()<double>("dataset.test_fraction", d.test_fraction);
    d.images = str("dataset.images", "");
    d.labels = str("dataset.labels", "");
    d.path = str("dataset.path", "");
    d.label_col = str("dataset.label_col", d.label_col);

    auto& t = c.train;
    t.eps = num.operator()<double>("train.eps", t.eps);
    t.zmax = num.operator()<double>("train.zmax", t.zmax);
    t.m = num.operator()<int>("train.m", t.m);
    t.steps = num.operator()<long>("train.steps", t.steps);
    t.batch_size = num.operator()<int>("train.batch_size", t.batch_size);
    t.lr.base = num.operator()<double>("train.lr", t.lr.base);
    t.lr.kind = str("train.lr_schedule", t.lr.kind);
    t.lr.step_every = num.operator()<long>("train.lr_step", t.lr.step_every);
    t.lr.gamma = num.operator()<double>("train.lr_gamma", t.lr.gamma);
    t.weight_bits = num.operator()<int>("train.weight_bits", t.weight_bits);
    t.act_bits = num.operator()<int>("train.act_bits", t.act_bits);
    t.pert_bits = num.operator()<int>("train.pert_bits", t.pert_bits);
    std::string dist = str("train.distribution", "normal");
    if (dist == "normal")
        t.dist = est::Distribution::Normal;
    else if (dist == "binomial")
        t.dist = est::Distribution::Binomial;
    else
        throw ConfigError("train.distribution must be normal or binomial");
    std::string reset = str("train.reset", "snapshot");
    if (reset == "snapshot")
        t.reset = train::ResetMode::Snapshot;
    else if (reset == "reperturb")
        t.reset = train::ResetMode::Reperturb;
    else
        throw ConfigError("train.reset must be snapshot or reperturb");
    t.force = boolean("train.force", t.force);
    t.kernel_norm = boolean("train.kernel_norm", t.kernel_norm);
    t.momentum = boolean("train.momentum", t.momentum);
    t.alpha = num.operator()<double>("train.alpha", t.alpha);
    t.beta = num.operator()<double>("train.beta", t.beta);
    t.sharpness = boolean("train.sharpness", t.sharpness);
    t.rho = num.operator()<double>("train.rho", t.rho);
    t.sparse = boolean("train.sparse", t.sparse);
    std::string strat = str("train.sparse_strategy", "random");
    if (strat == "topk")
        t.sparse_strategy = train::SparseStrategy::TopkMagnitude;
    else if (strat == "random")
        t.sparse_strategy = train::SparseStrategy::Random;
    else if (strat == "threshold")
        t.sparse_strategy = train::SparseStrategy::Threshold;
    else
        throw ConfigError("train.sparse_strategy must be topk, random or threshold");
    t.density = num.operator()<double>("train.density", t.density);
    t.threshold = num.operator()<double>("train.threshold", t.threshold);
    t.refresh_every = num.operator()<long>("train.refresh_every", t.refresh_every);
    t.eval_every = num.operator()<long>("train.eval_every", t.eval_every);
    t.checkpoint_every = num.operator()<long>("train.checkpoint_every", t.checkpoint_every);
    t.timing = boolean("train.timing", t.timing);
    t.seed = c.seed;
    return c;
}

// Model spec: one layer per line, e.g.
//   input 16
//   dense 64 trainable nobias
//   relu
//   dense 4 trainable nobias
//   softmax_xent_head
inline net::Network load_model_spec(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open model spec " + path);
    std::vector<int> input_shape;
    std::vector<net::LayerSpec> specs;
    std::string line;
    int n = 0;
    while (std::getline(is, line)) {
        ++n;
        std::string t = detail::trim(line);
        if (t.empty() || t[0] == '#') continue;
        std::istringstream ss(t);
        std::string word;
        ss >> word;
        auto flags = [&](net::LayerSpec& s) {
            std::string f;
            while (ss >> f) {
                if (f == "trainable")
                    s.trainable = true;
                else if (f == "frozen")
                    s.trainable = false;
                else if (f == "nobias")
                    s.bias = false;
                else
                    throw ConfigError(path + ": line " + std::to_string(n) + ": unknown flag '" +
                                      f + "'");
            }
        };
        if (word == "input") {
            int d;
            while (ss >> d) input_shape.push_back(d);
            if (input_shape.empty())
                throw ConfigError(path + ": line " + std::to_string(n) + ": input needs dims");
        } else if (word == "dense") {
            int units;
            if (!(ss >> units))
                throw ConfigError(path + ": line " + std::to_string(n) + ": dense needs units");
            auto s = net::LayerSpec::dense(units, false);
            flags(s);
            specs.push_back(s);
        } else if (word == "conv2d") {
            int oc, kh, kw;
            if (!(ss >> oc >> kh >> kw))
                throw ConfigError(path + ": line " + std::to_string(n) +
                                  ": conv2d needs out_channels kh kw");
            auto s = net::LayerSpec::conv2d(oc, kh, kw, 1, false);
            flags(s);
            specs.push_back(s);
        } else if (word == "relu") {
            specs.push_back(net::LayerSpec::relu());
        } else if (word == "flatten") {
            specs.push_back(net::LayerSpec::flatten());
        } else if (word == "softmax_xent_head") {
            specs.push_back(net::LayerSpec::softmax_xent_head());
        } else if (word == "mse_head") {
            specs.push_back(net::LayerSpec::mse_head());
        } else {
            throw ConfigError(path + ": line " + std::to_string(n) + ": unknown layer '" + word +
                              "'");
        }
    }
    if (input_shape.empty()) throw ConfigError(path + ": missing input line");
    return net::build_network(input_shape, specs);
}

}  // namespace qzoff::cfg
