// Command-line front end: train / eval / memreport / landscape / compare.
// Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric error.

#include <CLI11.hpp>
#include <iostream>

#include "qzoff/experiment.hpp"
#include "qzoff/landscape.hpp"

using namespace qzoff;

namespace {

struct CommonOpts {
    std::string config;
    std::string method;
    std::string out;
    long seed = -1;
    bool force_8w = false;
};

cfg::ExperimentConfig load_with_overrides(const CommonOpts& o) {
    cfg::ExperimentConfig c = cfg::load_experiment_config(o.config);
    if (!o.method.empty()) c.method = o.method;
    if (!o.out.empty()) c.out = o.out;
    if (o.seed >= 0) {
        c.seed = static_cast<uint64_t>(o.seed);
        c.train.seed = c.seed;
    }
    if (o.force_8w) {
        c.train.weight_bits = 8;
        c.train.force = true;
    }
    return c;
}

int cmd_train(const CommonOpts& o) {
    auto c = load_with_overrides(o);
    auto res = exp::run_experiment(c);
    std::cout << "method: " << res.method << '\n';
    if (!res.regression) {
        std::cout << "zero-shot accuracy: " << res.zero_shot_acc << '\n';
        std::cout << "final accuracy:     " << res.final_acc << '\n';
    }
    std::cout << "zero-shot loss: " << res.zero_shot_loss << '\n';
    std::cout << "final loss:     " << res.final_loss << '\n';
    std::cout << "artifacts in " << res.out_dir << '\n';
    return 0;
}

int cmd_eval(const CommonOpts& o, const std::string& checkpoint, bool quant) {
    auto c = load_with_overrides(o);
    data::Dataset full = exp::ingest_dataset(c.dataset);
    auto [train_ds, test_ds] = data::split(full, c.dataset.test_fraction, c.dataset.seed);
    net::Network nw = cfg::load_model_spec(c.model);
    ckpt::load_checkpoint(nw, checkpoint.empty() ? c.init_checkpoint : checkpoint);
    net::Mode mode = net::Mode::Float;
    if (quant) {
        long cb = std::min<long>(c.calib_batch, static_cast<long>(train_ds.count));
        net::Batch calib =
            data::sample_batch(train_ds, static_cast<int>(cb), rng::derive_seed(c.seed, 0xCA1), 0);
        net::calibrate_activations(nw, calib, c.train.act_bits);
        mode = net::Mode::Quantized;
    }
    net::Batch test = data::full_batch(test_ds);
    if (!full.regression)
        std::cout << "accuracy: " << net::accuracy(nw, test, mode) << '\n';
    std::cout << "loss: " << net::forward_loss(nw, test, mode) << '\n';
    return 0;
}

int cmd_memreport(const CommonOpts& o, int batch_size) {
    auto c = load_with_overrides(o);
    net::Network nw = cfg::load_model_spec(c.model);
    nw.weight_bits = c.train.weight_bits;
    int bs = batch_size > 0 ? batch_size : c.train.batch_size;
    std::cout << mem::format_report_text(mem::memory_report(nw, bs));
    return 0;
}

int cmd_landscape(const CommonOpts& o, const std::string& checkpoint,
                  const std::vector<std::string>& traj, int resolution, double extent,
                  long dir_seed, const std::string& grid_out, const std::string& traj_out) {
    auto c = load_with_overrides(o);
    data::Dataset full = exp::ingest_dataset(c.dataset);
    auto [train_ds, test_ds] = data::split(full, c.dataset.test_fraction, c.dataset.seed);
    net::Network nw = cfg::load_model_spec(c.model);
    std::string center = checkpoint.empty() ? c.init_checkpoint : checkpoint;
    if (center.empty()) throw ConfigError("landscape needs --checkpoint or init_checkpoint");
    ckpt::load_checkpoint(nw, center);
    land::GridSpec spec;
    spec.resolution = resolution;
    spec.extent = extent;
    spec.dir_seed = static_cast<uint64_t>(dir_seed);
    net::Batch eval = data::full_batch(test_ds);
    land::export_landscape(nw, eval, spec, traj, grid_out, traj_out);
    std::cout << "wrote " << grid_out << " and " << traj_out << '\n';
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Quantized zeroth-order forward-gradient training toolkit"};
    app.require_subcommand(1);

    CommonOpts o;
    std::string checkpoint, grid_out = "landscape.csv", traj_out = "trajectory.csv";
    std::vector<std::string> traj;
    int batch_size = 0, resolution = 21;
    double extent = 0.5;
    long dir_seed = 11;
    bool quant = false;

    auto add_common = [&](CLI::App* sub, bool config_required = true) {
        sub->add_option("--config", o.config, "experiment config file")->required(config_required);
        sub->add_option("--method", o.method, "override experiment.method");
        sub->add_option("--out", o.out, "override experiment.out");
        sub->add_option("--seed", o.seed, "override experiment.seed");
        sub->add_flag("--force-8w", o.force_8w,
                      "force 8-bit weights despite a vanishing-perturbation rejection");
    };

    auto* train = app.add_subcommand("train", "run a training experiment");
    add_common(train);

    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
    add_common(eval);
    eval->add_option("--checkpoint", checkpoint, "checkpoint to evaluate");
    eval->add_flag("--quant", quant, "evaluate the quantized forward path");

    auto* memrep = app.add_subcommand("memreport", "training-memory accounting for a model");
    add_common(memrep);
    memrep->add_option("--batch-size", batch_size, "override batch size");

    auto* lands = app.add_subcommand("landscape", "export a 2-D loss-landscape grid");
    add_common(lands);
    lands->add_option("--checkpoint", checkpoint, "center checkpoint");
    lands->add_option("--traj", traj, "trajectory checkpoints, in order");
    lands->add_option("--resolution", resolution, "grid points per axis");
    lands->add_option("--extent", extent, "half-width of the grid");
    lands->add_option("--dir-seed", dir_seed, "seed for the two directions");
    lands->add_option("--grid-out", grid_out, "grid CSV path");
    lands->add_option("--traj-out", traj_out, "trajectory CSV path");

    auto* cmp = app.add_subcommand("compare", "diff two metrics files");
    std::string metrics_a, metrics_b;
    cmp->add_option("a", metrics_a, "first metrics file")->required();
    cmp->add_option("b", metrics_b, "second metrics file")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (*train) return cmd_train(o);
        if (*eval) return cmd_eval(o, checkpoint, quant);
        if (*memrep) return cmd_memreport(o, batch_size);
        if (*lands)
            return cmd_landscape(o, checkpoint, traj, resolution, extent, dir_seed, grid_out,
                                 traj_out);
        if (*cmp) {
            std::cout << exp::compare_metrics(metrics_a, metrics_b);
            return 0;
        }
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return 3;
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << '\n';
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
