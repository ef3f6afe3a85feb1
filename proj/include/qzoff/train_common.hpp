#pragma once

// Plumbing shared by the quantized, float forward-gradient, and
// backpropagation trainers: hyperparameters, learning-rate schedule, and
// the per-step log record.

#include <cstdint>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "qzoff/errors.hpp"
#include "qzoff/estimators.hpp"
#include "qzoff/net.hpp"

namespace qzoff::train {

enum class ResetMode { Snapshot, Reperturb };
enum class SparseStrategy { TopkMagnitude, Random, Threshold };

struct LrSchedule {
    double base = 1e-4;
    std::string kind = "constant";  // constant | step
    long step_every = 0;
    double gamma = 1.0;

    double at(long step) const {
        if (kind == "constant" || step_every <= 0) return base;
        double lr = base;
        for (long s = step_every; s <= step; s += step_every) lr *= gamma;
        return lr;
    }
};

struct TrainConfig {
    double eps = 1e-3;
    double zmax = 3.5;
    int m = 3;
    long steps = 0;
    int batch_size = 32;
    LrSchedule lr;
    int weight_bits = 16;
    int act_bits = 8;
    int pert_bits = 8;
    est::Distribution dist = est::Distribution::Normal;
    ResetMode reset = ResetMode::Snapshot;
    bool force = false;  // run despite eps_q = 0 rejections

    // Enhancements.
    bool kernel_norm = false;
    bool momentum = false;
    double alpha = 0.5, beta = 1.0;
    bool sharpness = false;
    double rho = 0.0;  // 0 means "use eps"
    bool sparse = false;
    SparseStrategy sparse_strategy = SparseStrategy::Random;
    double density = 1.0;
    double threshold = 0.0;
    long refresh_every = 0;  // 0 = mask fixed for the whole run

    uint64_t seed = 1;
    long eval_every = 0;
    long checkpoint_every = 0;
    bool timing = false;  // wall_ms column reads 0 unless enabled
};

struct StepLogRecord {
    long step = 0;
    double mean_loss = 0.0;
    int sign_pos = 0, sign_neg = 0, sign_zero = 0;
    double update_l2 = 0.0;
    double lr = 0.0;
    long wall_ms = 0;
};

inline std::string log_header() {
    return "step\tmean_loss\tsign_pos\tsign_neg\tsign_zero\tupdate_l2\tlr\twall_ms";
}

inline std::string format_log_line(const StepLogRecord& r) {
    std::ostringstream os;
    os.precision(10);
    os << r.step << '\t' << r.mean_loss << '\t' << r.sign_pos << '\t' << r.sign_neg << '\t'
       << r.sign_zero << '\t' << r.update_l2 << '\t' << r.lr << '\t' << r.wall_ms;
    return os.str();
}

struct TrainHooks {
    std::function<net::Batch(long step)> next_batch;
    std::function<void(const StepLogRecord&)> on_step;
    std::function<void(long step)> on_checkpoint;
};

}  // namespace qzoff::train
