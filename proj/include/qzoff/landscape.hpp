#pragma once

// Loss-landscape export: two seeded random directions, normalized per
// layer to the layer's weight norm, loss evaluated over an R x R grid
// centered at the checkpoint, and training trajectories projected onto
// the two directions by least squares.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "qzoff/checkpoint.hpp"
#include "qzoff/errors.hpp"
#include "qzoff/net.hpp"
#include "qzoff/rng.hpp"

namespace qzoff::land {

struct GridSpec {
    int resolution = 21;     // points per axis; odd resolutions include 0 exactly
    double extent = 0.5;     // coordinates span [-extent, extent]
    uint64_t dir_seed = 11;
};

struct LandscapeGrid {
    std::vector<double> xs, ys;      // axis coordinates
    std::vector<double> loss;        // row-major [R x R]
    std::vector<double> traj_x, traj_y, traj_loss;
    std::vector<long> traj_epoch;
};

namespace detail {

// Gaussian direction over the trainable weights, each layer block rescaled
// to the corresponding weight norm.
inline std::vector<double> filter_normalized_direction(const net::Network& nw, uint64_t seed) {
    rng::CounterRng gen{seed};
    std::vector<double> d;
    uint64_t ctr = 0;
    for (size_t li : nw.trainable_layer_indices()) {
        const auto& w = nw.layers[li].w;
        std::vector<double> block(w.size());
        double dn = 0.0, wn = 0.0;
        for (size_t i = 0; i < w.size(); ++i) {
            block[i] = gen.normal(ctr++);
            dn += block[i] * block[i];
            wn += w[i] * w[i];
        }
        double scale = dn > 0.0 ? std::sqrt(wn) / std::sqrt(dn) : 0.0;
        for (double& v : block) d.push_back(v * scale);
    }
    return d;
}

inline std::vector<double> flat_trainable(const net::Network& nw) {
    std::vector<double> v;
    for (size_t li : nw.trainable_layer_indices())
        v.insert(v.end(), nw.layers[li].w.begin(), nw.layers[li].w.end());
    return v;
}

inline void set_trainable(net::Network& nw, std::span<const double> v) {
    size_t off = 0;
    for (size_t li : nw.trainable_layer_indices()) {
        auto& w = nw.layers[li].w;
        std::copy(v.begin() + off, v.begin() + off + w.size(), w.begin());
        off += w.size();
    }
}

}  // namespace detail

// net must carry the checkpoint weights on the float side; the grid center
// (0, 0) evaluates the unmodified checkpoint.
inline LandscapeGrid compute_landscape(net::Network& nw, const net::Batch& eval_batch,
                                       const GridSpec& spec,
                                       const std::vector<std::string>& trajectory_ckpts) {
    LandscapeGrid grid;
    std::vector<double> center = detail::flat_trainable(nw);
    std::vector<double> d1 =
        detail::filter_normalized_direction(nw, rng::derive_seed(spec.dir_seed, 1));
    std::vector<double> d2 =
        detail::filter_normalized_direction(nw, rng::derive_seed(spec.dir_seed, 2));

    int r = spec.resolution;
    grid.xs.resize(r);
    for (int i = 0; i < r; ++i)
        grid.xs[i] = r == 1 ? 0.0 : -spec.extent + 2.0 * spec.extent * i / (r - 1);
    grid.ys = grid.xs;

    grid.loss.resize(static_cast<size_t>(r) * r);
    std::vector<double> w(center.size());
    for (int iy = 0; iy < r; ++iy)
        for (int ix = 0; ix < r; ++ix) {
            double x = grid.xs[ix], y = grid.ys[iy];
            if (x == 0.0 && y == 0.0) {
                detail::set_trainable(nw, center);
            } else {
                for (size_t i = 0; i < w.size(); ++i)
                    w[i] = center[i] + x * d1[i] + y * d2[i];
                detail::set_trainable(nw, w);
            }
            grid.loss[static_cast<size_t>(iy) * r + ix] =
                net::forward_loss(nw, eval_batch, net::Mode::Float);
        }
    detail::set_trainable(nw, center);

    // Trajectory: least-squares coordinates of each checkpoint's offset in
    // span{d1, d2}.
    double g11 = 0, g12 = 0, g22 = 0;
    for (size_t i = 0; i < d1.size(); ++i) {
        g11 += d1[i] * d1[i];
        g12 += d1[i] * d2[i];
        g22 += d2[i] * d2[i];
    }
    double det = g11 * g22 - g12 * g12;
    long epoch = 0;
    net::Network work = nw;  // trajectory loads must not disturb the center net
    for (const auto& path : trajectory_ckpts) {
        ++epoch;
        ckpt::load_checkpoint(work, path);
        std::vector<double> we = detail::flat_trainable(work);
        double b1 = 0, b2 = 0;
        for (size_t i = 0; i < we.size(); ++i) {
            double v = we[i] - center[i];
            b1 += v * d1[i];
            b2 += v * d2[i];
        }
        double x = det != 0.0 ? (b1 * g22 - b2 * g12) / det : 0.0;
        double y = det != 0.0 ? (b2 * g11 - b1 * g12) / det : 0.0;
        grid.traj_epoch.push_back(epoch);
        grid.traj_x.push_back(x);
        grid.traj_y.push_back(y);
        grid.traj_loss.push_back(net::forward_loss(work, eval_batch, net::Mode::Float));
    }
    return grid;
}

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

}  // namespace detail

inline void export_landscape(net::Network& nw, const net::Batch& eval_batch, const GridSpec& spec,
                             const std::vector<std::string>& trajectory_ckpts,
                             const std::string& grid_csv, const std::string& traj_csv) {
    LandscapeGrid grid = compute_landscape(nw, eval_batch, spec, trajectory_ckpts);
    std::ostringstream gs;
    gs.precision(17);
    gs << "x,y,loss\n";
    int r = spec.resolution;
    for (int iy = 0; iy < r; ++iy)
        for (int ix = 0; ix < r; ++ix)
            gs << grid.xs[ix] << ',' << grid.ys[iy] << ','
               << grid.loss[static_cast<size_t>(iy) * r + ix] << '\n';
    detail::write_atomic(grid_csv, gs.str());

    std::ostringstream ts;
    ts.precision(17);
    ts << "epoch,x,y,loss\n";
    for (size_t i = 0; i < grid.traj_epoch.size(); ++i)
        ts << grid.traj_epoch[i] << ',' << grid.traj_x[i] << ',' << grid.traj_y[i] << ','
           << grid.traj_loss[i] << '\n';
    detail::write_atomic(traj_csv, ts.str());
}

}  // namespace qzoff::land
