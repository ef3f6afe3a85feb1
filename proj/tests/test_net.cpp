#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "qzoff/dataset.hpp"
#include "qzoff/net.hpp"

using namespace qzoff;

namespace {

net::Network small_mlp(int in, int hidden, int classes, bool bias = true) {
    return net::build_network({in}, {net::LayerSpec::dense(hidden, true, bias),
                                     net::LayerSpec::relu(),
                                     net::LayerSpec::dense(classes, true, bias),
                                     net::LayerSpec::softmax_xent_head()});
}

}  // namespace

TEST_CASE("build_network: shape validation") {
    CHECK_THROWS_AS(net::build_network({4}, {net::LayerSpec::dense(3, true)}), ConfigError);
    CHECK_THROWS_AS(
        net::build_network({3, 8, 8}, {net::LayerSpec::dense(4, true),
                                       net::LayerSpec::softmax_xent_head()}),
        ConfigError);  // dense on rank-3 input
    CHECK_THROWS_AS(
        net::build_network({1, 4, 4}, {net::LayerSpec::conv2d(2, 5, 5),
                                       net::LayerSpec::flatten(),
                                       net::LayerSpec::softmax_xent_head()}),
        ConfigError);  // kernel larger than input
    CHECK_THROWS_AS(
        net::build_network({4}, {net::LayerSpec::softmax_xent_head(),
                                 net::LayerSpec::dense(2, true)}),
        ConfigError);  // layer after head
    auto nw = small_mlp(4, 8, 3);
    CHECK(nw.out_count == 3);
    CHECK(nw.layers[0].name == "dense0");
    CHECK(nw.layers[2].name == "dense1");
    CHECK(nw.layers[2].final_compute);
    CHECK(nw.trainable_weight_count() == 4 * 8 + 8 * 3);
}

TEST_CASE("float forward: hand-computed 2-class cross entropy") {
    auto nw = net::build_network(
        {2}, {net::LayerSpec::dense(2, true, true), net::LayerSpec::softmax_xent_head()});
    // logits = W x + b with W = [[1, -1], [0, 2]], b = [0.5, -0.5]
    nw.layers[0].w = {1.0, -1.0, 0.0, 2.0};
    nw.layers[0].b = {0.5, -0.5};
    net::Batch batch;
    batch.size = 1;
    batch.inputs = {0.3, 0.7};
    batch.labels = {1};
    double l0 = 1.0 * 0.3 - 1.0 * 0.7 + 0.5;   // 0.1
    double l1 = 0.0 * 0.3 + 2.0 * 0.7 - 0.5;   // 0.9
    double want = std::log(std::exp(l0) + std::exp(l1)) - l1;
    CHECK(net::forward_loss(nw, batch, net::Mode::Float) == doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("float forward: uniform logits give ln(C)") {
    auto nw = small_mlp(6, 10, 4);  // all-zero parameters
    net::Batch batch;
    batch.size = 3;
    batch.inputs.assign(18, 0.37);
    batch.labels = {0, 2, 3};
    CHECK(net::forward_loss(nw, batch, net::Mode::Float) ==
          doctest::Approx(std::log(4.0)).epsilon(1e-12));
}

TEST_CASE("mse head: closed-form quadratic loss for a linear model") {
    auto nw = net::build_network(
        {1}, {net::LayerSpec::dense(1, true, false), net::LayerSpec::mse_head()});
    nw.layers[0].w = {0.8};
    net::Batch batch;
    batch.size = 2;
    batch.inputs = {1.0, -2.0};
    batch.targets = {1.0, -1.0};
    // loss = mean over samples of (w*x - t)^2
    double want = (std::pow(0.8 - 1.0, 2) + std::pow(-1.6 + 1.0, 2)) / 2.0;
    CHECK(net::forward_loss(nw, batch, net::Mode::Float) == doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("conv2d float forward: hand-computed single kernel") {
    auto nw = net::build_network({1, 3, 3}, {net::LayerSpec::conv2d(1, 2, 2, 1, true, false),
                                             net::LayerSpec::flatten(),
                                             net::LayerSpec::mse_head()});
    nw.layers[0].w = {1.0, 2.0, 3.0, 4.0};
    net::Batch batch;
    batch.size = 1;
    batch.inputs = {1, 2, 3, 4, 5, 6, 7, 8, 9};
    batch.targets = {0, 0, 0, 0};
    auto logits = net::forward_logits_float(nw, batch);
    // window at (0,0): 1*1 + 2*2 + 4*3 + 5*4 = 37
    CHECK(logits[0] == doctest::Approx(37.0));
    CHECK(logits[1] == doctest::Approx(1 * 2 + 2 * 3 + 3 * 5 + 4 * 6));
    CHECK(logits[2] == doctest::Approx(1 * 4 + 2 * 5 + 3 * 7 + 4 * 8));
    CHECK(logits[3] == doctest::Approx(1 * 5 + 2 * 6 + 3 * 8 + 4 * 9));
}

TEST_CASE("quantized forward tracks the float path closely (16w8a)") {
    auto ds = data::make_blobs(8, 3, 256, 3.0, 11);
    auto nw = small_mlp(8, 16, 3, false);
    net::init_params(nw, 5);
    net::Batch batch = data::full_batch(ds);
    double lf = net::forward_loss(nw, batch, net::Mode::Float);
    net::quantize_weights(nw, 16);
    net::calibrate_activations(nw, batch, 8);
    double lq = net::forward_loss(nw, batch, net::Mode::Quantized);
    CHECK(std::abs(lq - lf) <= 0.05);
    double af = net::accuracy(nw, batch, net::Mode::Float);
    double aq = net::accuracy(nw, batch, net::Mode::Quantized);
    CHECK(std::abs(aq - af) <= 0.05);
}

TEST_CASE("quantized forward: determinism and precondition errors") {
    auto ds = data::make_blobs(4, 2, 64, 3.0, 3);
    auto nw = small_mlp(4, 8, 2, false);
    net::init_params(nw, 9);
    net::Batch batch = data::full_batch(ds);
    CHECK_THROWS_AS(net::forward_loss(nw, batch, net::Mode::Quantized), ConfigError);
    CHECK_THROWS_AS(net::calibrate_activations(nw, batch), ConfigError);
    net::quantize_weights(nw, 16);
    CHECK_THROWS_AS(net::forward_loss(nw, batch, net::Mode::Quantized), ConfigError);
    net::calibrate_activations(nw, batch);
    double a = net::forward_loss(nw, batch, net::Mode::Quantized);
    double b = net::forward_loss(nw, batch, net::Mode::Quantized);
    CHECK(a == b);
}

TEST_CASE("quantize_weights freezes per-tensor scales from max |w|") {
    auto nw = small_mlp(4, 8, 2, false);
    net::init_params(nw, 1);
    double wmax = 0.0;
    for (double v : nw.layers[0].w) wmax = std::max(wmax, std::fabs(v));
    net::quantize_weights(nw, 16);
    CHECK(nw.layers[0].w_q.params.delta == doctest::Approx(wmax / 32767.0).epsilon(1e-15));
    for (size_t i = 0; i < nw.layers[0].w.size(); ++i)
        CHECK(std::abs(nw.layers[0].w_q.data[i] * nw.layers[0].w_q.params.delta -
                       nw.layers[0].w[i]) <= nw.layers[0].w_q.params.delta / 2 + 1e-15);
    net::sync_float_from_quant(nw);
    CHECK(nw.layers[0].w[0] ==
          nw.layers[0].w_q.data[0] * nw.layers[0].w_q.params.delta);
}

TEST_CASE("forward_loss errors: bad labels and non-finite loss") {
    auto nw = small_mlp(2, 4, 2);
    net::Batch batch;
    batch.size = 1;
    batch.inputs = {0.1, 0.2};
    batch.labels = {5};
    CHECK_THROWS_AS(net::forward_loss(nw, batch, net::Mode::Float), DataError);

    auto lin = net::build_network(
        {1}, {net::LayerSpec::dense(1, true, false), net::LayerSpec::mse_head()});
    lin.layers[0].w = {1e200};
    net::Batch b2;
    b2.size = 1;
    b2.inputs = {1e200};
    b2.targets = {0.0};
    CHECK_THROWS_AS(net::forward_loss(lin, b2, net::Mode::Float), NumericError);
}

TEST_CASE("memory accounting: BP grows with depth, FF stays flat") {
    auto make_deep = [](int depth) {
        std::vector<net::LayerSpec> specs;
        for (int i = 0; i < depth; ++i) {
            specs.push_back(net::LayerSpec::dense(32, true, false));
            specs.push_back(net::LayerSpec::relu());
        }
        specs.push_back(net::LayerSpec::dense(4, true, false));
        specs.push_back(net::LayerSpec::softmax_xent_head());
        return net::build_network({32}, specs);
    };
    std::vector<size_t> bp, ff;
    for (int d = 1; d <= 5; ++d) {
        auto nw = make_deep(d);
        bp.push_back(net::scratch_memory_bytes(nw, 8, net::TrainingKind::Bp, net::Mode::Float));
        ff.push_back(net::scratch_memory_bytes(nw, 8, net::TrainingKind::Ff, net::Mode::Float));
    }
    // BP: each extra block adds exactly (dense out + relu out) activations.
    size_t per_block = bp[1] - bp[0];
    CHECK(per_block == 2u * 32u * 8u * 2u);
    for (size_t i = 2; i < bp.size(); ++i) CHECK(bp[i] - bp[i - 1] == per_block);
    for (size_t i = 1; i < ff.size(); ++i) CHECK(ff[i] == ff[0]);
}

TEST_CASE("memory accounting: one-layer model makes BP and FF scratch equal") {
    auto nw = net::build_network({16}, {net::LayerSpec::dense(4, true, false),
                                        net::LayerSpec::softmax_xent_head()});
    CHECK(net::scratch_memory_bytes(nw, 8, net::TrainingKind::Bp, net::Mode::Float) ==
          net::scratch_memory_bytes(nw, 8, net::TrainingKind::Ff, net::Mode::Float));
}

TEST_CASE("memory accounting: quantized activation bytes are half of float") {
    auto nw = small_mlp(16, 32, 4, false);
    size_t grad = 16u * 32u * 4u;  // largest trainable tensor, 4-byte accumulator
    size_t ff_f = net::scratch_memory_bytes(nw, 8, net::TrainingKind::Ff, net::Mode::Float);
    size_t ff_q = net::scratch_memory_bytes(nw, 8, net::TrainingKind::Ff, net::Mode::Quantized);
    CHECK(ff_q - grad == (ff_f - grad) / 2);
}

TEST_CASE("instrumented quantized peak matches the accounting model") {
    auto ds = data::make_blobs(16, 4, 32, 3.0, 21);
    auto nw = small_mlp(16, 32, 4, false);
    net::init_params(nw, 2);
    net::Batch batch = data::full_batch(ds);
    net::quantize_weights(nw, 16);
    net::calibrate_activations(nw, batch, 8);
    nw.peak_act_elems = 0;
    net::forward_loss(nw, batch, net::Mode::Quantized);
    size_t model =
        net::scratch_memory_bytes(nw, batch.size, net::TrainingKind::Inference,
                                  net::Mode::Quantized);  // 1 byte per element
    CHECK(nw.peak_act_elems == model);
}
