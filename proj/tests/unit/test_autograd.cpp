#include "doctest.h"
#include "gradcheck.hpp"
#include "test_util.hpp"

#include "diffscope/adam.hpp"
#include "diffscope/unet.hpp"

#include <cmath>
#include <limits>

using namespace diffscope;
using testutil::random_tensor;

namespace {

constexpr double kTol = 1e-4;

// Quadratic readout against fixed random targets, so every gradient entry is generically nonzero.
Var readout(Tape<double>& tape, Var y, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    Var target = tape.constant(random_tensor<double>(tape.value(y).shape(), rng));
    return tape.mse(y, target);
}

}  // namespace

TEST_CASE("linear gradient of sum(W x)") {
    ParamStore<double> params;
    Tensor<double> w({1, 3}, 0.5), b({1});
    params.add("w", w);
    params.add("b", b);
    Tensor<double> x({1, 3}, std::vector<double>{1.0, -2.0, 4.0});
    Tape<double> tape;
    Var loss = tape.sum(tape.linear(tape.constant(x), tape.param(params, "w"), tape.param(params, "b")));
    auto grads = backward(tape, loss, params);
    CHECK(grads.at("w") == x);
    CHECK(grads.at("b")[0] == 1.0);
}

TEST_CASE("unused parameters and empty tapes give zero gradients") {
    ParamStore<double> params;
    params.add("used", Tensor<double>({2}, 1.0));
    params.add("unused", Tensor<double>({3}, 1.0));
    Tape<double> empty;
    auto zeros = empty.gradients(params);
    for (const auto& [name, g] : zeros) {
        for (auto v : g.data()) CHECK(v == 0.0);
    }
    Tape<double> tape;
    auto grads = backward(tape, tape.sum(tape.param(params, "used")), params);
    for (auto v : grads.at("unused").data()) CHECK(v == 0.0);
    for (auto v : grads.at("used").data()) CHECK(v == 1.0);
}

TEST_CASE("backward rejects non-scalar losses") {
    ParamStore<double> params;
    params.add("p", Tensor<double>({2}, 1.0));
    Tape<double> tape;
    Var p = tape.param(params, "p");
    CHECK_THROWS_AS(tape.backward(p), UsageError);
}

TEST_CASE("finite-difference check per layer type") {
    std::mt19937_64 rng(2024);
    ParamStore<double> params;
    params.add("x", random_tensor<double>({2, 4, 5, 5}, rng));
    params.add("conv.w", random_tensor<double>({3, 4, 3, 3}, rng, 0.5));
    params.add("conv.b", random_tensor<double>({3}, rng));
    params.add("convt.w", random_tensor<double>({4, 2, 4, 4}, rng, 0.5));
    params.add("convt.b", random_tensor<double>({2}, rng));
    params.add("gn.g", random_tensor<double>({4}, rng));
    params.add("gn.b", random_tensor<double>({4}, rng));
    params.add("v", random_tensor<double>({2, 6}, rng));
    params.add("lin.w", random_tensor<double>({4, 6}, rng));
    params.add("lin.b", random_tensor<double>({4}, rng));
    params.add("table", random_tensor<double>({5, 4}, rng));

    SUBCASE("conv2d, stride 2") {
        auto r = testutil::grad_check(
            [](Tape<double>& t, const ParamStore<double>& p) {
                return readout(t, t.conv2d(t.param(p, "x"), t.param(p, "conv.w"), t.param(p, "conv.b"), {2, 1}), 1);
            },
            params);
        INFO(r.worst_param);
        CHECK(r.worst_rel < kTol);
    }
    SUBCASE("conv_transpose2d") {
        auto r = testutil::grad_check(
            [](Tape<double>& t, const ParamStore<double>& p) {
                return readout(t, t.conv_transpose2d(t.param(p, "x"), t.param(p, "convt.w"), t.param(p, "convt.b"), {2, 1}),
                               2);
            },
            params);
        INFO(r.worst_param);
        CHECK(r.worst_rel < kTol);
    }
    SUBCASE("group_norm") {
        auto r = testutil::grad_check(
            [](Tape<double>& t, const ParamStore<double>& p) {
                return readout(t, t.group_norm(t.param(p, "x"), 2, t.param(p, "gn.g"), t.param(p, "gn.b"), 1e-5), 3);
            },
            params);
        INFO(r.worst_param);
        CHECK(r.worst_rel < kTol);
    }
    SUBCASE("silu") {
        auto r = testutil::grad_check(
            [](Tape<double>& t, const ParamStore<double>& p) { return readout(t, t.silu(t.param(p, "x")), 4); }, params);
        INFO(r.worst_param);
        CHECK(r.worst_rel < kTol);
    }
    SUBCASE("linear") {
        auto r = testutil::grad_check(
            [](Tape<double>& t, const ParamStore<double>& p) {
                return readout(t, t.linear(t.param(p, "v"), t.param(p, "lin.w"), t.param(p, "lin.b")), 5);
            },
            params);
        INFO(r.worst_param);
        CHECK(r.worst_rel < kTol);
    }
    SUBCASE("channel offset, concat, gather") {
        auto r = testutil::grad_check(
            [](Tape<double>& t, const ParamStore<double>& p) {
                Var e = t.gather_rows(t.param(p, "table"), {3, 1});
                Var h = t.add_channel_offset(t.param(p, "x"), e);
                return readout(t, t.concat_channels(h, t.param(p, "x")), 6);
            },
            params);
        INFO(r.worst_param);
        CHECK(r.worst_rel < kTol);
    }
}

TEST_CASE("finite-difference check through a composed 2-level unet") {
    UnetConfig cfg;
    cfg.levels = 2;
    // Width 16 keeps two channels per norm group; with one channel per group the
    // per-channel time offset is normalised away and its gradient is identically zero.
    cfg.base_channels = 16;
    cfg.channel_mult = {1, 2};
    cfg.time_embed_dim = 8;
    cfg.num_classes = 3;
    cfg.image_channels = 2;
    cfg.image_side = 4;
    cfg.max_timestep = 10;
    auto params = init_unet_params<double>(cfg, 17);
    std::mt19937_64 rng(99);
    auto x = random_tensor<double>({2, 2, 4, 4}, rng);
    auto eps = random_tensor<double>({2, 2, 4, 4}, rng);
    const std::vector<int> ts{3, 9};
    const std::vector<int> cls{0, 2};

    for (InterventionMask mask : {InterventionMask{0, 0}, InterventionMask{1, 0}, InterventionMask{0, 1}}) {
        CAPTURE(mask.str());
        auto r = testutil::grad_check(
            [&](Tape<double>& t, const ParamStore<double>& p) {
                Var pred = unet_forward(t, p, cfg, t.constant(x), ts, cls, mask);
                return t.mse(pred, t.constant(eps));
            },
            params, 1e-3, 32);
        INFO(r.worst_param);
        CHECK(r.checked >= 32 * 20);
        CHECK(r.worst_rel < kTol);
    }
}

TEST_CASE("adam first step moves by lr against the gradient sign") {
    ParamStore<double> params;
    params.add("w", Tensor<double>({3}, std::vector<double>{1.0, 2.0, 3.0}));
    Gradients<double> grads{{"w", Tensor<double>({3}, std::vector<double>{0.5, -2.0, 7.0})}};
    AdamState<double> state;
    AdamConfig cfg;
    cfg.lr = 0.01;
    adam_step(params, grads, state, cfg);
    CHECK(params.get("w")[0] == doctest::Approx(1.0 - 0.01).epsilon(1e-6));
    CHECK(params.get("w")[1] == doctest::Approx(2.0 + 0.01).epsilon(1e-6));
    CHECK(params.get("w")[2] == doctest::Approx(3.0 - 0.01).epsilon(1e-6));
}

TEST_CASE("adam with zero gradient leaves parameters unchanged") {
    ParamStore<double> params;
    params.add("w", Tensor<double>({2}, 1.5));
    AdamState<double> state;
    adam_step(params, Gradients<double>{{"w", Tensor<double>({2})}}, state, AdamConfig{});
    CHECK(params.get("w")[0] == 1.5);
    CHECK(params.get("w")[1] == 1.5);
}

TEST_CASE("adam two steps on f(w) = (w - 3)^2 match a hand calculation") {
    // w0 = 0, lr = 0.1, b1 = 0.9, b2 = 0.999, eps = 1e-8.
    // step 1: g = -6, m = -0.6, v = 0.036, mhat = -6, vhat = 36, w1 = 0 + 0.1 * 6 / (6 + 1e-8)
    // step 2: g = 2 (w1 - 3), m = 0.9 m + 0.1 g, v = 0.999 v + 0.001 g^2, bias-corrected with 0.19 / 0.001999.
    ParamStore<double> params;
    params.add("w", Tensor<double>({1}, 0.0));
    AdamState<double> state;
    AdamConfig cfg{0.1, 0.9, 0.999, 1e-8};
    auto grad = [&] { return Gradients<double>{{"w", Tensor<double>({1}, 2.0 * (params.get("w")[0] - 3.0))}}; };

    adam_step(params, grad(), state, cfg);
    const double w1 = 0.1 * 6.0 / (6.0 + 1e-8);
    CHECK(std::abs(params.get("w")[0] - w1) < 1e-10);

    adam_step(params, grad(), state, cfg);
    const double g2 = 2.0 * (w1 - 3.0);
    const double m2 = 0.9 * -0.6 + 0.1 * g2;
    const double v2 = 0.999 * 0.036 + 0.001 * g2 * g2;
    const double w2 = w1 - 0.1 * (m2 / 0.19) / (std::sqrt(v2 / (1.0 - 0.999 * 0.999)) + 1e-8);
    CHECK(std::abs(params.get("w")[0] - w2) < 1e-10);
    CHECK(state.step == 2);
}

TEST_CASE("adam aborts on NaN gradients and names the layer") {
    ParamStore<double> params;
    params.add("enc1.conv1.w", Tensor<double>({2}, 1.0));
    Gradients<double> grads{{"enc1.conv1.w", Tensor<double>({2}, std::vector<double>{0.0, std::nan("")})}};
    AdamState<double> state;
    try {
        adam_step(params, grads, state, AdamConfig{});
        FAIL("expected NonFiniteGradient");
    } catch (const NonFiniteGradient& e) {
        CHECK(std::string(e.what()).find("enc1.conv1.w") != std::string::npos);
    }
    CHECK(params.get("enc1.conv1.w")[0] == 1.0);
}
