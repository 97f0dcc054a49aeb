#include <doctest.h>

#include <filesystem>

#include "support/suites.hpp"
#include "yynet/errors.hpp"
#include "yynet/optim.hpp"

using namespace yynet;
using namespace yynet::testing;

TEST_SUITE("optim") {
  TEST_CASE("optimizer, schedule, clipping and EMA oracles") {
    const auto dir = std::filesystem::temp_directory_path() / "yynet_unit_optim";
    const auto outcomes = optimizer_suite(dir);
    CHECK(outcomes.size() >= 8);
    for (const auto& o : outcomes) {
      INFO(o.name << ": " << o.detail);
      CHECK(o.pass);
    }
    std::filesystem::remove_all(dir);
  }

  TEST_CASE("one-cycle endpoints and shape") {
    const OneCycleConfig oc;
    const std::size_t total = 1000;
    CHECK(onecycle_peak_step(total, oc) == 300);
    CHECK(onecycle_lr(0, total, 1e-2, oc) == doctest::Approx(1e-2 / 25).epsilon(1e-12));
    CHECK(onecycle_lr(total - 1, total, 1e-2, oc) == doctest::Approx(1e-2 / 1e4).epsilon(1e-12));
    for (std::size_t s = 1; s <= 300; ++s) CHECK(onecycle_lr(s, total, 1e-2, oc) >= onecycle_lr(s - 1, total, 1e-2, oc));
    for (std::size_t s = 301; s < total; ++s) CHECK(onecycle_lr(s, total, 1e-2, oc) <= onecycle_lr(s - 1, total, 1e-2, oc));
    CHECK_THROWS_AS(onecycle_lr(total, total, 1e-2, oc), StateError);
    // Degenerate lengths still peak at max_lr.
    CHECK(onecycle_lr(0, 1, 1e-2, oc) == 1e-2);
    CHECK(onecycle_lr(1, 2, 1e-2, oc) == doctest::Approx(1e-6));
  }

  TEST_CASE("value clipping and non-finite gradients") {
    Tensor<double> w(Shape{4}, {1, 2, 3, 4});
    nn::NamedTensors<double> params{{"w", w}};
    auto g = w.mutable_grad();
    g[0] = 5, g[1] = -5, g[2] = 0.5, g[3] = -0.25;
    clip_values(params, 1.0);
    CHECK(w.grad()[0] == 1.0);
    CHECK(w.grad()[1] == -1.0);
    CHECK(w.grad()[2] == 0.5);
    AdamWState<double> st;
    st.reset(params);
    w.mutable_grad()[3] = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(adamw_step(params, st, 1e-3, 0.0, AdamWHyper{}), TrainingDivergedError);
  }

  TEST_CASE("weight decay acts even without gradient") {
    Tensor<double> w(Shape{2}, {1.0, -2.0});
    nn::NamedTensors<double> params{{"w", w}};
    AdamWState<double> st;
    st.reset(params);
    adamw_step(params, st, 0.1, 0.5, AdamWHyper{});
    CHECK(w.data()[0] == doctest::Approx(1.0 - 0.1 * 0.5 * 1.0));
    CHECK(w.data()[1] == doctest::Approx(-2.0 + 0.1 * 0.5 * 2.0));
    CHECK(coupled_weight_decay(2e-3, 1.56) == doctest::Approx(3.12e-3));
  }

  TEST_CASE("EMA swap is an involution") {
    Tensor<float> w(Shape{3}, {1, 2, 3});
    nn::NamedTensors<float> params{{"w", w}};
    Ema<float> ema;
    ema.start_step = 0;
    ema.update(params, 0);
    w.mutable_data()[0] = 10;
    ema.update(params, 1);  // shadow = 0.1*1 + 0.9*10
    ema.swap_into(params);
    CHECK(w.data()[0] == doctest::Approx(9.1f));
    ema.swap_into(params);
    CHECK(w.data()[0] == 10.f);
    CHECK(Ema<float>::activation_step(3128, 0.25) == 782);
  }

  TEST_CASE("train config validation") {
    TrainConfig t;
    t.validate();
    auto bad = t;
    bad.ema_avg_coeff = 0.2;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = t;
    bad.clip_norm = 0.0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = t;
    bad.batch_size = 0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    CHECK(parse_clip_mode(to_string(ClipMode::kValue)) == ClipMode::kValue);
  }
}
