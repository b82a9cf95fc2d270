#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <sstream>

#include "progdit/errors.hpp"
#include "progdit/rng.hpp"
#include "progdit/trainer.hpp"

using namespace progdit;

TEST_CASE("learning-rate schedule endpoints and shape") {
  TrainConfig cfg;
  cfg.base_lr = 5e-5;
  cfg.total_steps = 2000;
  cfg.warmup_fraction = 0.05;
  cfg.t0_fraction = 0.25;
  cfg.t_mult = 2.0;
  CHECK(lr_at(0, cfg) == 0.0);
  const int64_t warmup = 100;
  CHECK(lr_at(warmup, cfg) == 5e-5);  // exact at warmup end
  // mid-first-cycle: T0 = 0.25 * 1900 = 475 -> tau = 237.5 ~ use even point
  const int64_t t0 = 475;
  // lr(warmup + T0/2) == base/2 up to the integer grid
  const double mid = lr_at(warmup + t0 / 2, cfg);
  CHECK(mid == doctest::Approx(2.5e-5).epsilon(0.01));
  // linearity inside warmup
  CHECK(lr_at(50, cfg) == doctest::Approx(2.5e-5).epsilon(1e-12));
  // restart boundary: new cycle starts back at base_lr
  CHECK(lr_at(warmup + t0, cfg) == doctest::Approx(5e-5).epsilon(1e-12));
  // second cycle is twice as long; its midpoint is base/2 again
  CHECK(lr_at(warmup + t0 + t0, cfg) == doctest::Approx(2.5e-5).epsilon(0.01));
  CHECK_THROWS_AS(lr_at(-1, cfg), std::out_of_range);
  CHECK_THROWS_AS(lr_at(2001, cfg), std::out_of_range);
}

TEST_CASE("lr schedule is continuous within cycles") {
  TrainConfig cfg;
  cfg.base_lr = 1e-3;
  cfg.total_steps = 400;
  double prev = lr_at(0, cfg);
  for (int64_t s = 1; s <= 400; ++s) {
    const double cur = lr_at(s, cfg);
    // jumps only at restarts, where lr snaps back up to base
    if (cur < prev) CHECK(prev - cur < 1e-3 * 0.05);
    prev = cur;
  }
}

TEST_CASE("config validation") {
  TrainConfig cfg;
  cfg.warmup_fraction = 0.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = TrainConfig{};
  cfg.total_steps = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = TrainConfig{};
  cfg.loss_weight = "quadratic";
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  CHECK(TrainConfig{}.base_lr == 5e-5);  // published learning rate default
  CHECK(TrainConfig{}.warmup_fraction == 0.05);
}

TEST_CASE("adamw single closed-form step on f(x) = x^2") {
  ParamStore store;
  store.set_dtype(DType::kF64);
  auto& x = store.declare("x", {1}, DType::kF64);
  x.set_value(0, 1.0);
  TrainConfig cfg;
  cfg.beta1 = 0.9;
  cfg.beta2 = 0.999;
  cfg.eps = 1e-8;
  cfg.weight_decay = 0.01;
  AdamW opt(store, cfg);
  x.grad<double>()[0] = 2.0;  // d/dx x^2 at x=1
  const double lr = 1e-2;
  opt.step(lr);
  // closed form: m=0.2, v=0.004, mhat=2, vhat=4, upd=2/(2+eps)
  const double expect = 1.0 - lr * (2.0 / (2.0 + 1e-8)) - lr * 0.01 * 1.0;
  CHECK(x.value_at(0) == doctest::Approx(expect).epsilon(1e-14));
}

TEST_CASE("adamw leaves parameters alone with zero grad and zero decay") {
  ParamStore store;
  store.set_dtype(DType::kF64);
  auto& x = store.declare("x", {3}, DType::kF64);
  for (int64_t i = 0; i < 3; ++i) x.set_value(i, 1.0 + i);
  TrainConfig cfg;
  cfg.weight_decay = 0.0;
  AdamW opt(store, cfg);
  x.grad<double>();  // allocate zero grads
  opt.step(1e-3);
  for (int64_t i = 0; i < 3; ++i) CHECK(x.value_at(i) == 1.0 + i);
}

TEST_CASE("weight decay alone shrinks parameters") {
  ParamStore store;
  store.set_dtype(DType::kF64);
  auto& x = store.declare("x", {2}, DType::kF64);
  x.set_value(0, 2.0);
  x.set_value(1, -3.0);
  TrainConfig cfg;
  cfg.weight_decay = 0.1;
  AdamW opt(store, cfg);
  for (int s = 0; s < 5; ++s) {
    x.zero_grad();
    x.grad<double>();  // zeros
    const double before0 = std::abs(x.value_at(0));
    const double before1 = std::abs(x.value_at(1));
    opt.step(1e-2);
    CHECK(std::abs(x.value_at(0)) < before0);
    CHECK(std::abs(x.value_at(1)) < before1);
  }
}

TEST_CASE("decoupled decay is independent of parameter magnitude") {
  // identical gradients at different parameter scales: step direction and
  // size (without decay) must match, unlike an L2-in-loss formulation where
  // the gradient itself would differ
  auto one_step = [](double init, double wd) {
    ParamStore store;
    store.set_dtype(DType::kF64);
    auto& x = store.declare("x", {1}, DType::kF64);
    x.set_value(0, init);
    TrainConfig cfg;
    cfg.weight_decay = wd;
    AdamW opt(store, cfg);
    x.grad<double>()[0] = 1.3;
    opt.step(1e-2);
    return init - x.value_at(0);  // applied delta
  };
  const double d_small = one_step(0.1, 0.0);
  const double d_large = one_step(100.0, 0.0);
  CHECK(d_small == doctest::Approx(d_large).epsilon(1e-12));

  // the L2-in-loss oracle: gradient 1.3 + wd*theta gives magnitude-dependent
  // updates even at wd equivalent settings
  auto l2_step = [](double init, double wd) {
    ParamStore store;
    store.set_dtype(DType::kF64);
    auto& x = store.declare("x", {1}, DType::kF64);
    x.set_value(0, init);
    TrainConfig cfg;
    cfg.weight_decay = 0.0;
    AdamW opt(store, cfg);
    x.grad<double>()[0] = 1.3 + wd * init;
    opt.step(1e-2);
    return init - x.value_at(0);
  };
  CHECK(l2_step(0.1, 0.1) != doctest::Approx(l2_step(100.0, 0.1)).epsilon(1e-6));
}

TEST_CASE("optimizer state serializes and restores exactly") {
  ParamStore store;
  store.set_dtype(DType::kF32);
  auto& x = store.declare("x", {4}, DType::kF32);
  Rng rng(3);
  fill_randn(x, rng, 1.0);
  TrainConfig cfg;
  AdamW opt(store, cfg);
  for (int s = 0; s < 3; ++s) {
    x.zero_grad();
    auto g = x.grad<float>();
    for (auto& v : g) v = static_cast<float>(rng.normal());
    opt.step(1e-3);
  }
  std::stringstream ss;
  opt.save_state(ss);

  ParamStore store2;
  store2.set_dtype(DType::kF32);
  auto& y = store2.declare("x", {4}, DType::kF32);
  for (int64_t i = 0; i < 4; ++i) y.set_value(i, x.value_at(i));
  AdamW opt2(store2, cfg);
  opt2.load_state(ss);
  CHECK(opt2.step_count() == opt.step_count());

  // identical next step on both
  x.zero_grad();
  y.zero_grad();
  auto gx = x.grad<float>();
  auto gy = y.grad<float>();
  for (size_t i = 0; i < 4; ++i) {
    gx[i] = 0.25f * static_cast<float>(i + 1);
    gy[i] = 0.25f * static_cast<float>(i + 1);
  }
  opt.step(2e-3);
  opt2.step(2e-3);
  for (int64_t i = 0; i < 4; ++i) CHECK(x.value_at(i) == y.value_at(i));
}

TEST_CASE("loss weight hook scales the objective linearly") {
  const auto w1 = make_loss_weight("constant");
  CHECK(w1(5) == 1.0);
  CHECK_THROWS_AS(make_loss_weight("nope"), ConfigError);
}
