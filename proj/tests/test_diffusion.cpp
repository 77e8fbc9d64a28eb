#include <chrono>

#include "anyglyph/diffusion.hpp"
#include "doctest.h"
#include "support.hpp"

using namespace anyglyph;
using testsupport::uniform;

namespace {

PredictorConfig small_config(InjectionMode mode) {
  PredictorConfig cfg;
  cfg.latent_channels = 3;
  cfg.base_channels = 8;
  cfg.channel_mult = {1, 2};
  cfg.attention_levels = {1};
  cfg.cond_dim = 6;
  cfg.num_tokens = 4;
  cfg.injection = mode;
  return cfg;
}

}  // namespace

TEST_CASE("linear schedule against a cumulative product oracle") {
  const NoiseSchedule s = make_schedule(1000, 1e-4, 0.02);
  long double prod = 1.0L;
  for (int i = 0; i < 1000; ++i) prod *= 1.0L - (1e-4L + (0.02L - 1e-4L) * i / 999.0L);
  CHECK(std::abs(s.alpha_bar_at(1000) - static_cast<double>(prod)) < 1e-12);
  CHECK(std::abs(s.alpha_bar_at(1000) - 4.04e-5) < 1e-6);
  CHECK(s.alpha_bar_at(1) > 0.99);
  for (int t = 2; t <= 1000; ++t) {
    REQUIRE(s.alpha_bar_at(t) < s.alpha_bar_at(t - 1));
    REQUIRE(s.beta_at(t) >= s.beta_at(t - 1));
  }
}

TEST_CASE("schedule edge cases") {
  const NoiseSchedule one = make_schedule(1, 0.01, 0.02);
  REQUIRE(one.alpha_bar.size() == 1);
  CHECK(one.alpha_bar[0] == doctest::Approx(0.99).epsilon(1e-15));
  CHECK_THROWS_AS(make_schedule(10, 1e-4, 1.0), InvalidRange);
  CHECK_THROWS_AS(make_schedule(10, 0.0, 0.02), InvalidRange);
  CHECK_THROWS_AS(make_schedule(10, 0.03, 0.02), InvalidRange);
  CHECK_THROWS_AS(make_schedule(0, 1e-4, 0.02), InvalidRange);
  CHECK_THROWS_AS(one.alpha_bar_at(2), StepOutOfRange);
  CHECK_THROWS_AS(one.alpha_bar_at(0), StepOutOfRange);
}

TEST_CASE("scaled short schedule spans signal to noise") {
  const NoiseSchedule s = scaled_linear_schedule(100);
  CHECK(s.alpha_bar_at(1) > 0.99);
  CHECK(s.alpha_bar_at(100) < 0.01);
  for (int t = 2; t <= 100; ++t) REQUIRE(s.alpha_bar_at(t) < s.alpha_bar_at(t - 1));
}

TEST_CASE("forward diffusion limits and marginal variance") {
  const NoiseSchedule s = make_schedule(1000, 1e-4, 0.02);
  Rng rng(3);
  const Tensor z0 = randn({4, 5, 5}, rng), eps = randn({4, 5, 5}, rng);
  const Tensor zero({4, 5, 5});
  const double ab = s.alpha_bar_at(300);
  CHECK(testsupport::max_abs_diff(forward_diffuse(zero, 300, eps, s), Tensor({4, 5, 5}, std::sqrt(1 - ab) * eps.data())) ==
        0.0);
  CHECK(testsupport::max_abs_diff(forward_diffuse(z0, 300, zero, s), Tensor({4, 5, 5}, std::sqrt(ab) * z0.data())) == 0.0);
  CHECK_THROWS_AS(forward_diffuse(z0, 1001, eps, s), StepOutOfRange);
  CHECK_THROWS_AS(forward_diffuse(z0, 5, Tensor({4, 5, 4}), s), ShapeMismatch);

  const Tensor big_eps = randn({100000}, rng);
  for (int t : {10, 500, 1000}) {
    const Tensor zt = forward_diffuse(Tensor({100000}), t, big_eps, s);
    const double mean = zt.data().mean();
    const double var = (zt.array() - mean).square().sum() / (zt.size() - 1);
    CHECK(std::abs(var - (1 - s.alpha_bar_at(t))) < 0.02 * (1 - s.alpha_bar_at(t)));
  }
  // Unit-variance signal: Var(z_t) = alpha_bar * 1 + (1 - alpha_bar).
  const Tensor sig = randn({100000}, rng);
  const Tensor zt = forward_diffuse(sig, 400, big_eps, s);
  const double mean = zt.data().mean();
  CHECK(std::abs((zt.array() - mean).square().sum() / (zt.size() - 1) - 1.0) < 0.02);
}

TEST_CASE("coarse denoise inverts forward diffusion") {
  const NoiseSchedule s = make_schedule(1000, 1e-4, 0.02);
  Rng rng(4);
  std::uniform_int_distribution<int> pick(1, 1000);
  double worst = 0;
  for (int i = 0; i < 200; ++i) {
    const int t = pick(rng);
    const Tensor z0 = randn({3, 4, 4}, rng), eps = randn({3, 4, 4}, rng);
    worst = std::max(worst, testsupport::max_abs_diff(coarse_denoise(forward_diffuse(z0, t, eps, s), eps, t, s), z0));
  }
  CHECK(worst < 1e-5);

  // alpha_bar = 1 leaves z_t untouched.
  NoiseSchedule ideal = s;
  ideal.alpha_bar[0] = 1.0;
  const Tensor zt = randn({2, 2, 2}, rng), junk = randn({2, 2, 2}, rng);
  CHECK(testsupport::max_abs_diff(coarse_denoise(zt, junk, 1, ideal), zt) == 0.0);

  // A unit error in eps_hat is amplified by sqrt(1 - ab) / sqrt(ab) at step T.
  const Tensor z0 = randn({2, 2, 2}, rng), eps = randn({2, 2, 2}, rng);
  Tensor off = eps;
  off.data().array() += 1.0;
  const Tensor err = coarse_denoise(forward_diffuse(z0, 1000, eps, s), off, 1000, s);
  const double ab = s.alpha_bar_at(1000);
  CHECK((err.data() - z0.data()).cwiseAbs().maxCoeff() == doctest::Approx(std::sqrt(1 - ab) / std::sqrt(ab)).epsilon(1e-9));

  // The literal variant divides by alpha_bar.
  const Tensor lit = coarse_denoise(zt, junk, 10, s, true);
  const double ab10 = s.alpha_bar_at(10);
  CHECK(testsupport::max_abs_diff(lit, Tensor(zt.dims(), (zt.data() - std::sqrt(1 - ab10) * junk.data()) / ab10)) < 1e-12);
}

TEST_CASE("noise predictor shape, determinism and conditioning sensitivity") {
  for (InjectionMode mode : {InjectionMode::input_add, InjectionMode::control_branch}) {
    ParamStore store;
    const NoisePredictor net(store, small_config(mode), 9);
    Rng rng(1);
    const Tensor zt = randn({3, 8, 8}, rng), za = randn({3, 8, 8}, rng);
    const Tensor c1 = randn({4, 6}, rng), c2 = randn({4, 6}, rng);
    const Tensor e1 = net.predict(zt, za, c1, 17);
    CHECK(e1.dims() == zt.dims());
    CHECK(e1.all_finite());
    CHECK(net.predict(zt, za, c1, 17).data() == e1.data());
    CHECK(testsupport::max_abs_diff(net.predict(zt, za, c2, 17), e1) > 0.0);
    CHECK(testsupport::max_abs_diff(net.predict(zt, za, c1, 18), e1) > 0.0);
    CHECK_THROWS_AS(net.predict(zt, randn({3, 4, 4}, rng), c1, 1), ShapeMismatch);
    CHECK_THROWS_AS(net.predict(zt, za, randn({5, 6}, rng), 1), ShapeMismatch);
    CHECK_THROWS_AS(net.predict(randn({3, 7, 7}, rng), randn({3, 7, 7}, rng), c1, 1), ShapeMismatch);
  }
}

TEST_CASE("input_add feeds z_a at the input; control branch starts as a no-op") {
  Rng rng(2);
  const Tensor zt = randn({3, 8, 8}, rng), za = randn({3, 8, 8}, rng), c = randn({4, 6}, rng);
  {
    ParamStore store;
    const NoisePredictor net(store, small_config(InjectionMode::input_add), 9);
    Tensor sum = zt;
    sum.data() += za.data();
    CHECK(net.predict(zt, za, c, 5).data() == net.predict(sum, Tensor(za.dims()), c, 5).data());
  }
  {
    ParamStore store;
    const NoisePredictor net(store, small_config(InjectionMode::control_branch), 9);
    CHECK(testsupport::max_abs_diff(net.predict(zt, za, c, 5), net.predict(zt, Tensor(za.dims()), c, 5)) == 0.0);
    CHECK(store.at("control.enc.conv_in.w").value.data() == store.at("unet.enc.conv_in.w").value.data());
  }
}

TEST_CASE("noise predictor gradients match finite differences") {
  for (InjectionMode mode : {InjectionMode::input_add, InjectionMode::control_branch}) {
    ParamStore store;
    const NoisePredictor net(store, small_config(mode), 4);
    // Give the zero-initialised projections some weight so every path is exercised.
    Rng rng(5);
    for (Parameter* p : store.group("control.proj")) init_normal(*p, 0.1, rng);
    const Tensor zt = randn({3, 8, 8}, rng), za = randn({3, 8, 8}, rng), c = randn({4, 6}, rng);
    auto f = [&](Tape& t) { return ag::mean(net(t, t.constant(zt), t.constant(za), t.constant(c), 7)); };
    const auto r = testsupport::check_param_grads(f, store.all(), 1);
    CHECK(r.rel_error < 1e-4);
    const auto rz = testsupport::check_input_grad(
        [&](Tape& t, const Var& v) { return ag::mean(net(t, t.constant(zt), v, t.constant(c), 7)); }, za);
    CHECK(rz.rel_error < 1e-4);
    const auto rc = testsupport::check_input_grad(
        [&](Tape& t, const Var& v) { return ag::mean(net(t, t.constant(zt), t.constant(za), v, 7)); }, c);
    CHECK(rc.rel_error < 1e-4);
  }
}

TEST_CASE("desk-size predictor cost") {
  ParamStore store;
  PredictorConfig cfg;
  const NoisePredictor net(store, cfg, 1);
  Rng rng(1);
  const Tensor zt = randn({12, 16, 16}, rng), za = randn({12, 16, 16}, rng), c = randn({16, 64}, rng);
  const auto start = std::chrono::steady_clock::now();
  for (int i = 0; i < 5; ++i) {
    Tape t;
    t.backward(ag::mean(net(t, t.constant(zt), t.constant(za), t.constant(c), 3)));
  }
  const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count() / 5;
  MESSAGE("forward+backward: " << ms << " ms, params " << store.scalar_count());
}
