// Copyright Contributors to the genassets project
// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "genassets/diffusion.hpp"

using namespace ga;

TEST_CASE("noise schedules: endpoints, first step, monotonic alpha_bar") {
  for (auto kind : {ScheduleKind::kLinear, ScheduleKind::kCosine}) {
    auto s = make_schedule(kind, 1000);
    CHECK(s.alpha_bar[1] == doctest::Approx(s.alpha[1]).epsilon(1e-12));
    for (int t = 1; t <= 1000; ++t) {
      CHECK(s.beta[static_cast<std::size_t>(t)] > 0.0);
      CHECK(s.beta[static_cast<std::size_t>(t)] < 1.0);
      CHECK(s.alpha_bar[static_cast<std::size_t>(t)] < s.alpha_bar[static_cast<std::size_t>(t - 1)]);
    }
  }
  auto lin = make_schedule(ScheduleKind::kLinear, 1000);
  CHECK(lin.beta[1] == doctest::Approx(1e-4).epsilon(1e-12));
  CHECK(lin.beta[1000] == doctest::Approx(2e-2).epsilon(1e-12));
  CHECK_THROWS_AS(make_schedule(ScheduleKind::kLinear, 0), ValueError);
}

TEST_CASE("q_sample: limits and Monte-Carlo variance") {
  auto sched = make_schedule(ScheduleKind::kLinear, 100);
  Rng rng(3);
  auto c0 = Tensorf::randn({2, 2, 2}, rng);
  auto eps = Tensorf::randn({2, 2, 2}, rng);

  // t = 1 with tiny beta: nearly the identity.
  auto c1 = q_sample(c0, 1, eps, sched);
  for (std::int64_t i = 0; i < c0.numel(); ++i)
    CHECK(c1.data()[i] == doctest::Approx(c0.data()[i]).epsilon(0.02));

  // Algebraic identity at any t.
  const int t = 60;
  auto ct = q_sample(c0, t, eps, sched);
  for (std::int64_t i = 0; i < c0.numel(); ++i) {
    const double expect = sched.sqrt_ab(t) * c0.data()[i] + sched.sqrt_1mab(t) * eps.data()[i];
    CHECK(ct.data()[i] == doctest::Approx(expect).epsilon(1e-6));
  }

  // Var(c_t) = ab * Var(c0) + (1 - ab) over draws from a fixed dataset.
  Rng rng2(4);
  std::vector<float> data(64);
  for (auto& v : data) v = static_cast<float>(rng2.normal() * 1.7 + 0.4);
  double var0 = 0, mean0 = 0;
  for (auto v : data) mean0 += v / 64;
  for (auto v : data) var0 += (v - mean0) * (v - mean0) / 64;
  const int tt = 40;
  double sum = 0, sq = 0;
  const int n = 10000;
  for (int i = 0; i < n; ++i) {
    Rng draw(static_cast<std::uint64_t>(i) + 1000);
    const float c0v = data[static_cast<std::size_t>(draw.uniform_int(0, 63))];
    auto out = q_sample(Tensorf::scalar(c0v), tt,
                        Tensorf::scalar(static_cast<float>(draw.normal())), sched);
    sum += out.item();
    sq += out.item() * out.item();
  }
  const double m = sum / n;
  const double var = sq / n - m * m;
  const double ab = sched.alpha_bar[tt];
  CHECK(var == doctest::Approx(ab * var0 + (1 - ab)).epsilon(0.02));
}

TEST_CASE("diffusion residual and v-target identities") {
  Rng rng(5);
  auto sched = make_schedule(ScheduleKind::kLinear, 10);
  auto pred = Tensorf::randn({2, 2, 2}, rng);
  CHECK(diffusion_residual(pred, pred, 1.f).item() == 0.f);  // oracle injection

  // Monte-Carlo: constant zero prediction against standard-normal targets
  // gives 0.5 per element.
  double acc = 0;
  const int n = 4000;
  for (int i = 0; i < n; ++i) {
    Rng r(static_cast<std::uint64_t>(i));
    auto eps = Tensorf::randn({4}, r);
    acc += diffusion_residual(Tensorf::zeros({4}), eps, 1.f).item();
  }
  CHECK(acc / n == doctest::Approx(0.5).epsilon(0.05));

  // v at alpha_bar -> 1 coincides with eps.
  NoiseSchedule unit = sched;
  unit.alpha_bar[3] = 1.0 - 1e-12;
  auto c0 = Tensorf::randn({4}, rng);
  auto eps = Tensorf::randn({4}, rng);
  auto v = v_target(c0, 3, eps, unit);
  for (std::int64_t i = 0; i < v.numel(); ++i)
    CHECK(v.data()[i] == doctest::Approx(eps.data()[i]).epsilon(1e-4));
}

TEST_CASE("eps <-> v conversions round-trip at every t") {
  auto sched = make_schedule(ScheduleKind::kCosine, 50);
  Rng rng(6);
  auto c_t = Tensorf::randn({3, 3, 2}, rng);
  auto v = Tensorf::randn({3, 3, 2}, rng);
  for (int t = 1; t <= 50; ++t) {
    auto eps = eps_from_v(c_t, v, t, sched);
    auto v2 = v_from_eps(c_t, eps, t, sched);
    for (std::int64_t i = 0; i < v.numel(); ++i)
      CHECK(std::abs(v2.data()[i] - v.data()[i]) <= 1e-6f * std::max(1.f, std::abs(v.data()[i])));
  }
}

TEST_CASE("cfg_combine endpoints") {
  Rng rng(7);
  auto a = Tensorf::randn({4}, rng);
  auto b = Tensorf::randn({4}, rng);
  auto w1 = cfg_combine(a, b, 1.f);
  auto w0 = cfg_combine(a, b, 0.f);
  for (std::int64_t i = 0; i < 4; ++i) {
    CHECK(w1.data()[i] == a.data()[i]);
    CHECK(w0.data()[i] == b.data()[i]);
  }
  auto same = cfg_combine(a, a, 3.7f);
  for (std::int64_t i = 0; i < 4; ++i) CHECK(same.data()[i] == doctest::Approx(a.data()[i]));
}

TEST_CASE("ddim_step inverts the forward process given the true noise") {
  auto sched = make_schedule(ScheduleKind::kLinear, 100);
  Rng rng(8);
  auto c0 = Tensorf::randn({2, 2, 2}, rng);
  auto eps = Tensorf::randn({2, 2, 2}, rng);
  const int t = 73;
  auto ct = q_sample(c0, t, eps, sched);
  // Stepping all the way to 0 with the exact noise recovers c0.
  auto back = ddim_step(ct, t, eps, sched, 0);
  for (std::int64_t i = 0; i < c0.numel(); ++i)
    CHECK(back.data()[i] == doctest::Approx(c0.data()[i]).epsilon(1e-5));

  // t = 1 with alpha_bar(0) = 1: the result is exactly the x0 estimate.
  auto c1 = q_sample(c0, 1, eps, sched);
  auto x0 = ddim_step(c1, 1, eps, sched, 0);
  for (std::int64_t i = 0; i < c0.numel(); ++i)
    CHECK(x0.data()[i] == doctest::Approx(c0.data()[i]).epsilon(1e-5));
}

TEST_CASE("ddpm_step: deterministic at t = 1, no-op in the small-beta limit") {
  auto sched = make_schedule(ScheduleKind::kLinear, 100);
  Rng rng(9);
  auto ct = Tensorf::randn({4}, rng);
  auto eps = Tensorf::randn({4}, rng);
  Rng r1(1), r2(2);
  auto a = ddpm_step(ct, 1, eps, sched, r1);
  auto b = ddpm_step(ct, 1, eps, sched, r2);
  for (std::int64_t i = 0; i < 4; ++i) CHECK(a.data()[i] == b.data()[i]);

  // Tiny beta: posterior mean approaches c_t and the noise term vanishes.
  NoiseSchedule tiny = make_schedule(ScheduleKind::kLinear, 100);
  for (auto& bb : tiny.beta) bb = 1e-10;
  for (int t = 1; t <= 100; ++t) {
    tiny.alpha[static_cast<std::size_t>(t)] = 1.0 - 1e-10;
    tiny.alpha_bar[static_cast<std::size_t>(t)] =
        tiny.alpha_bar[static_cast<std::size_t>(t - 1)] * tiny.alpha[static_cast<std::size_t>(t)];
  }
  Rng r3(3);
  auto c = ddpm_step(ct, 50, eps, tiny, r3);
  for (std::int64_t i = 0; i < 4; ++i)
    CHECK(c.data()[i] == doctest::Approx(ct.data()[i]).epsilon(1e-4));
}

namespace {

// Analytic optimal denoiser for 1-D Gaussian data N(m, s^2): the posterior
// mean of eps given c_t.
double optimal_eps(double c_t, int t, const NoiseSchedule& sched, double m, double s2) {
  const double ab = sched.alpha_bar[static_cast<std::size_t>(t)];
  const double prec = 1.0 / s2 + ab / (1.0 - ab);
  const double x0_hat = (m / s2 + std::sqrt(ab) * c_t / (1.0 - ab)) / prec;
  return (c_t - std::sqrt(ab) * x0_hat) / std::sqrt(1.0 - ab);
}

}  // namespace

TEST_CASE("1-D Gaussian oracle: DDIM and DDPM reproduce the data moments") {
  const double m = 0.7, s2 = 0.25;
  auto sched = make_schedule(ScheduleKind::kLinear, 1000);

  auto run = [&](bool ddim, int steps, std::uint64_t seed) {
    Rng rng(seed);
    double c = rng.normal();
    if (ddim) {
      auto ts = sample_timesteps(sched, steps);
      for (std::size_t i = 0; i < ts.size(); ++i) {
        const int t = ts[i];
        const int t_prev = i + 1 < ts.size() ? ts[i + 1] : 0;
        const double eps = optimal_eps(c, t, sched, m, s2);
        auto out = ddim_step(Tensord::scalar(c), t, Tensord::scalar(eps), sched, t_prev);
        c = out.item();
      }
    } else {
      for (int t = 1000; t >= 1; --t) {
        const double eps = optimal_eps(c, t, sched, m, s2);
        auto out = ddpm_step(Tensord::scalar(c), t, Tensord::scalar(eps), sched, rng);
        c = out.item();
      }
    }
    return c;
  };

  for (bool ddim : {true, false}) {
    double sum = 0, sq = 0;
    const int n = 10000;
    for (int i = 0; i < n; ++i) {
      const double v = run(ddim, ddim ? 50 : 1000, static_cast<std::uint64_t>(i) * 2 + 1);
      sum += v;
      sq += v * v;
    }
    const double mean_v = sum / n;
    const double var_v = sq / n - mean_v * mean_v;
    CAPTURE(ddim);
    CHECK(std::abs(mean_v - m) <= 0.03 * std::max(1.0, std::abs(m)));
    CHECK(std::abs(var_v - s2) <= 0.03 * std::max(1.0, s2));
  }
}

TEST_CASE("guided_step: identity at lambda 0, descent on a quadratic") {
  auto sched = make_schedule(ScheduleKind::kLinear, 100);
  Rng rng(11);
  auto c_t = Tensorf::randn({2, 2, 2}, rng);
  auto eps = Tensorf::randn({2, 2, 2}, rng);
  auto cand = ddim_step(c_t, 50, eps, sched);
  auto target = Tensorf::randn({2, 2, 2}, rng);

  GuidanceLossFn<float> quad = [&](const Tensorf& x0) { return sum(square(sub(x0, target))); };
  auto unchanged = guided_step(cand, c_t, 50, eps, sched, 0.f, quad);
  for (std::int64_t i = 0; i < cand.numel(); ++i)
    CHECK(unchanged.data()[i] == cand.data()[i]);

  // Zero gradient leaves the candidate untouched.
  GuidanceLossFn<float> flat = [&](const Tensorf& x0) { return mul(sum(x0), 0.f); };
  auto still = guided_step(cand, c_t, 50, eps, sched, 0.5f, flat);
  for (std::int64_t i = 0; i < cand.numel(); ++i) CHECK(still.data()[i] == cand.data()[i]);

  // One guided step strictly reduces the surrogate for a small lambda. The
  // surrogate is evaluated at the x0 estimate implied by the adjusted code.
  auto surrogate = [&](const Tensorf& c_prev) {
    // Evaluate ||x0(c) - target||^2 with the same eps at the previous step.
    auto x0 = div(sub(c_prev, mul(eps, static_cast<float>(sched.sqrt_1mab(49)))),
                  static_cast<float>(sched.sqrt_ab(49)));
    return sum(square(sub(x0, target))).item();
  };
  // Move the quadratic into ddim-candidate coordinates: guide on the x0 of
  // step 50 and check the surrogate at step 49 coordinates decreases.
  const float before = surrogate(cand);
  auto guided = guided_step(cand, c_t, 50, eps, sched, 0.002f, quad);
  const float after = surrogate(guided);
  CHECK(after < before);
}

TEST_CASE("sampling is deterministic given the seed and matches the latent shape") {
  Rng rng(13);
  Denoiser<float> den(4, 8, 3, PredictionTarget::kEpsilon, rng, 16);
  auto sched = make_schedule(ScheduleKind::kLinear, 50);
  SampleOptions opt;
  opt.steps = 10;
  auto a = sample(den, sched, opt, 77);
  auto b = sample(den, sched, opt, 77);
  CHECK(a.shape() == Shape{4, 4, 8});
  for (std::int64_t i = 0; i < a.numel(); ++i) CHECK(a.data()[i] == b.data()[i]);
  auto c = sample(den, sched, opt, 78);
  bool any_diff = false;
  for (std::int64_t i = 0; i < a.numel(); ++i)
    if (a.data()[i] != c.data()[i]) any_diff = true;
  CHECK(any_diff);

  // CFG at w = 0 is bit-identical to the unconditional trajectory.
  SampleOptions cond0;
  cond0.steps = 10;
  cond0.condition = {1, -1};
  cond0.cfg_weight = 0.0;
  auto d = sample(den, sched, cond0, 77);
  for (std::int64_t i = 0; i < a.numel(); ++i) CHECK(d.data()[i] == a.data()[i]);

  // DDPM needs the full schedule.
  SampleOptions bad;
  bad.solver = Solver::kDdpm;
  bad.steps = 10;
  CHECK_THROWS_AS(sample(den, sched, bad, 1), ValueError);
}

TEST_CASE("v-parameterized denoiser samples deterministically too") {
  Rng rng(14);
  Denoiser<float> den(4, 4, 2, PredictionTarget::kV, rng, 16);
  auto sched = make_schedule(ScheduleKind::kCosine, 40);
  SampleOptions opt;
  opt.steps = 8;
  auto a = sample(den, sched, opt, 5);
  auto b = sample(den, sched, opt, 5);
  for (std::int64_t i = 0; i < a.numel(); ++i) CHECK(a.data()[i] == b.data()[i]);
}

TEST_CASE("diffusion training reduces the loss on a toy library") {
  Rng rng(15);
  LatentLibrary<float> lib;
  for (int i = 0; i < 12; ++i) {
    lib.global_ids.push_back(i);
    lib.class_ids.push_back(i % 2);
    lib.tod_ids.push_back(0);
    // Two well-separated clusters.
    auto base = Tensorf::full({2, 2, 2}, i % 2 == 0 ? 1.5f : -1.5f);
    auto noise = Tensorf::randn({2, 2, 2}, rng, 0.1f);
    lib.codes.push_back(add(base, noise));
  }
  Stage2Config cfg;
  cfg.timesteps = 100;
  cfg.steps = 300;
  cfg.batch = 8;
  cfg.lr = 2e-3;
  cfg.log_every = 0;
  auto sched = make_schedule(cfg.schedule, cfg.timesteps);
  Denoiser<float> den(2, 2, 2, cfg.target, rng, 16);
  double first = -1, last = -1;
  int count = 0;
  double first_acc = 0, last_acc = 0;
  auto result = train_stage2(den, lib, sched, cfg, 31,
                             [&](int s, double loss) {
                               if (s < 20) first_acc += loss / 20;
                               if (s >= cfg.steps - 20) last_acc += loss / 20;
                               ++count;
                               return true;
                             });
  (void)first;
  (void)last;
  CHECK(count == cfg.steps);
  CHECK(last_acc < 0.6 * first_acc);
  CHECK(result.latent_scale > 0.5);
}
