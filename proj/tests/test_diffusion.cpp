// Diffusion tests: schedule construction against the closed form, forward
// process algebra, guidance, inpainting and the DDIM sampler (checked against
// an independent full-step ancestral reference on a Gaussian toy problem).
#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <vector>

#include "moreact/common.hpp"
#include "moreact/diffusion.hpp"

using namespace moreact;

namespace {

// Independent closed-form cosine alpha_bar: f((t+1)/N) / f(0).
double cosine_alpha_bar_oracle(int t, int steps) {
  const double s = 0.008;
  auto f = [&](double u) {
    const double c = std::cos((u + s) / (1.0 + s) * M_PI / 2.0);
    return c * c;
  };
  return f(static_cast<double>(t + 1) / steps) / f(0.0);
}

// Two-sample Kolmogorov-Smirnov statistic.
double ks_statistic(std::vector<double> a, std::vector<double> b) {
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  double d = 0.0;
  size_t i = 0, j = 0;
  while (i < a.size() && j < b.size()) {
    if (a[i] <= b[j])
      ++i;
    else
      ++j;
    const double fa = static_cast<double>(i) / a.size();
    const double fb = static_cast<double>(j) / b.size();
    d = std::max(d, std::abs(fa - fb));
  }
  return d;
}

// Exact posterior-mean denoiser for scalar Gaussian data N(mu0, sigma0^2),
// reported as a noise estimate.
double analytic_eps(double x_t, int t, const DiffusionSchedule& sched,
                    double mu0, double sigma0) {
  const double ab = sched.alpha_bar[t];
  const double sa = std::sqrt(ab);
  const double var = ab * sigma0 * sigma0 + (1.0 - ab);
  const double x0_mean = mu0 + sa * sigma0 * sigma0 / var * (x_t - sa * mu0);
  return (x_t - sa * x0_mean) / std::sqrt(1.0 - ab);
}

}  // namespace

TEST_CASE("linear schedule hits its beta endpoints exactly") {
  const auto sched = make_schedule(ScheduleKind::kLinear, 1000);
  REQUIRE(sched.steps() == 1000);
  CHECK(sched.beta[0] == 1e-4);
  CHECK(sched.beta[999] == 2e-2);
  for (int t = 1; t < 1000; ++t) CHECK(sched.beta[t] > sched.beta[t - 1]);
  // alpha_bar is the running product of (1 - beta).
  double prod = 1.0;
  for (int t = 0; t < 1000; ++t) {
    prod *= 1.0 - sched.beta[t];
    CHECK(sched.alpha_bar[t] == Catch::Approx(prod).epsilon(1e-14));
  }
}

TEST_CASE("cosine schedule matches the closed form and satisfies invariants") {
  const auto sched = make_schedule(ScheduleKind::kCosine, 1000);
  CHECK(std::abs(sched.alpha_bar[500] - cosine_alpha_bar_oracle(500, 1000)) < 1e-12);
  CHECK(std::abs(sched.alpha_bar[100] - cosine_alpha_bar_oracle(100, 1000)) < 1e-12);
  CHECK(sched.alpha_bar[0] >= 0.999);
  for (int t = 0; t < 1000; ++t) {
    CHECK(sched.beta[t] > 0.0);
    CHECK(sched.beta[t] < 1.0);
    if (t > 0) CHECK(sched.alpha_bar[t] < sched.alpha_bar[t - 1]);
  }
  CHECK(sched.alpha_bar[999] > 0.0);  // clip keeps the last step usable
  CHECK_THROWS_AS(make_schedule(ScheduleKind::kCosine, 1), ConfigError);
}

TEST_CASE("q_sample follows its formula and boundary behaviour") {
  RandomStream rng(5, "test.qsample");
  const Matd x0 = rng.normal_matrix<double>(6, 9);
  const Matd noise = rng.normal_matrix<double>(6, 9);

  // Hand-built schedules for the two limits.
  DiffusionSchedule ident;
  ident.beta = Vecd::Constant(2, 1e-8);
  ident.alpha_bar = Vecd::Constant(2, 1.0);
  CHECK((q_sample(x0, 0, noise, ident) - x0).cwiseAbs().maxCoeff() == 0.0);

  DiffusionSchedule pure_noise;
  pure_noise.beta = Vecd::Constant(2, 0.5);
  pure_noise.alpha_bar = Vecd::Constant(2, 0.0);
  CHECK((q_sample(x0, 1, noise, pure_noise) - noise).cwiseAbs().maxCoeff() == 0.0);

  // Direct formula re-evaluation on the cosine schedule.
  const auto sched = make_schedule(ScheduleKind::kCosine, 1000);
  const int t = 437;
  const Matd xt = q_sample(x0, t, noise, sched);
  const Matd expected = std::sqrt(sched.alpha_bar[t]) * x0 +
                        std::sqrt(1.0 - sched.alpha_bar[t]) * noise;
  CHECK((xt - expected).cwiseAbs().maxCoeff() == 0.0);

  CHECK_THROWS_AS(q_sample(x0, -1, noise, sched), ConfigError);
  CHECK_THROWS_AS(q_sample(x0, 1000, noise, sched), ConfigError);
}

TEST_CASE("q_sample statistics match the schedule at t=300") {
  const auto sched = make_schedule(ScheduleKind::kCosine, 1000);
  const int t = 300;
  const double x0 = 0.73;
  RandomStream rng(17, "test.qsample_stats");
  const int n = 100000;
  double sum = 0.0, sumsq = 0.0;
  Matd x0m(1, 1), nm(1, 1);
  x0m(0, 0) = x0;
  for (int i = 0; i < n; ++i) {
    nm(0, 0) = rng.normal();
    const double v = q_sample(x0m, t, nm, sched)(0, 0);
    sum += v;
    sumsq += v * v;
  }
  const double mean = sum / n;
  const double var = sumsq / n - mean * mean;
  const double true_mean = std::sqrt(sched.alpha_bar[t]) * x0;
  const double true_var = 1.0 - sched.alpha_bar[t];
  const double se_mean = std::sqrt(true_var / n);
  const double se_var = true_var * std::sqrt(2.0 / (n - 1));
  CHECK(std::abs(mean - true_mean) < 3.0 * se_mean);
  CHECK(std::abs(var - true_var) < 3.0 * se_var);
}

TEST_CASE("eps and x0 parameterizations invert each other") {
  const auto sched = make_schedule(ScheduleKind::kCosine, 1000);
  RandomStream rng(6, "test.param");
  const Matd x0 = rng.normal_matrix<double>(4, 7);
  const Matd eps = rng.normal_matrix<double>(4, 7);
  for (int t : {0, 137, 500, 999}) {
    const Matd xt = q_sample(x0, t, eps, sched);
    CHECK((eps_from_x0(xt, t, x0, sched) - eps).cwiseAbs().maxCoeff() < 1e-10);
    CHECK((x0_from_eps(xt, t, eps, sched) - x0).cwiseAbs().maxCoeff() < 1e-10);
    // Round trip through both conversions.
    const Matd eps_hat = eps_from_x0(xt, t, x0, sched);
    CHECK((x0_from_eps(xt, t, eps_hat, sched) - x0).cwiseAbs().maxCoeff() < 1e-10);
  }

  // Scalar hand computation at t=500.
  const double ab = sched.alpha_bar[500];
  Matd xt1(1, 1), e1(1, 1);
  xt1(0, 0) = 0.9;
  e1(0, 0) = -0.4;
  const double by_hand = (0.9 - std::sqrt(1.0 - ab) * (-0.4)) / std::sqrt(ab);
  CHECK(x0_from_eps(xt1, 500, e1, sched)(0, 0) == Catch::Approx(by_hand).epsilon(1e-14));
}

TEST_CASE("classifier-free guidance is the documented affine blend") {
  RandomStream rng(8, "test.guide");
  const Matd c = rng.normal_matrix<double>(3, 5);
  const Matd u = rng.normal_matrix<double>(3, 5);
  CHECK((guide(c, u, 1.0) - c).cwiseAbs().maxCoeff() == 0.0);
  CHECK((guide(c, u, 0.0) - u).cwiseAbs().maxCoeff() == 0.0);

  Matd one(1, 1), zero(1, 1);
  one(0, 0) = 1.0;
  zero(0, 0) = 0.0;
  CHECK(guide(one, zero, 3.5)(0, 0) == 3.5);

  // guide(c,u,s) - u is proportional to (c - u) with slope s.
  const double s = 2.25;
  CHECK(((guide(c, u, s) - u) - s * (c - u)).cwiseAbs().maxCoeff() < 1e-12);

  const Matd wrong = rng.normal_matrix<double>(2, 5);
  CHECK_THROWS_AS(guide(c, wrong, 1.0), ConfigError);
}

TEST_CASE("inpaint_fuse overwrites exactly the masked dims") {
  RandomStream rng(9, "test.fuse");
  const Matd x = rng.normal_matrix<double>(5, kFeatureDim);
  const Matd g = rng.normal_matrix<double>(5, kFeatureDim);

  const Vecd ones = Vecd::Ones(kFeatureDim);
  const Vecd zeros = Vecd::Zero(kFeatureDim);
  CHECK((inpaint_fuse(x, g, ones) - g).cwiseAbs().maxCoeff() == 0.0);
  CHECK((inpaint_fuse(x, g, zeros) - x).cwiseAbs().maxCoeff() == 0.0);

  const Vecd traj = trajectory_mask();
  const Matd fused = inpaint_fuse(x, g, traj);
  for (int t = 0; t < 5; ++t)
    for (int d = 0; d < kFeatureDim; ++d)
      CHECK(fused(t, d) == (d < kTrajectoryDims ? g(t, d) : x(t, d)));

  // Projection: fusing twice changes nothing.
  CHECK((inpaint_fuse(fused, g, traj) - fused).cwiseAbs().maxCoeff() == 0.0);

  Vecd bad = traj;
  bad[0] = 0.5;
  CHECK_THROWS_AS(inpaint_fuse(x, g, bad), ConfigError);
}

TEST_CASE("ddim timestep grid is evenly spaced, descending, ending at zero") {
  const auto grid = ddim_timesteps(1000, 50);
  REQUIRE(grid.size() == 50);
  CHECK(grid.front() == 980);
  CHECK(grid.back() == 0);
  for (size_t i = 1; i < grid.size(); ++i) CHECK(grid[i] == grid[i - 1] - 20);

  const auto coarse = ddim_timesteps(10, 3);
  CHECK(coarse == std::vector<int>{6, 3, 0});

  const auto full = ddim_timesteps(1000, 1000);
  CHECK(full.front() == 999);
  CHECK(full.back() == 0);
}

TEST_CASE("oracle denoiser recovers the target in one step") {
  const auto sched = make_schedule(ScheduleKind::kCosine, 1000);
  RandomStream rng(10, "test.oracle_model");
  const Matd truth = rng.normal_matrix<double>(6, kFeatureDim);
  const Matd g = rng.normal_matrix<double>(6, kFeatureDim);

  SamplerConfig config;
  config.parameterization = Parameterization::kX0;
  config.ddim_steps = 1;
  config.guidance_scale = 1.0;
  config.inpaint_mask = trajectory_mask();

  DenoiseFn<double> oracle = [&](const Matd&, int, bool) { return truth; };
  RandomStream sample_rng(1, "test.oracle_model.sample");
  const Matd out = ddim_sample(oracle, 6, kFeatureDim, config, sched, sample_rng, &g);
  for (int t = 0; t < 6; ++t)
    for (int d = 0; d < kFeatureDim; ++d)
      CHECK(out(t, d) == (d < kTrajectoryDims ? g(t, d) : truth(t, d)));
}

TEST_CASE("ddim sampling is deterministic at eta=0 and masks stick") {
  const auto sched = make_schedule(ScheduleKind::kCosine, 1000);
  // A contrived but stable denoiser: shrink towards a fixed pattern.
  Matd target(4, kFeatureDim);
  for (int t = 0; t < 4; ++t)
    for (int d = 0; d < kFeatureDim; ++d)
      target(t, d) = 0.3 * std::sin(0.1 * t + 0.01 * d);
  DenoiseFn<double> fn = [&](const Matd& x, int, bool cond) {
    return Matd(0.8 * target + 0.05 * x + (cond ? 0.0 : 0.01) * Matd::Ones(x.rows(), x.cols()));
  };

  SamplerConfig config;
  config.ddim_steps = 25;
  config.guidance_scale = 3.5;

  RandomStream r1(77, "sample");
  RandomStream r2(77, "sample");
  const Matd a = ddim_sample(fn, 4, kFeatureDim, config, sched, r1);
  const Matd b = ddim_sample(fn, 4, kFeatureDim, config, sched, r2);
  CHECK((a - b).cwiseAbs().maxCoeff() == 0.0);

  // With eta > 0 and a mask, masked dims still equal g bit-exactly.
  RandomStream rng(11, "test.mask_target");
  const Matd g = rng.normal_matrix<double>(4, kFeatureDim);
  config.eta = 0.7;
  config.inpaint_mask = trajectory_mask();
  RandomStream r3(78, "sample");
  const Matd masked = ddim_sample(fn, 4, kFeatureDim, config, sched, r3, &g);
  for (int t = 0; t < 4; ++t)
    for (int d = 0; d < kTrajectoryDims; ++d) CHECK(masked(t, d) == g(t, d));
}

TEST_CASE("non-finite model output raises a sampling error naming the step") {
  const auto sched = make_schedule(ScheduleKind::kCosine, 1000);
  DenoiseFn<double> bad = [](const Matd& x, int, bool) {
    Matd out = x;
    out(0, 0) = std::nan("");
    return out;
  };
  SamplerConfig config;
  config.ddim_steps = 50;
  config.guidance_scale = 1.0;
  RandomStream rng(1, "sample");
  try {
    ddim_sample(bad, 2, 8, config, sched, rng);
    FAIL("expected SamplingDivergedError");
  } catch (const SamplingDivergedError& e) {
    CHECK(std::string(e.what()).find("980") != std::string::npos);
  }
}

TEST_CASE("sampler config validation") {
  const auto sched = make_schedule(ScheduleKind::kCosine, 100);
  SamplerConfig config;
  config.ddim_steps = 0;
  CHECK_THROWS_AS(config.validate(sched.steps()), ConfigError);
  config.ddim_steps = 101;
  CHECK_THROWS_AS(config.validate(sched.steps()), ConfigError);
  config.ddim_steps = 10;
  config.eta = 1.5;
  CHECK_THROWS_AS(config.validate(sched.steps()), ConfigError);
  config.eta = 0.0;
  CHECK_NOTHROW(config.validate(sched.steps()));

  // Mask without a target is refused.
  config.inpaint_mask = trajectory_mask(8);
  DenoiseFn<double> fn = [](const Matd& x, int, bool) { return Matd(0.1 * x); };
  RandomStream rng(1, "sample");
  CHECK_THROWS_AS(ddim_sample(fn, 2, 8, config, sched, rng), ConfigError);
}

TEST_CASE("50-step DDIM matches a 1000-step ancestral reference on a Gaussian toy") {
  const auto sched = make_schedule(ScheduleKind::kCosine, 1000);
  const double mu0 = 1.5, sigma0 = 0.8;
  const int n = 2000;

  // Our sampler, eps parameterization, 50 steps.
  SamplerConfig config;
  config.parameterization = Parameterization::kEps;
  config.ddim_steps = 50;
  config.guidance_scale = 1.0;
  DenoiseFn<double> fn = [&](const Matd& x, int t, bool) {
    Matd out(1, 1);
    out(0, 0) = analytic_eps(x(0, 0), t, sched, mu0, sigma0);
    return out;
  };
  std::vector<double> ddim_draws(n);
  for (int i = 0; i < n; ++i) {
    RandomStream rng(1000 + static_cast<std::uint64_t>(i), "test.ks.ddim");
    ddim_draws[static_cast<size_t>(i)] =
        ddim_sample(fn, 1, 1, config, sched, rng)(0, 0);
  }

  // Independent full-step ancestral DDPM reference.
  std::vector<double> ancestral_draws(n);
  RandomStream rng(4242, "test.ks.ancestral");
  for (int i = 0; i < n; ++i) {
    double x = rng.normal();
    for (int t = 999; t >= 0; --t) {
      const double beta = sched.beta[t];
      const double alpha = 1.0 - beta;
      const double ab = sched.alpha_bar[t];
      const double eps_hat = analytic_eps(x, t, sched, mu0, sigma0);
      const double mean = (x - beta / std::sqrt(1.0 - ab) * eps_hat) / std::sqrt(alpha);
      if (t > 0) {
        const double ab_prev = sched.alpha_bar[t - 1];
        const double post_var = beta * (1.0 - ab_prev) / (1.0 - ab);
        x = mean + std::sqrt(post_var) * rng.normal();
      } else {
        x = mean;
      }
    }
    ancestral_draws[static_cast<size_t>(i)] = x;
  }

  const double ks = ks_statistic(ddim_draws, ancestral_draws);
  INFO("KS statistic = " << ks);
  CHECK(ks < 0.05);

  // Both should also be near the true data distribution.
  const double mean_ddim =
      std::accumulate(ddim_draws.begin(), ddim_draws.end(), 0.0) / n;
  CHECK(std::abs(mean_ddim - mu0) < 0.1);
}
