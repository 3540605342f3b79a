#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <random>
#include <vector>

#include "doctest.h"
#include "schedev/errors.hpp"
#include "schedev/flow.hpp"
#include "schedev/rng.hpp"
#include "schedev/sampler.hpp"
#include "schedev/schedule.hpp"
#include "schedev/transport.hpp"

using namespace schedev;

namespace {

DiffusionSchedule default_sched() { return DiffusionSchedule::log_linear_ve(5e-4, 5.0); }

MixtureImcfFlow single_flow(double mu, double var) {
  return MixtureImcfFlow(GaussianMixtureModel({{1.0, {mu}, var}}), default_sched());
}

// Dense Euler oracle for the scalar single-Gaussian reverse ODE
// dx/ds = c2 sigma^2 (x - mu) / (vbar + sigma^2), integrated from s_hi down
// to s_lo. Kept independent of the sampler implementation.
double dense_terminal(double x1, double mu, double vbar, double s_hi, double s_lo, int steps) {
  auto sched = default_sched();
  double c2 = sched.log_ratio();
  double x = x1;
  double ds = (s_hi - s_lo) / steps;
  for (int k = 0; k < steps; ++k) {
    double s = s_hi - k * ds;
    double sig2 = sched.sigma(s) * sched.sigma(s);
    x -= c2 * sig2 * (x - mu) / (vbar + sig2) * ds;
  }
  return x;
}

}  // namespace

TEST_CASE("reverse time grid") {
  auto grid = reverse_time_grid(64);
  REQUIRE(grid.size() == 64);
  CHECK(grid.front() == doctest::Approx(1.0 - 1.0 / 128).epsilon(1e-15));
  CHECK(grid.back() == doctest::Approx(1.0 / 128).epsilon(1e-15));
  for (std::size_t k = 0; k + 1 < grid.size(); ++k)
    CHECK(grid[k] - grid[k + 1] == doctest::Approx(1.0 / 64).epsilon(1e-12));

  auto coarse = reverse_time_grid(4, 0.1);
  CHECK(coarse.front() == doctest::Approx(0.9));
  CHECK(coarse.back() == doctest::Approx(0.1));
  CHECK_THROWS_AS((void)reverse_time_grid(1), std::invalid_argument);
  CHECK_THROWS_AS((void)reverse_time_grid(8, 0.6), std::invalid_argument);
}

TEST_CASE("config validation") {
  SamplerConfig config;
  CHECK_NOTHROW(config.validate());
  CHECK(config.effective_margin() == doctest::Approx(1.0 / 128));
  config.steps = 1;
  CHECK_THROWS_AS(config.validate(), std::invalid_argument);
  config.steps = 64;
  config.ge_mu = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(config.validate(), std::invalid_argument);
  config.ge_mu = 2.0;
  config.margin = 0.75;
  CHECK_THROWS_AS(config.validate(), std::invalid_argument);
}

TEST_CASE("deterministic sampler tracks the dense single-Gaussian solution") {
  double mu = 2.0, vbar = 0.01;
  auto flow = single_flow(mu, vbar);
  SamplerConfig config;
  config.algorithm = SamplerAlgorithm::DDIM;
  config.steps = 64;

  for (std::uint64_t seed : {0ull, 18ull}) {
    config.rng_seed = seed;
    auto traj = reverse_trajectory(flow, {}, config);
    double x1 = traj.states.front()[0];
    REQUIRE(std::abs(x1 - mu) < 3.0);  // keeps the relative comparison meaningful

    double s_hi = traj.times.front(), s_lo = traj.times.back();
    double dense = dense_terminal(x1, mu, vbar, s_hi, s_lo, 4096);

    // The dense oracle itself must sit on the closed-form contraction law.
    auto sched = default_sched();
    double num = vbar + sched.sigma(s_lo) * sched.sigma(s_lo);
    double den = vbar + sched.sigma(s_hi) * sched.sigma(s_hi);
    double closed = mu + (x1 - mu) * std::sqrt(num / den);
    CHECK(dense == doctest::Approx(closed).epsilon(1e-4));

    CHECK(traj.terminal()[0] == doctest::Approx(dense).epsilon(0.01));
  }
}

TEST_CASE("stochastic and deterministic samplers agree on an exact flow") {
  MixtureImcfFlow flow(GaussianMixtureModel({{0.5, {-1.0}, 0.01}, {0.5, {1.0}, 0.01}}),
                       default_sched());
  double mixture_std = std::sqrt(flow.gmm().variance1d());
  // 8192 chains put the Monte-Carlo floor (~0.011) well under the bound, so
  // the check resolves the actual discretization-level disagreement (~0.02).
  SamplerConfig config;
  config.steps = 64;
  config.rng_seed = 11;
  config.algorithm = SamplerAlgorithm::DDPM;
  auto ddpm = reverse_sample(flow, {}, config, 8192);
  config.algorithm = SamplerAlgorithm::DDIM;
  config.rng_seed = 12;
  auto ddim = reverse_sample(flow, {}, config, 8192);
  CHECK(wasserstein1_1d(ddpm, ddim) <= 0.05 * mixture_std);
}

TEST_CASE("filter weight one reduces to the deterministic sampler") {
  auto flow = single_flow(0.5, 0.04);
  SamplerConfig config;
  config.steps = 32;
  config.rng_seed = 5;
  config.algorithm = SamplerAlgorithm::DDIM;
  auto ddim = reverse_trajectory(flow, {}, config);
  config.algorithm = SamplerAlgorithm::GE;
  config.ge_mu = 1.0;
  auto ge1 = reverse_trajectory(flow, {}, config);
  REQUIRE(ge1.states.size() == ddim.states.size());
  for (std::size_t k = 0; k < ddim.states.size(); ++k)
    CHECK(ge1.states[k][0] == ddim.states[k][0]);

  config.ge_mu = 2.0;
  auto ge2 = reverse_trajectory(flow, {}, config);
  CHECK(ge2.terminal()[0] != ddim.terminal()[0]);
}

TEST_CASE("forward noising") {
  SampleSet points(1);
  points.data = {0.4, -1.1, 2.0};

  SUBCASE("vanishing sigma leaves the input unchanged") {
    auto ramp = DiffusionSchedule::general([](double s) { return s; }, [](double) { return 1.0; },
                                           [](double) { return 1.0; }, [](double) { return 0.0; },
                                           true);
    auto rng = substream(1, 0);
    auto noised = forward_noise(points, 0.0, ramp, rng);
    CHECK(noised.data[0] == 0.4);
    CHECK(noised.data[1] == -1.1);
    CHECK(noised.data[2] == 2.0);
  }

  SUBCASE("unit sigma reproduces standard-normal moments") {
    auto unit = DiffusionSchedule::general([](double) { return 1.0; }, [](double) { return 0.0; },
                                           [](double) { return 1.0; }, [](double) { return 0.0; },
                                           true);
    SampleSet zeros(1);
    zeros.data.assign(100000, 0.0);
    auto rng = substream(2, 0);
    auto noised = forward_noise(zeros, 0.5, unit, rng);
    double mean = 0.0, sq = 0.0;
    for (double v : noised.data) {
      mean += v;
      sq += v * v;
    }
    mean /= noised.data.size();
    double var = sq / noised.data.size() - mean * mean;
    CHECK(std::abs(mean) < 0.02);
    CHECK(std::abs(var - 1.0) < 0.05);
  }

  SUBCASE("same rng seed gives identical draws") {
    auto sched = default_sched();
    auto rng_a = substream(9, 0);
    auto rng_b = substream(9, 0);
    auto a = forward_noise(points, 0.7, sched, rng_a);
    auto b = forward_noise(points, 0.7, sched, rng_b);
    CHECK(a.data == b.data);
  }
}

TEST_CASE("seeded determinism across repeats and thread counts") {
  MixtureImcfFlow flow(GaussianMixtureModel({{0.6, {-1.0}, 0.01}, {0.4, {1.0}, 0.04}}),
                       default_sched());
  SamplerConfig config;
  config.algorithm = SamplerAlgorithm::DDPM;
  config.steps = 16;
  config.rng_seed = 77;
  double z = 0.3;
  auto a = reverse_sample(flow, {&z, 1}, config, 64, 1);
  auto b = reverse_sample(flow, {&z, 1}, config, 64, 1);
  auto c = reverse_sample(flow, {&z, 1}, config, 64, 4);
  CHECK(a.data == b.data);
  CHECK(a.data == c.data);
  CHECK(a.condition == std::vector<double>{0.3});

  config.rng_seed = 78;
  auto d = reverse_sample(flow, {&z, 1}, config, 64, 1);
  CHECK(a.data != d.data);
}

TEST_CASE("initial draw does not depend on the step count") {
  auto flow = single_flow(0.0, 0.01);
  SamplerConfig config;
  config.rng_seed = 42;
  config.steps = 64;
  auto coarse = reverse_trajectory(flow, {}, config);
  config.steps = 1024;
  auto fine = reverse_trajectory(flow, {}, config);
  CHECK(coarse.states.front()[0] == fine.states.front()[0]);
}

TEST_CASE("terminal error shrinks linearly with the step size") {
  auto flow = single_flow(0.0, 0.01);
  SamplerConfig config;
  config.algorithm = SamplerAlgorithm::DDIM;
  config.rng_seed = 3;
  config.margin = 1.0 / 128;  // pinned so every step count integrates the same span

  config.steps = 1024;
  auto ref = reverse_sample(flow, {}, config, 512);
  std::vector<double> gaps;
  for (int steps : {64, 128, 256}) {
    config.steps = steps;
    gaps.push_back(wasserstein1_1d(reverse_sample(flow, {}, config, 512), ref));
  }
  CHECK(gaps[0] > gaps[1]);
  CHECK(gaps[1] > gaps[2]);
  double slope = std::log(gaps[0] / gaps[2]) / std::log(4.0);
  CHECK(slope >= 0.8);
}

TEST_CASE("non-finite states raise a diverged error with the step index") {
  // Exponential blow-up: each update multiplies the state by about 6e200, so
  // the second update overflows for any reasonable starting point.
  class ExplodingFlow : public ConditionalFlowField {
   public:
    ExplodingFlow() : ConditionalFlowField(DiffusionSchedule::log_linear_ve(5e-4, 5.0)) {}
    int dim() const override { return 1; }
    void epsilon(std::span<const double> x, std::span<const double>, double,
                 std::span<double> out) const override {
      out[0] = 1e200 * x[0];
    }
  } flow;

  SamplerConfig config;
  config.steps = 8;
  try {
    (void)reverse_sample(flow, {}, config, 1);
    FAIL("expected DivergedSamplerError");
  } catch (const DivergedSamplerError& e) {
    CHECK(e.step == 2);
    CHECK(std::string(e.what()).find("step 2") != std::string::npos);
  }
}

TEST_CASE("custom noise scales") {
  auto flow = single_flow(-0.5, 0.04);
  SamplerConfig config;
  config.steps = 24;
  config.rng_seed = 6;

  SUBCASE("zero scale turns the stochastic sampler deterministic") {
    config.algorithm = SamplerAlgorithm::DDIM;
    auto ddim = reverse_sample(flow, {}, config, 16);
    config.algorithm = SamplerAlgorithm::DDPM;
    config.noise_scale_fn = [](double) { return 0.0; };
    auto quiet = reverse_sample(flow, {}, config, 16);
    CHECK(ddim.data == quiet.data);
  }

  SUBCASE("restating the default scale reproduces the stochastic sampler") {
    config.algorithm = SamplerAlgorithm::DDPM;
    auto plain = reverse_sample(flow, {}, config, 16);
    auto sched = flow.schedule();
    config.noise_scale_fn = [sched](double s) { return -sched.coefficients(s).gamma1; };
    auto restated = reverse_sample(flow, {}, config, 16);
    REQUIRE(plain.data.size() == restated.data.size());
    for (std::size_t i = 0; i < plain.data.size(); ++i)
      CHECK(restated.data[i] == doctest::Approx(plain.data[i]).epsilon(1e-10));
  }

  SUBCASE("negative scale is rejected") {
    config.algorithm = SamplerAlgorithm::DDPM;
    config.noise_scale_fn = [](double) { return -1.0; };
    CHECK_THROWS_AS((void)reverse_sample(flow, {}, config, 1), std::invalid_argument);
  }
}

TEST_CASE("trajectory bookkeeping") {
  auto flow = single_flow(0.0, 0.01);
  SamplerConfig config;
  config.steps = 16;
  config.rng_seed = 1;
  auto traj = reverse_trajectory(flow, {}, config);
  REQUIRE(traj.times.size() == 16);
  REQUIRE(traj.states.size() == 16);
  for (std::size_t k = 0; k + 1 < traj.times.size(); ++k) CHECK(traj.times[k] > traj.times[k + 1]);
  CHECK(traj.times.front() == doctest::Approx(1.0 - 1.0 / 32));
  CHECK(traj.times.back() == doctest::Approx(1.0 / 32));
  CHECK(traj.terminal() == traj.states.back());
}

TEST_CASE("intermediate states match forward-noised terminals in law") {
  auto flow = single_flow(0.0, 0.01);
  auto sched = flow.schedule();
  SamplerConfig config;
  config.algorithm = SamplerAlgorithm::DDIM;
  config.steps = 256;
  config.rng_seed = 8;

  // Grid index whose time sits near sigma = 0.2.
  auto grid = reverse_time_grid(config.steps, config.margin);
  double s_target = std::log(0.2 / sched.sigma_min()) / sched.log_ratio();
  std::size_t k_star = 0;
  while (k_star + 1 < grid.size() && grid[k_star + 1] > s_target) ++k_star;
  double s_star = grid[k_star];

  const int count = 512;
  SampleSet terminals(1), intermediates(1);
  for (int chain = 0; chain < count; ++chain) {
    auto traj = reverse_trajectory(flow, {}, config, chain);
    terminals.data.push_back(traj.terminal()[0]);
    intermediates.data.push_back(traj.states[k_star][0]);
  }

  auto rng = substream(101, 0);
  auto noised = forward_noise(terminals, s_star, sched, rng);
  double gap = wasserstein1_1d(noised, intermediates);

  // Noise floor: distance between independent re-noisings of the same set.
  double floor = 0.0;
  for (int rep = 0; rep < 3; ++rep) {
    auto a = forward_noise(terminals, s_star, sched, rng);
    auto b = forward_noise(terminals, s_star, sched, rng);
    floor += wasserstein1_1d(a, b);
  }
  floor /= 3.0;
  CHECK(gap <= 3.0 * floor);
}

TEST_CASE("algorithm names round-trip") {
  CHECK(sampler_algorithm_from_string("ddpm") == SamplerAlgorithm::DDPM);
  CHECK(sampler_algorithm_from_string("ddim") == SamplerAlgorithm::DDIM);
  CHECK(sampler_algorithm_from_string("ge") == SamplerAlgorithm::GE);
  CHECK(to_string(SamplerAlgorithm::GE) == "ge");
  CHECK_THROWS_AS((void)sampler_algorithm_from_string("euler"), std::invalid_argument);
}
