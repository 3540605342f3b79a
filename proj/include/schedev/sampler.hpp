#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "schedev/flow.hpp"
#include "schedev/schedule.hpp"

namespace schedev {

enum class SamplerAlgorithm { DDPM, DDIM, GE };

SamplerAlgorithm sampler_algorithm_from_string(const std::string& name);
std::string to_string(SamplerAlgorithm algo);

struct SamplerConfig {
  SamplerAlgorithm algorithm = SamplerAlgorithm::DDIM;
  int steps = 64;
  double ge_mu = 2.0;
  // Grid margin at both ends of [0, 1]; negative means 1 / (2 * steps).
  double margin = -1.0;
  // Optional noise-scale override for the stochastic sampler; must be >= 0
  // wherever evaluated. Unset means the marginal-preserving default -gamma1.
  std::function<double(double)> noise_scale_fn;
  std::uint64_t rng_seed = 0;

  void validate() const;
  double effective_margin() const;
};

// One chain of the reverse process: states[k] is the point held at times[k],
// with times strictly decreasing from 1 - margin down to margin.
struct Trajectory {
  std::vector<double> times;
  std::vector<std::vector<double>> states;

  const std::vector<double>& terminal() const { return states.back(); }
};

// Uniform reverse grid: `steps` points from 1 - margin down to margin.
// Negative margin means the default 1 / (2 * steps), which makes the spacing
// exactly 1 / steps.
std::vector<double> reverse_time_grid(int steps, double margin = -1.0);

// Integrates `count` independent reverse chains of the flow's schedule and
// returns the terminal points. Chain c draws from substream(rng_seed, c), so
// results do not depend on the thread count.
SampleSet reverse_sample(const ConditionalFlowField& flow, std::span<const double> z,
                         const SamplerConfig& config, int count, int threads = 0);

// Single reverse chain with every intermediate state retained.
Trajectory reverse_trajectory(const ConditionalFlowField& flow, std::span<const double> z,
                              const SamplerConfig& config, std::uint64_t chain_index = 0);

// Pushes data points forward to time s: alpha(s) * x + sigma(s) * noise with
// fresh independent draws from rng.
SampleSet forward_noise(const SampleSet& samples, double s, const DiffusionSchedule& sched,
                        std::mt19937_64& rng);

}  // namespace schedev
