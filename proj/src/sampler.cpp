#include "schedev/sampler.hpp"

#include <cmath>
#include <stdexcept>

#include "schedev/errors.hpp"
#include "schedev/parallel.hpp"
#include "schedev/rng.hpp"

namespace schedev {

SamplerAlgorithm sampler_algorithm_from_string(const std::string& name) {
  if (name == "ddpm") return SamplerAlgorithm::DDPM;
  if (name == "ddim") return SamplerAlgorithm::DDIM;
  if (name == "ge") return SamplerAlgorithm::GE;
  throw std::invalid_argument("unknown sampler algorithm '" + name +
                              "' (expected ddpm, ddim or ge)");
}

std::string to_string(SamplerAlgorithm algo) {
  switch (algo) {
    case SamplerAlgorithm::DDPM: return "ddpm";
    case SamplerAlgorithm::DDIM: return "ddim";
    case SamplerAlgorithm::GE: return "ge";
  }
  return "?";
}

void SamplerConfig::validate() const {
  if (steps < 2) throw std::invalid_argument("sampler needs at least 2 grid points");
  if (!std::isfinite(ge_mu)) throw std::invalid_argument("ge_mu must be finite");
  double m = effective_margin();
  if (!(m > 0.0) || !(m < 0.5)) throw std::invalid_argument("margin must lie in (0, 0.5)");
}

double SamplerConfig::effective_margin() const {
  return margin < 0.0 ? 1.0 / (2.0 * steps) : margin;
}

std::vector<double> reverse_time_grid(int steps, double margin) {
  if (steps < 2) throw std::invalid_argument("sampler needs at least 2 grid points");
  if (margin < 0.0) margin = 1.0 / (2.0 * steps);
  if (!(margin > 0.0) || !(margin < 0.5)) throw std::invalid_argument("margin must lie in (0, 0.5)");
  double s_hi = 1.0 - margin, s_lo = margin;
  std::vector<double> grid(steps);
  for (int k = 0; k < steps; ++k)
    grid[k] = s_hi + (s_lo - s_hi) * (static_cast<double>(k) / (steps - 1));
  return grid;
}

namespace {

void check_finite(std::span<const double> x, int step) {
  for (double v : x)
    if (!std::isfinite(v))
      throw DivergedSamplerError(
          "reverse integration produced a non-finite state at step " + std::to_string(step), step);
}

// One reverse chain. The initial draw is the chain engine's first output, so
// the starting point depends only on (seed, chain), not on the step count.
Trajectory run_chain(const ConditionalFlowField& flow, std::span<const double> z,
                     const SamplerConfig& config, std::mt19937_64 rng, bool keep_states) {
  const DiffusionSchedule& sched = flow.schedule();
  auto grid = reverse_time_grid(config.steps, config.margin);
  int dim = flow.dim();

  std::vector<double> x(dim);
  double sigma1 = sched.sigma(1.0);
  for (double& xi : x) xi = sigma1 * draw_normal(rng);

  Trajectory traj;
  if (keep_states) {
    traj.times = grid;
    traj.states.reserve(grid.size());
    traj.states.push_back(x);
  }

  std::vector<double> v(dim), v_prev(dim);
  bool have_prev = false;
  for (std::size_t k = 0; k + 1 < grid.size(); ++k) {
    double s = grid[k];
    double ds = s - grid[k + 1];
    flow.evaluate(x, z, s, v);

    switch (config.algorithm) {
      case SamplerAlgorithm::DDIM:
        for (int j = 0; j < dim; ++j) x[j] -= v[j] * ds;
        break;
      case SamplerAlgorithm::GE: {
        // Filtered velocity mu * v(x_k, s_k) + (1 - mu) * v from the previous
        // step; the first step has no history and falls back to the plain
        // deterministic update.
        if (have_prev) {
          for (int j = 0; j < dim; ++j)
            x[j] -= (config.ge_mu * v[j] + (1.0 - config.ge_mu) * v_prev[j]) * ds;
        } else {
          for (int j = 0; j < dim; ++j) x[j] -= v[j] * ds;
        }
        v_prev = v;
        have_prev = true;
        break;
      }
      case SamplerAlgorithm::DDPM: {
        auto coef = sched.coefficients(s);
        double scale;  // noise scale eps(s) in dx = (v - eps * score) ds + sqrt(2 eps) dW
        if (config.noise_scale_fn) {
          scale = config.noise_scale_fn(s);
          if (!(scale >= 0.0))
            throw std::invalid_argument("noise_scale_fn must be nonnegative, got " +
                                        std::to_string(scale) + " at s = " + std::to_string(s));
          // score implied by the flow: (v - gamma2 x) / gamma1.
          for (int j = 0; j < dim; ++j) {
            double score = (v[j] - coef.gamma2 * x[j]) / coef.gamma1;
            x[j] -= (v[j] - scale * score) * ds;
          }
        } else {
          // Default scale -gamma1 simplifies the drift to -(2v - gamma2 x)
          // with no division by gamma1.
          scale = -coef.gamma1;
          for (int j = 0; j < dim; ++j) x[j] -= (2.0 * v[j] - coef.gamma2 * x[j]) * ds;
        }
        double amp = std::sqrt(2.0 * scale) * std::sqrt(ds);
        for (int j = 0; j < dim; ++j) x[j] += amp * draw_normal(rng);
        break;
      }
    }

    check_finite(x, static_cast<int>(k) + 1);
    if (keep_states) traj.states.push_back(x);
  }

  if (!keep_states) {
    traj.times = {grid.back()};
    traj.states.push_back(std::move(x));
  }
  return traj;
}

}  // namespace

SampleSet reverse_sample(const ConditionalFlowField& flow, std::span<const double> z,
                         const SamplerConfig& config, int count, int threads) {
  config.validate();
  if (count < 1) throw std::invalid_argument("sample count must be at least 1");
  int dim = flow.dim();
  SampleSet out(dim);
  out.data.resize(static_cast<std::size_t>(count) * dim);
  out.condition.assign(z.begin(), z.end());
  parallel_for(static_cast<std::size_t>(count), threads, [&](std::size_t chain) {
    auto traj = run_chain(flow, z, config, substream(config.rng_seed, chain), false);
    const auto& terminal = traj.terminal();
    std::copy(terminal.begin(), terminal.end(), out.data.begin() + chain * dim);
  });
  return out;
}

Trajectory reverse_trajectory(const ConditionalFlowField& flow, std::span<const double> z,
                              const SamplerConfig& config, std::uint64_t chain_index) {
  config.validate();
  return run_chain(flow, z, config, substream(config.rng_seed, chain_index), true);
}

SampleSet forward_noise(const SampleSet& samples, double s, const DiffusionSchedule& sched,
                        std::mt19937_64& rng) {
  double alpha = sched.alpha(s);
  double sigma = sched.sigma(s);
  SampleSet out(samples.dim);
  out.condition = samples.condition;
  out.data.resize(samples.data.size());
  for (std::size_t i = 0; i < samples.data.size(); ++i)
    out.data[i] = alpha * samples.data[i] + sigma * draw_normal(rng);
  return out;
}

}  // namespace schedev
