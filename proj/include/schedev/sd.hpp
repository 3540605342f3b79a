#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "schedev/flow.hpp"
#include "schedev/sampler.hpp"
#include "schedev/schedule.hpp"

namespace schedev {

enum class DivergenceStrategy { Analytic, RandomBasis, FiniteDifference };

// Accepts "analytic", "random" or "fd".
DivergenceStrategy divergence_strategy_from_string(const std::string& name);
std::string to_string(DivergenceStrategy strategy);

struct SDConfig {
  int n_outer = 256;  // Monte-Carlo probes per time point
  int n_imcf = 2000;  // terminal samples behind an empirical oracle
  DivergenceStrategy divergence_strategy = DivergenceStrategy::FiniteDifference;
  double fd_step = 1e-4;  // relative; the step along coordinate j is fd_step * (1 + |x_j|)
  std::vector<double> s_grid;  // empty means the default 16-point interior grid
  // Report with the leading c2 factor fixed to one. Off multiplies every
  // estimate by c2(s), giving the true deviation rate of the velocity field.
  bool report_c2_one = true;

  void validate() const;
  std::vector<double> effective_s_grid() const;
};

struct SDPoint {
  double s = 0.0;
  double sd = 0.0;
  double mc_stderr = 0.0;
};

struct SDReport {
  std::vector<SDPoint> per_s;
  double total_sd = 0.0;
  double total_stderr = 0.0;  // trapezoid weights propagated in quadrature
  std::vector<double> z;
  // Set when the empirical oracle holds a single sample; estimates are then
  // unreliable but not rejected.
  bool degenerate_oracle = false;
  SDConfig config;
};

// Ideal model-consistent noise prediction for a terminal law: analytic for a
// known mixture, or the softmax estimator over a fixed terminal sample set.
// Also the source of p0 draws for the outer Monte-Carlo loop.
class ImcfOracle {
 public:
  static ImcfOracle analytic(GaussianMixtureModel gmm, DiffusionSchedule sched);
  static ImcfOracle empirical(SampleSet terminals, DiffusionSchedule sched);

  bool empirical_mode() const { return !flow_.has_value(); }
  std::size_t sample_count() const { return samples_.n(); }
  int dim() const;
  const DiffusionSchedule& schedule() const { return sched_; }

  void epsilon(std::span<const double> x, double s, std::span<double> eps_out,
               double* div_out = nullptr) const;
  void draw_x0(std::mt19937_64& rng, std::span<double> out) const;

 private:
  ImcfOracle(std::optional<MixtureImcfFlow> flow, SampleSet samples, DiffusionSchedule sched);
  std::optional<MixtureImcfFlow> flow_;
  SampleSet samples_;
  DiffusionSchedule sched_;
};

// Empirical oracle over the flow's own terminal distribution: runs n_imcf
// reverse chains and wraps the resulting sample set.
ImcfOracle sampler_oracle(const ConditionalFlowField& flow, std::span<const double> z,
                          const SamplerConfig& sampler_config, int n_imcf, int threads = 0);

// Single-basis probe of the divergence of eps_flow - eps_oracle at x: returns
// d * d(diff_j)/dx_j by central differences along coordinate j. Averaging the
// probe over all j reproduces the full finite-difference trace. A null oracle
// means the difference is taken against the zero field.
double divergence_probe(const ConditionalFlowField& flow, const ImcfOracle* oracle,
                        std::span<const double> x, std::span<const double> z, double s,
                        int basis_index, double fd_step);

// Divergence of eps_flow - eps_oracle under the chosen strategy. Analytic
// requires the flow to expose an analytic epsilon divergence (StrategyError
// otherwise); RandomBasis draws the basis index from rng.
double divergence_of_difference(const ConditionalFlowField& flow, const ImcfOracle* oracle,
                                std::span<const double> x, std::span<const double> z, double s,
                                DivergenceStrategy strategy, double fd_step, std::mt19937_64& rng);

// Deviation rate at one time point: Monte-Carlo mean over n_outer probes
// x_s = alpha(s) x0 + sigma(s) xi of
//   |sigma(s) div(eps_flow - eps_imcf) + (eps_imcf - eps_flow) . eps_imcf|,
// times c2(s) unless config.report_c2_one. Returns (estimate, stderr).
std::pair<double, double> schedule_deviation_at(const ConditionalFlowField& flow,
                                                const ImcfOracle& oracle,
                                                std::span<const double> z, double s,
                                                const SDConfig& config, std::uint64_t seed,
                                                int threads = 0);

// Per-s estimates over config's s-grid plus their trapezoidal total.
SDReport total_schedule_deviation(const ConditionalFlowField& flow, const ImcfOracle& oracle,
                                  std::span<const double> z, const SDConfig& config,
                                  std::uint64_t seed, int threads = 0);

struct TvBoundConfig {
  int nx = 2048;            // finite-volume cells over [-half_width, half_width]
  double half_width = 14.0;
  int n_march = 512;        // outer marching steps from s = 1 down to s_margin
  int n_tv = 16;            // uniform times at which TV is recorded
  double s_margin = 1.0 / 128;
  double cfl_target = 0.4;
  // 0 lets each marching step pick its own CFL-safe substep count. A positive
  // value forces that count and fails when it violates the limit.
  int forced_substeps = 0;
  SDConfig sd;  // right-hand side config; the c2 factor is always applied
};

struct TvBoundResult {
  double lhs = 0.0;    // average TV between the transported and ideal densities
  double rhs = 0.0;    // total schedule deviation (c2 included)
  double slack = 0.0;  // grid-refinement and Monte-Carlo allowance
  bool holds = false;  // lhs <= rhs + slack
  double lhs_refined = 0.0;  // average TV on the doubled grid
  std::vector<std::pair<double, double>> tv_per_s;
  SDReport sd_report;
};

// Numeric check of the TV-vs-total-SD bound in 1D: evolves the oracle's s = 1
// density backward under the flow with a conservative upwind scheme and
// compares the average TV against total SD.
TvBoundResult tv_bound_check_1d(const ConditionalFlowField& flow,
                                const GaussianMixtureModel& imcf_gmm, std::span<const double> z,
                                const TvBoundConfig& config, std::uint64_t seed);

}  // namespace schedev
