#pragma once

#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "schedev/schedule.hpp"

namespace schedev {

// Flat row-major point container.
struct SampleSet {
  int dim = 0;
  std::vector<double> data;       // n() * dim values
  std::vector<double> condition;  // z that generated the samples (may be empty)

  SampleSet() = default;
  explicit SampleSet(int dim) : dim(dim) {}
  std::size_t n() const { return dim == 0 ? 0 : data.size() / dim; }
  std::span<const double> row(std::size_t i) const {
    return std::span<const double>(data.data() + i * dim, dim);
  }
  void push(std::span<const double> x) { data.insert(data.end(), x.begin(), x.end()); }
};

struct GmmComponent {
  double weight = 1.0;
  std::vector<double> mean;
  double variance = 1.0;  // isotropic
};

// Isotropic Gaussian mixture. All density/score queries take the law of
// mean_scale * X + N(0, extra_var * I), i.e. the mixture pushed through the
// noising map x -> alpha * x + sigma * noise.
class GaussianMixtureModel {
 public:
  explicit GaussianMixtureModel(std::vector<GmmComponent> components);

  int dim() const { return dim_; }
  const std::vector<GmmComponent>& components() const { return components_; }

  double log_density(std::span<const double> x, double extra_var = 0.0,
                     double mean_scale = 1.0) const;
  void score(std::span<const double> x, double extra_var, double mean_scale,
             std::span<double> out) const;
  // Laplacian of the log density; equals the divergence of the score field.
  double score_divergence(std::span<const double> x, double extra_var, double mean_scale) const;

  void sample(std::mt19937_64& rng, std::span<double> out) const;
  SampleSet sample_set(std::mt19937_64& rng, std::size_t count) const;

  double mean1d() const;      // requires dim == 1
  double variance1d() const;  // requires dim == 1

  // JSON block {"components": [{"weight", "mean", "variance"}, ...]}.
  std::string to_json_string() const;
  static GaussianMixtureModel from_json_string(const std::string& text);

 private:
  int dim_ = 0;
  std::vector<GmmComponent> components_;
};

// Conditional flow field, parameterized by its noise prediction:
// eps_s(x, z) estimates the noise that produced x at time s, and the velocity
// of the noising flow is v_s = sigma'(s) * eps_s. `evaluate` is that exact
// scalar multiple of `epsilon`, so the two views never disagree.
class ConditionalFlowField {
 public:
  virtual ~ConditionalFlowField() = default;

  virtual int dim() const = 0;
  const DiffusionSchedule& schedule() const { return sched_; }

  virtual void epsilon(std::span<const double> x, std::span<const double> z, double s,
                       std::span<double> out) const = 0;
  // Divergence of eps_s in x when available analytically.
  virtual std::optional<double> epsilon_divergence(std::span<const double> x,
                                                   std::span<const double> z, double s) const {
    (void)x, (void)z, (void)s;
    return std::nullopt;
  }

  void evaluate(std::span<const double> x, std::span<const double> z, double s,
                std::span<double> out) const;
  std::optional<double> divergence(std::span<const double> x, std::span<const double> z,
                                   double s) const;

 protected:
  explicit ConditionalFlowField(DiffusionSchedule sched) : sched_(std::move(sched)) {}
  DiffusionSchedule sched_;
};

// Model-consistent flow of a known mixture: eps = -sigma(s) * score of the
// noised mixture (general schedules go through gamma1 * score + gamma2 * x).
class MixtureImcfFlow : public ConditionalFlowField {
 public:
  MixtureImcfFlow(GaussianMixtureModel gmm, DiffusionSchedule sched);

  int dim() const override { return gmm_.dim(); }
  const GaussianMixtureModel& gmm() const { return gmm_; }
  void epsilon(std::span<const double> x, std::span<const double> z, double s,
               std::span<double> out) const override;
  std::optional<double> epsilon_divergence(std::span<const double> x, std::span<const double> z,
                                           double s) const override;
  // Posterior mean E[X0 | Xs = x]; used to cross-check the two flow forms.
  void denoiser_mean(std::span<const double> x, double s, std::span<double> out) const;

 private:
  GaussianMixtureModel gmm_;
};

// Score of the mixture noised to time s.
void mixture_score(const GaussianMixtureModel& gmm, std::span<const double> x, double s,
                   const DiffusionSchedule& sched, std::span<double> out);

// Divergence of the mixture IMCF velocity at (x, s).
double mixture_divergence(const GaussianMixtureModel& gmm, std::span<const double> x, double s,
                          const DiffusionSchedule& sched);

MixtureImcfFlow imcf_flow(GaussianMixtureModel gmm, DiffusionSchedule sched);

// Empirical noise prediction built from terminal samples: the softmax-weighted
// field sum_i w_i(x) * (x - x_i) / sigma(s) with w = softmax(-|x - x_i|^2 / (2 sigma^2)),
// log-sum-exp stabilized. When div_out is non-null it receives the analytic
// divergence of the same field.
void empirical_epsilon_imcf(const SampleSet& samples, std::span<const double> x, double s,
                            const DiffusionSchedule& sched, std::span<double> eps_out,
                            double* div_out = nullptr);

}  // namespace schedev
