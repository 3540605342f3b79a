#include "schedev/flow.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include "schedev/rng.hpp"

namespace schedev {

namespace {

// log N(x; mean_scale * mu, var * I) up to the dimension-only constant.
double component_log_density(std::span<const double> x, const std::vector<double>& mu,
                             double mean_scale, double var) {
  double q = 0.0;
  for (std::size_t j = 0; j < x.size(); ++j) {
    double d = x[j] - mean_scale * mu[j];
    q += d * d;
  }
  return -0.5 * q / var - 0.5 * x.size() * std::log(2.0 * std::numbers::pi * var);
}

}  // namespace

GaussianMixtureModel::GaussianMixtureModel(std::vector<GmmComponent> components)
    : components_(std::move(components)) {
  if (components_.empty()) throw std::invalid_argument("mixture needs at least one component");
  dim_ = static_cast<int>(components_[0].mean.size());
  if (dim_ == 0) throw std::invalid_argument("mixture components need a nonempty mean");
  double total = 0.0;
  for (const auto& c : components_) {
    if (static_cast<int>(c.mean.size()) != dim_)
      throw std::invalid_argument("mixture components have inconsistent dimensions");
    if (!(c.weight > 0.0)) throw std::invalid_argument("mixture weights must be positive");
    if (!(c.variance > 0.0)) throw std::invalid_argument("mixture variances must be positive");
    total += c.weight;
  }
  if (std::abs(total - 1.0) > 1e-9)
    throw std::invalid_argument("mixture weights must sum to 1");
}

double GaussianMixtureModel::log_density(std::span<const double> x, double extra_var,
                                         double mean_scale) const {
  if (static_cast<int>(x.size()) != dim_)
    throw std::invalid_argument("point dimension does not match mixture");
  double best = -std::numeric_limits<double>::infinity();
  std::vector<double> logs(components_.size());
  for (std::size_t i = 0; i < components_.size(); ++i) {
    const auto& c = components_[i];
    double var = mean_scale * mean_scale * c.variance + extra_var;
    logs[i] = std::log(c.weight) + component_log_density(x, c.mean, mean_scale, var);
    best = std::max(best, logs[i]);
  }
  double acc = 0.0;
  for (double l : logs) acc += std::exp(l - best);
  return best + std::log(acc);
}

void GaussianMixtureModel::score(std::span<const double> x, double extra_var, double mean_scale,
                                 std::span<double> out) const {
  if (static_cast<int>(x.size()) != dim_ || static_cast<int>(out.size()) != dim_)
    throw std::invalid_argument("point dimension does not match mixture");
  std::vector<double> logs(components_.size());
  double best = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < components_.size(); ++i) {
    const auto& c = components_[i];
    double var = mean_scale * mean_scale * c.variance + extra_var;
    logs[i] = std::log(c.weight) + component_log_density(x, c.mean, mean_scale, var);
    best = std::max(best, logs[i]);
  }
  double norm = 0.0;
  for (double l : logs) norm += std::exp(l - best);
  std::fill(out.begin(), out.end(), 0.0);
  for (std::size_t i = 0; i < components_.size(); ++i) {
    const auto& c = components_[i];
    double var = mean_scale * mean_scale * c.variance + extra_var;
    double r = std::exp(logs[i] - best) / norm;
    for (int j = 0; j < dim_; ++j) out[j] -= r * (x[j] - mean_scale * c.mean[j]) / var;
  }
}

double GaussianMixtureModel::score_divergence(std::span<const double> x, double extra_var,
                                              double mean_scale) const {
  if (static_cast<int>(x.size()) != dim_)
    throw std::invalid_argument("point dimension does not match mixture");
  std::vector<double> logs(components_.size());
  double best = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < components_.size(); ++i) {
    const auto& c = components_[i];
    double var = mean_scale * mean_scale * c.variance + extra_var;
    logs[i] = std::log(c.weight) + component_log_density(x, c.mean, mean_scale, var);
    best = std::max(best, logs[i]);
  }
  double norm = 0.0;
  for (double l : logs) norm += std::exp(l - best);
  // trace of the log-density Hessian: responsibilities give
  // sum_i r_i (-d/v_i + |g_i|^2) - |sum_i r_i g_i|^2.
  std::vector<double> g_bar(dim_, 0.0);
  double acc = 0.0;
  std::vector<double> gi(dim_);
  for (std::size_t i = 0; i < components_.size(); ++i) {
    const auto& c = components_[i];
    double var = mean_scale * mean_scale * c.variance + extra_var;
    double r = std::exp(logs[i] - best) / norm;
    double g2 = 0.0;
    for (int j = 0; j < dim_; ++j) {
      gi[j] = -(x[j] - mean_scale * c.mean[j]) / var;
      g2 += gi[j] * gi[j];
      g_bar[j] += r * gi[j];
    }
    acc += r * (g2 - dim_ / var);
  }
  for (int j = 0; j < dim_; ++j) acc -= g_bar[j] * g_bar[j];
  return acc;
}

void GaussianMixtureModel::sample(std::mt19937_64& rng, std::span<double> out) const {
  if (static_cast<int>(out.size()) != dim_)
    throw std::invalid_argument("output dimension does not match mixture");
  double u = draw_uniform(rng);
  std::size_t pick = components_.size() - 1;
  double acc = 0.0;
  for (std::size_t i = 0; i < components_.size(); ++i) {
    acc += components_[i].weight;
    if (u <= acc) {
      pick = i;
      break;
    }
  }
  const auto& c = components_[pick];
  double sd = std::sqrt(c.variance);
  for (int j = 0; j < dim_; ++j) out[j] = c.mean[j] + sd * draw_normal(rng);
}

SampleSet GaussianMixtureModel::sample_set(std::mt19937_64& rng, std::size_t count) const {
  SampleSet set(dim_);
  set.data.resize(count * dim_);
  for (std::size_t i = 0; i < count; ++i)
    sample(rng, std::span<double>(set.data.data() + i * dim_, dim_));
  return set;
}

double GaussianMixtureModel::mean1d() const {
  if (dim_ != 1) throw std::logic_error("mean1d requires a 1D mixture");
  double m = 0.0;
  for (const auto& c : components_) m += c.weight * c.mean[0];
  return m;
}

double GaussianMixtureModel::variance1d() const {
  if (dim_ != 1) throw std::logic_error("variance1d requires a 1D mixture");
  double m = mean1d();
  double v = 0.0;
  for (const auto& c : components_)
    v += c.weight * (c.variance + (c.mean[0] - m) * (c.mean[0] - m));
  return v;
}

std::string GaussianMixtureModel::to_json_string() const {
  nlohmann::json j;
  j["components"] = nlohmann::json::array();
  for (const auto& c : components_) {
    j["components"].push_back(
        {{"weight", c.weight}, {"mean", c.mean}, {"variance", c.variance}});
  }
  return j.dump();
}

GaussianMixtureModel GaussianMixtureModel::from_json_string(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  if (!j.contains("components") || !j["components"].is_array())
    throw std::invalid_argument("mixture config needs a \"components\" array");
  std::vector<GmmComponent> comps;
  for (const auto& e : j["components"]) {
    GmmComponent c;
    c.weight = e.at("weight").get<double>();
    c.mean = e.at("mean").get<std::vector<double>>();
    c.variance = e.at("variance").get<double>();
    comps.push_back(std::move(c));
  }
  return GaussianMixtureModel(std::move(comps));
}

void ConditionalFlowField::evaluate(std::span<const double> x, std::span<const double> z, double s,
                                    std::span<double> out) const {
  epsilon(x, z, s, out);
  double sgd = sched_.sigma_dot(s);
  for (auto& v : out) v *= sgd;
}

std::optional<double> ConditionalFlowField::divergence(std::span<const double> x,
                                                       std::span<const double> z, double s) const {
  auto de = epsilon_divergence(x, z, s);
  if (!de) return std::nullopt;
  return sched_.sigma_dot(s) * *de;
}

MixtureImcfFlow::MixtureImcfFlow(GaussianMixtureModel gmm, DiffusionSchedule sched)
    : ConditionalFlowField(std::move(sched)), gmm_(std::move(gmm)) {}

void MixtureImcfFlow::epsilon(std::span<const double> x, std::span<const double> z, double s,
                              std::span<double> out) const {
  (void)z;  // conditioning is folded into the mixture
  double sg = sched_.sigma(s);
  if (sched_.is_ve()) {
    gmm_.score(x, sg * sg, 1.0, out);
    for (auto& v : out) v *= -sg;
    return;
  }
  auto co = sched_.coefficients(s);
  double al = sched_.alpha(s);
  double sgd = sched_.sigma_dot(s);
  gmm_.score(x, sg * sg, al, out);
  for (std::size_t j = 0; j < out.size(); ++j)
    out[j] = (co.gamma1 * out[j] + co.gamma2 * x[j]) / sgd;
}

std::optional<double> MixtureImcfFlow::epsilon_divergence(std::span<const double> x,
                                                          std::span<const double> z,
                                                          double s) const {
  (void)z;
  double sg = sched_.sigma(s);
  if (sched_.is_ve()) return -sg * gmm_.score_divergence(x, sg * sg, 1.0);
  auto co = sched_.coefficients(s);
  double al = sched_.alpha(s);
  double sgd = sched_.sigma_dot(s);
  return (co.gamma1 * gmm_.score_divergence(x, sg * sg, al) + co.gamma2 * gmm_.dim()) / sgd;
}

void MixtureImcfFlow::denoiser_mean(std::span<const double> x, double s,
                                    std::span<double> out) const {
  double sg = sched_.sigma(s);
  double al = sched_.alpha(s);
  const auto& comps = gmm_.components();
  std::vector<double> logs(comps.size());
  double best = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < comps.size(); ++i) {
    double var = al * al * comps[i].variance + sg * sg;
    logs[i] = std::log(comps[i].weight) + component_log_density(x, comps[i].mean, al, var);
    best = std::max(best, logs[i]);
  }
  double norm = 0.0;
  for (double l : logs) norm += std::exp(l - best);
  std::fill(out.begin(), out.end(), 0.0);
  for (std::size_t i = 0; i < comps.size(); ++i) {
    double var = al * al * comps[i].variance + sg * sg;
    double r = std::exp(logs[i] - best) / norm;
    double shrink = al * comps[i].variance / var;
    for (std::size_t j = 0; j < out.size(); ++j)
      out[j] += r * (comps[i].mean[j] + shrink * (x[j] - al * comps[i].mean[j]));
  }
}

void mixture_score(const GaussianMixtureModel& gmm, std::span<const double> x, double s,
                   const DiffusionSchedule& sched, std::span<double> out) {
  double sg = sched.sigma(s);
  gmm.score(x, sg * sg, sched.alpha(s), out);
}

double mixture_divergence(const GaussianMixtureModel& gmm, std::span<const double> x, double s,
                          const DiffusionSchedule& sched) {
  auto co = sched.coefficients(s);
  double sg = sched.sigma(s);
  return co.gamma1 * gmm.score_divergence(x, sg * sg, sched.alpha(s)) + co.gamma2 * gmm.dim();
}

MixtureImcfFlow imcf_flow(GaussianMixtureModel gmm, DiffusionSchedule sched) {
  return MixtureImcfFlow(std::move(gmm), std::move(sched));
}

void empirical_epsilon_imcf(const SampleSet& samples, std::span<const double> x, double s,
                            const DiffusionSchedule& sched, std::span<double> eps_out,
                            double* div_out) {
  std::size_t n = samples.n();
  if (n == 0) throw std::invalid_argument("empirical_epsilon_imcf needs at least one sample");
  int d = samples.dim;
  if (static_cast<int>(x.size()) != d || static_cast<int>(eps_out.size()) != d)
    throw std::invalid_argument("point dimension does not match sample set");
  double sg = sched.sigma(s);
  double al = sched.alpha(s);
  double var = sg * sg;

  std::vector<double> logs(n);
  double best = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n; ++i) {
    auto xi = samples.row(i);
    double q = 0.0;
    for (int j = 0; j < d; ++j) {
      double diff = x[j] - al * xi[j];
      q += diff * diff;
    }
    logs[i] = -0.5 * q / var;
    best = std::max(best, logs[i]);
  }
  double norm = 0.0;
  for (double l : logs) norm += std::exp(l - best);

  std::fill(eps_out.begin(), eps_out.end(), 0.0);
  // Divergence of the softmax field: eps = -sigma * grad log q_hat, so
  // div eps = d/sigma - tr Cov_w(x_i) / sigma^3.
  double second = 0.0;
  std::vector<double> diff(d);
  for (std::size_t i = 0; i < n; ++i) {
    auto xi = samples.row(i);
    double w = std::exp(logs[i] - best) / norm;
    double q = 0.0;
    for (int j = 0; j < d; ++j) {
      diff[j] = x[j] - al * xi[j];
      eps_out[j] += w * diff[j] / sg;
      q += diff[j] * diff[j];
    }
    second += w * q;
  }
  if (div_out) {
    double mean_sq = 0.0;
    for (int j = 0; j < d; ++j) mean_sq += eps_out[j] * eps_out[j];
    // tr Cov = E_w|x - a x_i|^2 - |E_w (x - a x_i)|^2
    double tr_cov = second - mean_sq * var;
    *div_out = d / sg - tr_cov / (var * sg);
  }
}

}  // namespace schedev
