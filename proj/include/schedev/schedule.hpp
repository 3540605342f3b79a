#pragma once

#include <functional>
#include <vector>

namespace schedev {

// Coefficients of the two equivalent closed forms of the model-consistent flow
// at time s:
//   v(x) = c1 * E[X0 | Xs = x] + c2 * x
//        = gamma1 * score(x)   + gamma2 * x
struct ScheduleCoefficients {
  double c1 = 0.0;      // alpha' - (sigma'/sigma) * alpha
  double c2 = 0.0;      // sigma'/sigma
  double gamma1 = 0.0;  // (alpha'/alpha) * sigma^2 - sigma' * sigma
  double gamma2 = 0.0;  // alpha'/alpha
};

// Noising schedule (sigma(s), alpha(s)) on s in [0, 1]. Time runs from data
// (s = 0) to noise (s = 1). The default construction is the variance-exploding
// log-linear schedule: alpha = 1 and sigma(s) = sigma_min * (sigma_max/sigma_min)^s.
class DiffusionSchedule {
 public:
  // Requires 0 < sigma_min <= sigma_max. sigma_min == sigma_max gives a
  // constant schedule (sigma' = 0).
  static DiffusionSchedule log_linear_ve(double sigma_min, double sigma_max);

  // Schedule given by callables for sigma, alpha and their s-derivatives.
  // `ve` marks schedules with alpha identically 1.
  static DiffusionSchedule general(std::function<double(double)> sigma,
                                   std::function<double(double)> sigma_dot,
                                   std::function<double(double)> alpha,
                                   std::function<double(double)> alpha_dot, bool ve = false);

  double sigma(double s) const;
  double sigma_dot(double s) const;
  double alpha(double s) const;
  double alpha_dot(double s) const;

  // Throws SingularScheduleError when sigma(s) = 0 (c2, gamma1) or
  // alpha(s) = 0 (gamma1, gamma2).
  ScheduleCoefficients coefficients(double s) const;

  bool is_ve() const { return ve_; }
  bool is_log_linear() const { return log_linear_; }
  // log(sigma_max / sigma_min); equals the constant c2 of a log-linear schedule.
  double log_ratio() const;
  double sigma_min() const;
  double sigma_max() const;

  // Checks the normalized-schedule boundary values sigma(1) = alpha(0) = 1,
  // alpha(1) = sigma(0) = 0 within tol; throws std::invalid_argument otherwise.
  void validate_normalized_boundary(double tol = 1e-9) const;

 private:
  DiffusionSchedule() = default;
  static void check_s(double s);

  bool log_linear_ = false;
  bool ve_ = false;
  double sigma_min_ = 0.0;
  double sigma_max_ = 0.0;
  double c2_ = 0.0;  // log(sigma_max/sigma_min) for the log-linear form
  std::function<double(double)> sigma_fn_, sigma_dot_fn_, alpha_fn_, alpha_dot_fn_;
};

// Rescaling x -> x / (1 + sigma(s)) of a VE schedule, which yields the
// normalized pair alpha_eff = 1/(1+sigma), sigma_eff = sigma/(1+sigma).
DiffusionSchedule normalized(const DiffusionSchedule& ve);

// Uniform evaluation grid on (0, 1): `steps` points offset from both endpoints
// by `margin`. The default margin 1/(2*steps) makes the spacing exactly
// 1/steps (cell midpoints of the uniform partition of [0, 1]).
std::vector<double> time_grid(int steps, double margin = -1.0);

}  // namespace schedev
