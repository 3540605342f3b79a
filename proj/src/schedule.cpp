#include "schedev/schedule.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

#include "schedev/errors.hpp"

namespace schedev {

void DiffusionSchedule::check_s(double s) {
  if (!(s >= 0.0 && s <= 1.0)) {
    std::ostringstream msg;
    msg << "schedule time s = " << s << " outside [0, 1]";
    throw std::domain_error(msg.str());
  }
}

DiffusionSchedule DiffusionSchedule::log_linear_ve(double sigma_min, double sigma_max) {
  if (!(sigma_min > 0.0) || !(sigma_max >= sigma_min))
    throw std::invalid_argument("log_linear_ve requires 0 < sigma_min <= sigma_max");
  DiffusionSchedule sched;
  sched.log_linear_ = true;
  sched.ve_ = true;
  sched.sigma_min_ = sigma_min;
  sched.sigma_max_ = sigma_max;
  sched.c2_ = std::log(sigma_max / sigma_min);
  return sched;
}

DiffusionSchedule DiffusionSchedule::general(std::function<double(double)> sigma,
                                             std::function<double(double)> sigma_dot,
                                             std::function<double(double)> alpha,
                                             std::function<double(double)> alpha_dot, bool ve) {
  if (!sigma || !sigma_dot || !alpha || !alpha_dot)
    throw std::invalid_argument("general schedule requires all four descriptors");
  DiffusionSchedule sched;
  sched.ve_ = ve;
  sched.sigma_fn_ = std::move(sigma);
  sched.sigma_dot_fn_ = std::move(sigma_dot);
  sched.alpha_fn_ = std::move(alpha);
  sched.alpha_dot_fn_ = std::move(alpha_dot);
  return sched;
}

double DiffusionSchedule::sigma(double s) const {
  check_s(s);
  if (log_linear_) return sigma_min_ * std::exp(c2_ * s);
  return sigma_fn_(s);
}

double DiffusionSchedule::sigma_dot(double s) const {
  check_s(s);
  if (log_linear_) return c2_ * sigma_min_ * std::exp(c2_ * s);
  return sigma_dot_fn_(s);
}

double DiffusionSchedule::alpha(double s) const {
  check_s(s);
  if (log_linear_) return 1.0;
  return alpha_fn_(s);
}

double DiffusionSchedule::alpha_dot(double s) const {
  check_s(s);
  if (log_linear_) return 0.0;
  return alpha_dot_fn_(s);
}

ScheduleCoefficients DiffusionSchedule::coefficients(double s) const {
  check_s(s);
  double sg = sigma(s);
  double sgd = sigma_dot(s);
  double al = alpha(s);
  double ald = alpha_dot(s);
  if (sg == 0.0) {
    std::ostringstream msg;
    msg << "c2 = sigma'/sigma undefined: sigma(" << s << ") = 0";
    throw SingularScheduleError(msg.str());
  }
  if (al == 0.0) {
    std::ostringstream msg;
    msg << "gamma2 = alpha'/alpha undefined: alpha(" << s << ") = 0";
    throw SingularScheduleError(msg.str());
  }
  ScheduleCoefficients co;
  co.c2 = sgd / sg;
  co.c1 = ald - co.c2 * al;
  co.gamma2 = ald / al;
  co.gamma1 = co.gamma2 * sg * sg - sgd * sg;
  return co;
}

double DiffusionSchedule::log_ratio() const {
  if (!log_linear_) throw std::logic_error("log_ratio is defined for log-linear schedules");
  return c2_;
}

double DiffusionSchedule::sigma_min() const { return log_linear_ ? sigma_min_ : sigma_fn_(0.0); }

double DiffusionSchedule::sigma_max() const { return log_linear_ ? sigma_max_ : sigma_fn_(1.0); }

void DiffusionSchedule::validate_normalized_boundary(double tol) const {
  auto check = [tol](const char* name, double got, double want) {
    if (std::abs(got - want) > tol) {
      std::ostringstream msg;
      msg << "normalized schedule boundary violated: " << name << " = " << got << ", expected "
          << want;
      throw std::invalid_argument(msg.str());
    }
  };
  check("sigma(0)", sigma(0.0), 0.0);
  check("sigma(1)", sigma(1.0), 1.0);
  check("alpha(0)", alpha(0.0), 1.0);
  check("alpha(1)", alpha(1.0), 0.0);
}

DiffusionSchedule normalized(const DiffusionSchedule& ve) {
  if (!ve.is_ve()) throw std::invalid_argument("normalized() expects a VE schedule");
  auto sig = [ve](double s) { return ve.sigma(s) / (1.0 + ve.sigma(s)); };
  auto sig_dot = [ve](double s) {
    double d = 1.0 + ve.sigma(s);
    return ve.sigma_dot(s) / (d * d);
  };
  auto al = [ve](double s) { return 1.0 / (1.0 + ve.sigma(s)); };
  auto al_dot = [ve](double s) {
    double d = 1.0 + ve.sigma(s);
    return -ve.sigma_dot(s) / (d * d);
  };
  return DiffusionSchedule::general(sig, sig_dot, al, al_dot, false);
}

std::vector<double> time_grid(int steps, double margin) {
  if (steps < 1) throw std::invalid_argument("time_grid requires steps >= 1");
  if (margin < 0.0) margin = 1.0 / (2.0 * steps);
  if (!(margin >= 0.0 && 2.0 * margin < 1.0))
    throw std::invalid_argument("time_grid requires 0 <= margin < 1/2");
  std::vector<double> grid(steps);
  if (steps == 1) {
    grid[0] = 0.5;
    return grid;
  }
  double lo = margin;
  double hi = 1.0 - margin;
  double ds = (hi - lo) / (steps - 1);
  for (int k = 0; k < steps; ++k) grid[k] = lo + ds * k;
  return grid;
}

}  // namespace schedev
