#pragma once

#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "schedev/flow.hpp"

namespace schedev {

// Cardinal natural-cubic-spline basis over strictly increasing scalar knots:
// basis i is the natural cubic spline through the indicator data (1 at knot i,
// 0 elsewhere), extended linearly beyond the knot range with matching slope.
class SplineWeights {
 public:
  // Cubic piece on [knots[j], knots[j+1]]: value = a + b*t + c*t^2 + d*t^3
  // with t = z - knots[j].
  struct Piece {
    double a = 0.0, b = 0.0, c = 0.0, d = 0.0;
  };

  static SplineWeights solve(std::vector<double> knots);

  std::size_t size() const { return knots_.size(); }
  const std::vector<double>& knots() const { return knots_; }
  const Piece& piece(std::size_t basis, std::size_t interval) const {
    return pieces_[basis][interval];
  }

  // All basis weights at z. Exact indicator values when z hits a knot.
  std::vector<double> weights(double z) const;
  double weight(std::size_t basis, double z) const;
  // order in {0, 1, 2}; piecewise-polynomial derivative (right-continuous
  // piece selection inside the knot range).
  double derivative(std::size_t basis, double z, int order) const;

  // Rows: basis, interval, z_left, a, b, c, d.
  std::string coefficients_csv() const;

 private:
  std::vector<double> knots_;
  std::vector<std::vector<Piece>> pieces_;  // [basis][interval]
  std::vector<double> left_slope_, right_slope_;
  std::size_t interval_of(double z) const;
};

// Closed-form approximation of the continuous-support guidance weight:
// gamma(u) = c1 * (1 + c2 * u^2)^(-3/2).
struct GuidanceKernel {
  double c1 = 1.5;
  double c2 = 16.0;

  double gamma(double u) const;
  // (w0, w1) = (gamma(z), gamma(1-z)) / (gamma(z) + gamma(1-z)).
  std::pair<double, double> weights(double z) const;
};

// Conditional flow assembled from per-knot base flows with spline weights:
// eps(x, z) = sum_i p_i(z) * eps_i(x, z_i). Zero weights are skipped so a
// query at a knot reproduces that base flow bit for bit.
class SplineGuidedFlow : public ConditionalFlowField {
 public:
  SplineGuidedFlow(SplineWeights weights,
                   std::vector<std::shared_ptr<const ConditionalFlowField>> base_flows);

  int dim() const override;
  const SplineWeights& spline() const { return weights_; }
  void epsilon(std::span<const double> x, std::span<const double> z, double s,
               std::span<double> out) const override;
  std::optional<double> epsilon_divergence(std::span<const double> x, std::span<const double> z,
                                           double s) const override;

 private:
  SplineWeights weights_;
  std::vector<std::shared_ptr<const ConditionalFlowField>> base_;
};

// Two-anchor kernel-weighted flow between conditioning values 0 and 1.
class KernelGuidedFlow : public ConditionalFlowField {
 public:
  KernelGuidedFlow(std::shared_ptr<const ConditionalFlowField> flow0,
                   std::shared_ptr<const ConditionalFlowField> flow1,
                   GuidanceKernel kernel = GuidanceKernel{});

  int dim() const override;
  void epsilon(std::span<const double> x, std::span<const double> z, double s,
               std::span<double> out) const override;
  std::optional<double> epsilon_divergence(std::span<const double> x, std::span<const double> z,
                                           double s) const override;

 private:
  std::shared_ptr<const ConditionalFlowField> flow0_, flow1_;
  GuidanceKernel kernel_;
};

}  // namespace schedev
