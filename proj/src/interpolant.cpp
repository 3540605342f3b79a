#include "schedev/interpolant.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace schedev {

namespace {

// Natural cubic spline through (knots, y): second derivatives at the interior
// knots from the standard tridiagonal system, zero at both ends.
std::vector<SplineWeights::Piece> natural_spline_pieces(const std::vector<double>& knots,
                                                        const std::vector<double>& y) {
  std::size_t n = knots.size();
  std::vector<double> h(n - 1);
  for (std::size_t i = 0; i + 1 < n; ++i) h[i] = knots[i + 1] - knots[i];

  std::vector<double> m(n, 0.0);  // second derivatives
  if (n > 2) {
    std::size_t k = n - 2;  // interior unknowns
    std::vector<double> diag(k), rhs(k), upper(k);
    for (std::size_t i = 0; i < k; ++i) {
      diag[i] = 2.0 * (h[i] + h[i + 1]);
      upper[i] = h[i + 1];
      rhs[i] = 6.0 * ((y[i + 2] - y[i + 1]) / h[i + 1] - (y[i + 1] - y[i]) / h[i]);
    }
    // Thomas elimination; sub-diagonal entry for row i is h[i].
    for (std::size_t i = 1; i < k; ++i) {
      double w = h[i] / diag[i - 1];
      diag[i] -= w * upper[i - 1];
      rhs[i] -= w * rhs[i - 1];
    }
    m[k] = rhs[k - 1] / diag[k - 1];
    for (std::size_t i = k - 1; i > 0; --i) m[i] = (rhs[i - 1] - upper[i - 1] * m[i + 1]) / diag[i - 1];
  }

  std::vector<SplineWeights::Piece> pieces(n - 1);
  for (std::size_t i = 0; i + 1 < n; ++i) {
    pieces[i].a = y[i];
    pieces[i].b = (y[i + 1] - y[i]) / h[i] - h[i] * (2.0 * m[i] + m[i + 1]) / 6.0;
    pieces[i].c = m[i] / 2.0;
    pieces[i].d = (m[i + 1] - m[i]) / (6.0 * h[i]);
  }
  return pieces;
}

}  // namespace

SplineWeights SplineWeights::solve(std::vector<double> knots) {
  if (knots.size() < 2) throw std::invalid_argument("spline weights need at least 2 knots");
  for (std::size_t i = 1; i < knots.size(); ++i) {
    if (knots[i] == knots[i - 1])
      throw std::invalid_argument("degenerate knot support: duplicate knot values");
    if (knots[i] < knots[i - 1])
      throw std::invalid_argument("knots must be strictly increasing");
  }
  SplineWeights sw;
  sw.knots_ = std::move(knots);
  std::size_t n = sw.knots_.size();
  sw.pieces_.resize(n);
  sw.left_slope_.resize(n);
  sw.right_slope_.resize(n);
  std::vector<double> y(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    y.assign(n, 0.0);
    y[i] = 1.0;
    sw.pieces_[i] = natural_spline_pieces(sw.knots_, y);
    const Piece& first = sw.pieces_[i].front();
    const Piece& last = sw.pieces_[i].back();
    double hl = sw.knots_[n - 1] - sw.knots_[n - 2];
    sw.left_slope_[i] = first.b;
    sw.right_slope_[i] = last.b + 2.0 * last.c * hl + 3.0 * last.d * hl * hl;
  }
  return sw;
}

std::size_t SplineWeights::interval_of(double z) const {
  // Largest j with knots[j] <= z, clamped to a valid interval index.
  auto it = std::upper_bound(knots_.begin(), knots_.end(), z);
  std::size_t j = it == knots_.begin() ? 0 : static_cast<std::size_t>(it - knots_.begin()) - 1;
  return std::min(j, knots_.size() - 2);
}

double SplineWeights::weight(std::size_t basis, double z) const {
  std::size_t n = knots_.size();
  if (z <= knots_.front())
    return (basis == 0 ? 1.0 : 0.0) + left_slope_[basis] * (z - knots_.front());
  if (z >= knots_.back())
    return (basis == n - 1 ? 1.0 : 0.0) + right_slope_[basis] * (z - knots_.back());
  std::size_t j = interval_of(z);
  if (z == knots_[j]) return basis == j ? 1.0 : 0.0;  // exact cardinality
  const Piece& p = pieces_[basis][j];
  double t = z - knots_[j];
  return p.a + t * (p.b + t * (p.c + t * p.d));
}

std::vector<double> SplineWeights::weights(double z) const {
  std::vector<double> w(knots_.size());
  for (std::size_t i = 0; i < knots_.size(); ++i) w[i] = weight(i, z);
  return w;
}

double SplineWeights::derivative(std::size_t basis, double z, int order) const {
  if (order == 0) return weight(basis, z);
  if (order < 0 || order > 2) throw std::invalid_argument("derivative order must be 0, 1 or 2");
  if (z < knots_.front()) return order == 1 ? left_slope_[basis] : 0.0;
  if (z > knots_.back()) return order == 1 ? right_slope_[basis] : 0.0;
  std::size_t j = interval_of(z);
  const Piece& p = pieces_[basis][j];
  double t = z - knots_[j];
  if (order == 1) return p.b + t * (2.0 * p.c + t * 3.0 * p.d);
  return 2.0 * p.c + 6.0 * p.d * t;
}

std::string SplineWeights::coefficients_csv() const {
  std::ostringstream out;
  out.precision(17);
  out << "basis,interval,z_left,a,b,c,d\n";
  for (std::size_t i = 0; i < pieces_.size(); ++i) {
    for (std::size_t j = 0; j < pieces_[i].size(); ++j) {
      const Piece& p = pieces_[i][j];
      out << i << "," << j << "," << knots_[j] << "," << p.a << "," << p.b << "," << p.c << ","
          << p.d << "\n";
    }
  }
  return out.str();
}

double GuidanceKernel::gamma(double u) const {
  return c1 * std::pow(1.0 + c2 * u * u, -1.5);
}

std::pair<double, double> GuidanceKernel::weights(double z) const {
  double g0 = gamma(z);
  double g1 = gamma(1.0 - z);
  double norm = g0 + g1;
  return {g0 / norm, g1 / norm};
}

namespace {

// Validates the base-flow list and hands back the shared schedule for the
// ConditionalFlowField base constructor.
DiffusionSchedule check_base_flows(
    const std::vector<std::shared_ptr<const ConditionalFlowField>>& base) {
  if (base.empty()) throw std::invalid_argument("guided flow needs base flows");
  for (const auto& f : base) {
    if (!f) throw std::invalid_argument("guided flow received a null base flow");
    if (f->dim() != base.front()->dim())
      throw std::invalid_argument("dimension mismatch among base flows");
  }
  return base.front()->schedule();
}

}  // namespace

SplineGuidedFlow::SplineGuidedFlow(SplineWeights weights,
                                   std::vector<std::shared_ptr<const ConditionalFlowField>> base_flows)
    : ConditionalFlowField(check_base_flows(base_flows)),
      weights_(std::move(weights)),
      base_(std::move(base_flows)) {
  if (base_.size() != weights_.size())
    throw std::invalid_argument("one base flow per knot required");
}

int SplineGuidedFlow::dim() const { return base_.front()->dim(); }

void SplineGuidedFlow::epsilon(std::span<const double> x, std::span<const double> z, double s,
                               std::span<double> out) const {
  if (z.empty()) throw std::invalid_argument("guided flow needs a scalar conditioning value");
  auto w = weights_.weights(z[0]);
  std::fill(out.begin(), out.end(), 0.0);
  std::vector<double> tmp(out.size());
  for (std::size_t i = 0; i < base_.size(); ++i) {
    if (w[i] == 0.0) continue;
    double zi = weights_.knots()[i];
    base_[i]->epsilon(x, {&zi, 1}, s, tmp);
    for (std::size_t j = 0; j < out.size(); ++j) out[j] += w[i] * tmp[j];
  }
}

std::optional<double> SplineGuidedFlow::epsilon_divergence(std::span<const double> x,
                                                           std::span<const double> z,
                                                           double s) const {
  if (z.empty()) throw std::invalid_argument("guided flow needs a scalar conditioning value");
  auto w = weights_.weights(z[0]);
  double acc = 0.0;
  for (std::size_t i = 0; i < base_.size(); ++i) {
    if (w[i] == 0.0) continue;
    double zi = weights_.knots()[i];
    auto di = base_[i]->epsilon_divergence(x, {&zi, 1}, s);
    if (!di) return std::nullopt;
    acc += w[i] * *di;
  }
  return acc;
}

KernelGuidedFlow::KernelGuidedFlow(std::shared_ptr<const ConditionalFlowField> flow0,
                                   std::shared_ptr<const ConditionalFlowField> flow1,
                                   GuidanceKernel kernel)
    : ConditionalFlowField(check_base_flows({flow0, flow1})),
      flow0_(std::move(flow0)),
      flow1_(std::move(flow1)),
      kernel_(kernel) {}

int KernelGuidedFlow::dim() const { return flow0_->dim(); }

void KernelGuidedFlow::epsilon(std::span<const double> x, std::span<const double> z, double s,
                               std::span<double> out) const {
  if (z.empty()) throw std::invalid_argument("guided flow needs a scalar conditioning value");
  auto [w0, w1] = kernel_.weights(z[0]);
  double z0 = 0.0, z1 = 1.0;
  std::vector<double> tmp(out.size());
  flow0_->epsilon(x, {&z0, 1}, s, out);
  flow1_->epsilon(x, {&z1, 1}, s, tmp);
  for (std::size_t j = 0; j < out.size(); ++j) out[j] = w0 * out[j] + w1 * tmp[j];
}

std::optional<double> KernelGuidedFlow::epsilon_divergence(std::span<const double> x,
                                                           std::span<const double> z,
                                                           double s) const {
  if (z.empty()) throw std::invalid_argument("guided flow needs a scalar conditioning value");
  auto [w0, w1] = kernel_.weights(z[0]);
  double z0 = 0.0, z1 = 1.0;
  auto d0 = flow0_->epsilon_divergence(x, {&z0, 1}, s);
  auto d1 = flow1_->epsilon_divergence(x, {&z1, 1}, s);
  if (!d0 || !d1) return std::nullopt;
  return w0 * *d0 + w1 * *d1;
}

}  // namespace schedev
