// Acceptance gate: one line per criterion, nonzero exit when any fails.
// Every tolerance and seed is pinned here; the calibration notes next to the
// checks record what the pinned configuration actually measures.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "schedev/dataset.hpp"
#include "schedev/experiment.hpp"
#include "schedev/flow.hpp"
#include "schedev/interpolant.hpp"
#include "schedev/rng.hpp"
#include "schedev/sampler.hpp"
#include "schedev/schedule.hpp"
#include "schedev/sd.hpp"
#include "schedev/tinyflow.hpp"
#include "schedev/transport.hpp"

using namespace schedev;

namespace {

int failures = 0;

void run_criterion(int n, const std::string& what,
                   const std::function<void(std::ostringstream&)>& body) {
  std::ostringstream detail;
  bool ok = true;
  auto t0 = std::chrono::steady_clock::now();
  try {
    body(detail);
  } catch (const std::exception& e) {
    detail << " threw: " << e.what();
  }
  double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  ok = detail.str().empty();
  if (!ok) ++failures;
  std::printf("[%s] %2d: %s (%.1f s)%s\n", ok ? "PASS" : "FAIL", n, what.c_str(), wall,
              detail.str().c_str());
  std::fflush(stdout);
}

// Failure accumulator: every unmet condition appends one clause.
void expect(std::ostringstream& detail, bool cond, const std::string& clause) {
  if (!cond) detail << " | " << clause;
}

std::string num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.4g", v);
  return buf;
}

DiffusionSchedule default_sched() { return DiffusionSchedule::log_linear_ve(5e-4, 5.0); }
DiffusionSchedule gentle_sched() { return DiffusionSchedule::log_linear_ve(0.01, 1.0); }

GaussianMixtureModel gauss(std::vector<double> mean, double var, double weight = 1.0) {
  GmmComponent c;
  c.weight = weight;
  c.mean = std::move(mean);
  c.variance = var;
  return GaussianMixtureModel({c});
}

std::shared_ptr<const ConditionalFlowField> single_flow(double mu, double var,
                                                        const DiffusionSchedule& sched) {
  return std::make_shared<MixtureImcfFlow>(gauss({mu}, var), sched);
}

double eval1d(const ConditionalFlowField& flow, double x, double z, double s) {
  double out = 0.0;
  flow.evaluate({&x, 1}, {&z, 1}, s, {&out, 1});
  return out;
}

double eps1d(const ConditionalFlowField& flow, double x, double z, double s) {
  double out = 0.0;
  flow.epsilon({&x, 1}, {&z, 1}, s, {&out, 1});
  return out;
}

struct Moments {
  double mean = 0.0, var = 0.0, mean_stderr = 0.0, var_stderr = 0.0;
};

Moments sample_moments(const SampleSet& set) {
  Moments m;
  std::size_t n = set.n();
  for (std::size_t i = 0; i < n; ++i) m.mean += set.data[i];
  m.mean /= n;
  double m4 = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double d = set.data[i] - m.mean;
    m.var += d * d;
    m4 += d * d * d * d;
  }
  m.var /= n;
  m4 /= n;
  m.mean_stderr = std::sqrt(m.var / n);
  m.var_stderr = std::sqrt(std::max(0.0, m4 - m.var * m.var) / n);
  return m;
}

// ---- independent oracles, kept free of the library's solvers ----

// Dense Gaussian elimination with partial pivoting.
std::vector<double> solve_dense(std::vector<std::vector<double>> a, std::vector<double> rhs) {
  std::size_t n = rhs.size();
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t pivot = col;
    for (std::size_t r = col + 1; r < n; ++r)
      if (std::abs(a[r][col]) > std::abs(a[pivot][col])) pivot = r;
    std::swap(a[col], a[pivot]);
    std::swap(rhs[col], rhs[pivot]);
    for (std::size_t r = col + 1; r < n; ++r) {
      double f = a[r][col] / a[col][col];
      for (std::size_t c = col; c < n; ++c) a[r][c] -= f * a[col][c];
      rhs[r] -= f * rhs[col];
    }
  }
  std::vector<double> x(n);
  for (std::size_t i = n; i-- > 0;) {
    double acc = rhs[i];
    for (std::size_t c = i + 1; c < n; ++c) acc -= a[i][c] * x[c];
    x[i] = acc / a[i][i];
  }
  return x;
}

// Natural-spline cardinal basis via the raw 4(N-1)-unknown constraint system.
std::vector<SplineWeights::Piece> oracle_pieces(const std::vector<double>& knots,
                                                const std::vector<double>& y) {
  std::size_t intervals = knots.size() - 1;
  std::size_t n = 4 * intervals;
  std::vector<std::vector<double>> a(n, std::vector<double>(n, 0.0));
  std::vector<double> rhs(n, 0.0);
  std::size_t row = 0;
  auto col = [](std::size_t interval, std::size_t coeff) { return 4 * interval + coeff; };
  for (std::size_t i = 0; i < intervals; ++i) {
    double h = knots[i + 1] - knots[i];
    a[row][col(i, 0)] = 1.0;
    rhs[row++] = y[i];
    a[row][col(i, 0)] = 1.0;
    a[row][col(i, 1)] = h;
    a[row][col(i, 2)] = h * h;
    a[row][col(i, 3)] = h * h * h;
    rhs[row++] = y[i + 1];
    if (i + 1 < intervals) {
      a[row][col(i, 1)] = 1.0;
      a[row][col(i, 2)] = 2.0 * h;
      a[row][col(i, 3)] = 3.0 * h * h;
      a[row][col(i + 1, 1)] = -1.0;
      rhs[row++] = 0.0;
      a[row][col(i, 2)] = 2.0;
      a[row][col(i, 3)] = 6.0 * h;
      a[row][col(i + 1, 2)] = -2.0;
      rhs[row++] = 0.0;
    }
  }
  a[row][col(0, 2)] = 1.0;
  rhs[row++] = 0.0;
  double h_last = knots[intervals] - knots[intervals - 1];
  a[row][col(intervals - 1, 2)] = 2.0;
  a[row][col(intervals - 1, 3)] = 6.0 * h_last;
  rhs[row++] = 0.0;
  auto sol = solve_dense(std::move(a), std::move(rhs));
  std::vector<SplineWeights::Piece> pieces(intervals);
  for (std::size_t i = 0; i < intervals; ++i)
    pieces[i] = {sol[col(i, 0)], sol[col(i, 1)], sol[col(i, 2)], sol[col(i, 3)]};
  return pieces;
}

// Factorial brute force over all pairings.
double brute_force_emd(const SampleSet& a, const SampleSet& b) {
  std::vector<std::size_t> perm(a.n());
  std::iota(perm.begin(), perm.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  do {
    double total = 0.0;
    for (std::size_t i = 0; i < a.n(); ++i) {
      double sq = 0.0;
      for (int k = 0; k < a.dim; ++k) {
        double d = a.row(i)[k] - b.row(perm[i])[k];
        sq += d * d;
      }
      total += std::sqrt(sq);
    }
    best = std::min(best, total);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best / static_cast<double>(a.n());
}

// ---- shared fixtures ----

std::vector<ToySample> toy_data(int count, std::uint64_t seed) {
  ToySpec spec;
  spec.count = count;
  auto rng = substream(seed, 1);
  return sample_toy(spec, rng);
}

SplineGuidedFlow variance_mismatch_flow(const DiffusionSchedule& sched) {
  std::vector<std::shared_ptr<const ConditionalFlowField>> bases{
      std::make_shared<MixtureImcfFlow>(gauss({0.0}, 0.01), sched),
      std::make_shared<MixtureImcfFlow>(gauss({0.0}, 0.04), sched)};
  return SplineGuidedFlow(SplineWeights::solve({0.0, 1.0}), std::move(bases));
}

double self_consistent_tau2(const DiffusionSchedule& sched, double vbar, double margin) {
  double s0 = sched.sigma(margin), s1 = sched.sigma(1.0);
  double ratio = ((vbar + s1 * s1) / (vbar + s0 * s0)) *
                 ((4 * vbar + s1 * s1) / (4 * vbar + s0 * s0));
  double f2 = std::pow(ratio, -0.5);
  return f2 * s1 * s1 / (1.0 - f2);
}

// KDE local maxima above a fifth of the peak, bandwidth 0.05 over [-0.5, 1.5].
std::vector<double> kde_modes(const SampleSet& set) {
  const int grid = 801;
  std::vector<double> dens(grid);
  for (int i = 0; i < grid; ++i) {
    double x = -0.5 + 2.0 * i / (grid - 1);
    double d = 0.0;
    for (std::size_t k = 0; k < set.n(); ++k) {
      double u = (x - set.data[k]) / 0.05;
      d += std::exp(-0.5 * u * u);
    }
    dens[i] = d;
  }
  double peak = *std::max_element(dens.begin(), dens.end());
  std::vector<double> modes;
  for (int i = 1; i + 1 < grid; ++i)
    if (dens[i] > dens[i - 1] && dens[i] >= dens[i + 1] && dens[i] > 0.2 * peak)
      modes.push_back(-0.5 + 2.0 * i / (grid - 1));
  return modes;
}

const Fig6Run& find_run(const Fig6Result& result, const std::string& method, double z) {
  for (const auto& run : result.runs)
    if (run.method == method && run.z == z) return run;
  throw std::runtime_error("missing run " + method + " z=" + num(z));
}

}  // namespace

int main() {
  run_criterion(1, "analytic flows have zero deviation on their own oracle",
                [](std::ostringstream& d) {
    auto t0 = std::chrono::steady_clock::now();
    auto sched = default_sched();
    GmmComponent a2{0.7, {-0.3, 0.5}, 0.03}, b2{0.3, {0.6, -0.1}, 0.08};
    std::vector<GaussianMixtureModel> gmms{
        GaussianMixtureModel({{0.5, {0.0}, 0.01}, {0.5, {0.0}, 0.04}}),
        GaussianMixtureModel({a2, b2})};
    std::uint64_t seed = 7;
    for (const auto& gmm : gmms) {
      MixtureImcfFlow flow(gmm, sched);
      auto oracle = ImcfOracle::analytic(gmm, sched);
      auto report = total_schedule_deviation(flow, oracle, {}, SDConfig{}, seed++);
      expect(d, report.per_s.size() == 16, "16-point grid");
      double worst = 0.0;
      for (const auto& p : report.per_s) worst = std::max(worst, p.sd);
      expect(d, worst <= 1e-8, "per-s integrand " + num(worst) + " > 1e-8");
      expect(d, report.total_sd <= 3.0 * report.total_stderr,
             "total " + num(report.total_sd) + " above 3 stderr");
    }
    double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    expect(d, wall < 5.0, "runtime " + num(wall) + " s over the 5 s budget");
  });

  run_criterion(2, "equal-variance spline guiding is the interpolated-mean ideal flow",
                [](std::ostringstream& d) {
    auto sched = default_sched();
    SplineGuidedFlow guided(SplineWeights::solve({0.0, 1.0}),
                            {single_flow(-1.0, 0.01, sched), single_flow(1.0, 0.01, sched)});
    std::vector<double> z{0.5};
    auto oracle = ImcfOracle::analytic(gauss({0.0}, 0.01), sched);
    auto report = total_schedule_deviation(guided, oracle, z, SDConfig{}, 3);
    expect(d, report.total_sd <= 3.0 * report.total_stderr + 1e-10,
           "total " + num(report.total_sd) + " above 3 stderr");

    auto rng = substream(31, 0);
    double worst = 0.0;
    for (int i = 0; i < 1000; ++i) {
      double x = draw_uniform(rng, -3.0, 3.0);
      double s = draw_uniform(rng, 0.05, 0.95);
      double zv = draw_uniform(rng, 0.0, 1.0);
      MixtureImcfFlow expected(gauss({(1.0 - zv) * -1.0 + zv * 1.0}, 0.01), sched);
      double want = eval1d(expected, x, zv, s);
      double got = eval1d(guided, x, zv, s);
      worst = std::max(worst, std::abs(got - want) / std::max(1.0, std::abs(want)));
    }
    expect(d, worst <= 1e-10, "pointwise gap " + num(worst) + " > 1e-10");
  });

  run_criterion(3, "variance-mismatch guiding deviates and matches the closed-form score",
                [](std::ostringstream& d) {
    // Mid-schedule deviation against the flow's own sampled terminals; on the
    // gentle schedule sigma(0.5) = 0.1 sits mid-range.
    auto sched = gentle_sched();
    auto guided = variance_mismatch_flow(sched);
    std::vector<double> z{0.5};
    SamplerConfig sc;
    sc.steps = 64;
    sc.rng_seed = 101;
    auto oracle = sampler_oracle(guided, z, sc, 2000);
    auto [sd, se] = schedule_deviation_at(guided, oracle, z, 0.5, SDConfig{}, 21);
    expect(d, sd > 5.0 * se, "mid-schedule sd " + num(sd) + " below 5 x " + num(se));

    // Harmonic score combination, expressed through the rescaled-schedule
    // factor beta = (vbar + sig2) / ((1 + c (k2 - 1)) vbar + sig2).
    double vbar = 0.04, k2 = 4.0, c = 0.5;
    auto wide = default_sched();
    SplineGuidedFlow mix(SplineWeights::solve({0.0, 1.0}),
                         {single_flow(0.0, vbar, wide), single_flow(0.0, k2 * vbar, wide)});
    auto rng = substream(47, 0);
    double worst = 0.0;
    for (int i = 0; i < 100; ++i) {
      double x = draw_uniform(rng, 0.5, 3.0) * (i % 2 == 0 ? 1.0 : -1.0);
      double s = draw_uniform(rng, 0.05, 0.95);
      double sig2 = wide.sigma(s) * wide.sigma(s);
      double beta = (vbar + sig2) / ((1.0 + c * (k2 - 1.0)) * vbar + sig2);
      double denom = vbar + vbar * (1.0 - c) * (k2 - 1.0) * beta + sig2;
      double score = -eps1d(mix, x, 0.5, s) / wide.sigma(s);
      double want = -x / denom;
      worst = std::max(worst, std::abs(score - want) / std::abs(want));
    }
    expect(d, worst <= 1e-8, "score gap " + num(worst) + " > 1e-8");
  });

  run_criterion(4, "samplers agree on an exact flow and the ode error shrinks linearly",
                [](std::ostringstream& d) {
    auto t0 = std::chrono::steady_clock::now();
    MixtureImcfFlow flow(GaussianMixtureModel({{0.5, {-1.0}, 0.01}, {0.5, {1.0}, 0.01}}),
                         default_sched());
    double bound = 0.05 * std::sqrt(flow.gmm().variance1d());
    SamplerConfig c;
    c.steps = 64;
    c.algorithm = SamplerAlgorithm::DDPM;
    c.rng_seed = 11;
    auto ddpm = reverse_sample(flow, {}, c, 2048);
    c.algorithm = SamplerAlgorithm::DDIM;
    c.rng_seed = 12;
    auto ddim = reverse_sample(flow, {}, c, 2048);
    c.algorithm = SamplerAlgorithm::GE;
    c.rng_seed = 13;
    auto ge = reverse_sample(flow, {}, c, 2048);
    // Calibrated: 0.033 and 0.039 against a bound of 0.050.
    double wd = wasserstein1_1d(ddpm, ddim), wg = wasserstein1_1d(ddpm, ge);
    expect(d, wd <= bound, "w1(ddpm, ddim) " + num(wd) + " > " + num(bound));
    expect(d, wg <= bound, "w1(ddpm, ge) " + num(wg) + " > " + num(bound));

    MixtureImcfFlow narrow(gauss({0.0}, 0.01), default_sched());
    SamplerConfig fine;
    fine.algorithm = SamplerAlgorithm::DDIM;
    fine.rng_seed = 3;
    fine.margin = 1.0 / 128;  // every step count integrates the same span
    fine.steps = 1024;
    auto ref = reverse_sample(narrow, {}, fine, 512);
    std::vector<double> gaps;
    for (int steps : {64, 128, 256}) {
      fine.steps = steps;
      gaps.push_back(wasserstein1_1d(reverse_sample(narrow, {}, fine, 512), ref));
    }
    expect(d, gaps[0] > gaps[1] && gaps[1] > gaps[2], "error not monotone in the step count");
    double slope = std::log(gaps[0] / gaps[2]) / std::log(4.0);
    expect(d, slope >= 0.8, "halving slope " + num(slope) + " < 0.8");
    double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    expect(d, wall < 30.0, "runtime " + num(wall) + " s over the 30 s budget");
  });

  run_criterion(5, "average transported tv is bounded by total deviation",
                [](std::ostringstream& d) {
    auto sched = gentle_sched();
    auto guided = variance_mismatch_flow(sched);
    std::vector<double> z{0.5};
    double tau2 = self_consistent_tau2(sched, 0.01, 1.0 / 128);
    TvBoundConfig cfg;
    cfg.half_width = 6.0;
    auto res = tv_bound_check_1d(guided, gauss({0.0}, tau2), z, cfg, 5);
    // Calibrated: lhs 5.1e-3 against rhs 5.3e-2.
    expect(d, res.lhs > 0.0, "average tv is not positive");
    expect(d, res.lhs <= res.rhs + res.slack,
           "tv " + num(res.lhs) + " above deviation " + num(res.rhs) + " + slack " +
               num(res.slack));
    expect(d, res.holds, "bound flag not set");
  });

  run_criterion(6, "spline weights match the dense constraint-system oracle",
                [](std::ostringstream& d) {
    auto linear = SplineWeights::solve({0.0, 1.0});
    double worst = 0.0;
    for (int i = 0; i <= 20; ++i) {
      double zv = i / 20.0;
      worst = std::max(worst, std::abs(linear.weight(0, zv) - (1.0 - zv)));
      worst = std::max(worst, std::abs(linear.weight(1, zv) - zv));
    }
    expect(d, worst <= 1e-14, "two-knot basis off linear by " + num(worst));

    // Six random knot sets, 3 to 8 knots each, against the dense solve.
    auto rng = substream(99, 0);
    double worst_coeff = 0.0;
    for (int rep = 0; rep < 6; ++rep) {
      std::vector<double> knots;
      double zv = draw_uniform(rng, -1.0, 0.0);
      std::size_t n = 3 + static_cast<std::size_t>(rep);
      for (std::size_t i = 0; i < n; ++i) {
        knots.push_back(zv);
        zv += draw_uniform(rng, 0.1, 1.0);
      }
      auto sw = SplineWeights::solve(knots);
      for (std::size_t basis = 0; basis < n; ++basis) {
        std::vector<double> y(n, 0.0);
        y[basis] = 1.0;
        auto want = oracle_pieces(knots, y);
        for (std::size_t j = 0; j + 1 < n; ++j) {
          const auto& p = sw.piece(basis, j);
          for (auto [got, ref] : {std::pair{p.a, want[j].a}, {p.b, want[j].b},
                                  {p.c, want[j].c}, {p.d, want[j].d}})
            worst_coeff =
                std::max(worst_coeff, std::abs(got - ref) / std::max(1.0, std::abs(ref)));
        }
      }
    }
    expect(d, worst_coeff <= 1e-10, "coefficient gap " + num(worst_coeff) + " > 1e-10");

    auto sw = SplineWeights::solve({0.0, 0.3, 0.7, 1.0});
    double unity = 0.0;
    for (int i = 0; i <= 100; ++i) {
      double zv = i / 100.0;
      double sum = 0.0;
      for (std::size_t b = 0; b < 4; ++b) sum += sw.weight(b, zv);
      unity = std::max(unity, std::abs(sum - 1.0));
    }
    expect(d, unity <= 1e-10, "partition of unity off by " + num(unity));

    std::vector<double> knots{-0.4, 0.1, 0.45, 0.8, 1.3};
    auto joined = SplineWeights::solve(knots);
    double joint = 0.0;
    for (std::size_t basis = 0; basis < knots.size(); ++basis) {
      for (std::size_t j = 0; j + 2 < knots.size(); ++j) {
        const auto& left = joined.piece(basis, j);
        const auto& right = joined.piece(basis, j + 1);
        double h = knots[j + 1] - knots[j];
        joint = std::max(
            joint, std::abs(left.a + h * (left.b + h * (left.c + h * left.d)) - right.a));
        joint = std::max(
            joint, std::abs(left.b + h * (2.0 * left.c + h * 3.0 * left.d) - right.b));
        joint = std::max(joint, std::abs(2.0 * left.c + 6.0 * left.d * h - 2.0 * right.c));
      }
      double h_last = knots[knots.size() - 1] - knots[knots.size() - 2];
      const auto& last = joined.piece(basis, knots.size() - 2);
      joint = std::max(joint, std::abs(joined.derivative(basis, knots.front(), 2)));
      joint = std::max(joint, std::abs(2.0 * last.c + 6.0 * last.d * h_last));
    }
    expect(d, joint <= 1e-10, "join or natural-end defect " + num(joint) + " > 1e-10");
  });

  run_criterion(7, "closed-form guide deviates between the anchors, not on them",
                [](std::ostringstream& d) {
    auto t0 = std::chrono::steady_clock::now();
    Fig6Config cfg;
    cfg.z_grid = {0.0, 0.5, 1.0};
    cfg.samples_per_z = 4096;
    cfg.seed = 0;
    auto result = run_fig6(cfg);
    const auto& at0 = find_run(result, "spline", 0.0);
    const auto& at1 = find_run(result, "spline", 1.0);
    const auto& mid = find_run(result, "spline", 0.5);
    // The knots ride the anchor flows exactly (totals identically zero), so
    // the 5x margin reduces to the mid point carrying a real signal; pinned
    // run: 0.069 with stderr 0.0018.
    expect(d, mid.sd.total_sd >= 5.0 * at0.sd.total_sd, "mid below 5 x z=0 total");
    expect(d, mid.sd.total_sd >= 5.0 * at1.sd.total_sd, "mid below 5 x z=1 total");
    expect(d, mid.sd.total_sd > 10.0 * mid.sd.total_stderr,
           "mid total " + num(mid.sd.total_sd) + " within noise " +
               num(mid.sd.total_stderr));

    auto m0 = sample_moments(at0.samples);
    expect(d, std::abs(m0.mean + 1.0) <= 3.0 * m0.mean_stderr,
           "z=0 mean " + num(m0.mean) + " off -1");
    expect(d, std::abs(m0.var - 0.01) <= 3.0 * m0.var_stderr,
           "z=0 var " + num(m0.var) + " off 0.01");
    auto m1 = sample_moments(at1.samples);
    expect(d, std::abs(m1.mean - 0.5) <= 3.0 * m1.mean_stderr,
           "z=1 mean " + num(m1.mean) + " off 0.5");
    expect(d, std::abs(m1.var - 0.26) <= 3.0 * m1.var_stderr,
           "z=1 var " + num(m1.var) + " off 0.26");
    double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    expect(d, wall < 60.0, "runtime " + num(wall) + " s over the 60 s budget");
  });

  run_criterion(8, "trained flow is bimodal on support and deviates off it",
                [](std::ostringstream& d) {
    auto t0 = std::chrono::steady_clock::now();
    auto sched = default_sched();
    TrainConfig cfg;
    cfg.seed = 500;
    auto data = toy_data(cfg.dataset_size, 500);
    TinyFlowNet net;
    auto irng = substream(500, 2);
    net.init(irng);
    auto trained = train(std::move(net), data, sched, cfg);
    TinyFlowField field(trained.net, sched);

    SamplerConfig sc;
    sc.steps = 64;
    sc.rng_seed = 601;
    double z_two = 1.0;
    auto terminals = reverse_sample(field, {&z_two, 1}, sc, 4096);
    auto modes = kde_modes(terminals);
    expect(d, modes.size() == 2, "expected 2 modes, found " + num(double(modes.size())));
    if (modes.size() == 2) {
      expect(d, std::abs(modes[0] - 0.0) <= 0.1, "low mode at " + num(modes[0]));
      expect(d, std::abs(modes[1] - 1.0) <= 0.1, "high mode at " + num(modes[1]));
    }

    // Stochastic-sampler terminals for the oracle: the deterministic variants
    // carry the prior's mean mismatch to s = 0 and inflate the on-support
    // floor. Pinned run: 0.119 between the conditions, 0.036 / 0.054 on them.
    auto report_at = [&](double zv) {
      SamplerConfig oc;
      oc.algorithm = SamplerAlgorithm::DDPM;
      oc.steps = 64;
      oc.rng_seed = 502;
      auto oracle = sampler_oracle(field, {&zv, 1}, oc, 8000);
      return total_schedule_deviation(field, oracle, {&zv, 1}, SDConfig{}, 503);
    };
    auto off = report_at(0.5);
    auto on0 = report_at(0.0);
    auto on1 = report_at(1.0);
    expect(d, off.total_sd >= 2.0 * on0.total_sd,
           "mid total " + num(off.total_sd) + " below 2 x z=0 " + num(on0.total_sd));
    expect(d, off.total_sd >= 2.0 * on1.total_sd,
           "mid total " + num(off.total_sd) + " below 2 x z=1 " + num(on1.total_sd));

    // Width-8 miniature, every parameter against central differences.
    TinyFlowNet mini(8, 4);
    auto prng = substream(7, 0);
    for (double& p : mini.params()) p = 0.3 * draw_normal(prng);
    auto mini_data = toy_data(8, 7);
    auto grid = time_grid(16);
    std::vector<double> grad;
    {
      auto rng = substream(1000, 0);
      mini.loss_and_grad(mini_data, sched, grid, rng, grad);
    }
    auto eval = [&](const TinyFlowNet& n) {
      std::vector<double> g;
      auto rng = substream(1000, 0);
      return n.loss_and_grad(mini_data, sched, grid, rng, g);
    };
    const double h = 1e-6;
    double worst = 0.0;
    TinyFlowNet probe = mini;
    for (std::size_t p = 0; p < grad.size(); ++p) {
      double keep = probe.params()[p];
      probe.params()[p] = keep + h;
      double up = eval(probe);
      probe.params()[p] = keep - h;
      double down = eval(probe);
      probe.params()[p] = keep;
      double fd = (up - down) / (2 * h);
      double scale = std::max({std::abs(grad[p]), std::abs(fd), 2e-4});
      worst = std::max(worst, std::abs(grad[p] - fd) / scale);
    }
    expect(d, worst <= 1e-5, "gradient gap " + num(worst) + " > 1e-5 relative");
    double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    expect(d, wall < 600.0, "runtime " + num(wall) + " s over the 10 min budget");
  });

  run_criterion(9, "deviation ranks predict sampler disagreement across conditions",
                [](std::ostringstream& d) {
    CorrelationConfig cfg;
    cfg.seed = 0;
    auto result = run_correlation_sweep(cfg);
    // Pinned sweep: 0.758 for the ddpm/ddim pair, 0.948 for ddpm/ge.
    expect(d, result.spearman_ddim.has_value(), "ddim correlation undefined");
    if (result.spearman_ddim)
      expect(d, *result.spearman_ddim > 0.5,
             "spearman(sd, w1 ddpm-ddim) " + num(*result.spearman_ddim) + " <= 0.5");
    expect(d, result.spearman_ge.has_value(), "ge correlation undefined");
    if (result.spearman_ge)
      expect(d, *result.spearman_ge > 0.0,
             "spearman(sd, w1 ddpm-ge) " + num(*result.spearman_ge) + " not positive");
  });

  run_criterion(10, "exact matching distance agrees with brute force and the sorting rule",
                [](std::ostringstream& d) {
    auto rng = substream(4, 0);
    double worst = 0.0;
    for (int rep = 0; rep < 5; ++rep) {
      SampleSet a(2), b(2);
      for (int i = 0; i < 12; ++i) a.data.push_back(draw_normal(rng));
      for (int i = 0; i < 12; ++i) b.data.push_back(draw_normal(rng));
      worst = std::max(worst, std::abs(emd_exact(a, b) - brute_force_emd(a, b)));
    }
    expect(d, worst <= 1e-12, "six-point gap to brute force " + num(worst) + " > 1e-12");

    auto rng1 = substream(3, 0);
    double worst1 = 0.0;
    for (int rep = 0; rep < 3; ++rep) {
      SampleSet a(1), b(1);
      for (int i = 0; i < 128; ++i) a.data.push_back(2.0 * draw_normal(rng1));
      for (int i = 0; i < 128; ++i) b.data.push_back(2.0 * draw_normal(rng1));
      worst1 = std::max(worst1, std::abs(emd_exact(a, b) - wasserstein1_1d(a, b)));
    }
    expect(d, worst1 <= 1e-10, "128-point gap to the sorting rule " + num(worst1) + " > 1e-10");

    double axioms = 0.0;
    bool symmetric = true, triangle = true;
    for (int rep = 0; rep < 20; ++rep) {
      SampleSet a(2), b(2), c(2);
      for (int i = 0; i < 16; ++i) {
        a.data.push_back(draw_normal(rng));
        b.data.push_back(draw_normal(rng));
        c.data.push_back(draw_normal(rng));
      }
      double ab = emd_exact(a, b);
      symmetric = symmetric && ab == emd_exact(b, a);
      triangle = triangle && emd_exact(a, c) <= ab + emd_exact(b, c) + 1e-10;
      if (rep == 0) axioms = emd_exact(a, a);
    }
    expect(d, symmetric, "matching distance is not symmetric");
    expect(d, triangle, "triangle inequality violated");
    expect(d, axioms == 0.0, "self distance " + num(axioms) + " is not zero");
  });

  std::printf("acceptance: %d/10 passed\n", 10 - failures);
  return failures == 0 ? 0 : 1;
}
