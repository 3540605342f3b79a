#include "schedev/transport.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>

#include "schedev/parallel.hpp"

namespace schedev {

namespace {

void check_pair(const SampleSet& a, const SampleSet& b) {
  if (a.n() == 0 || b.n() == 0) throw std::invalid_argument("transport distance needs non-empty sets");
  if (a.n() != b.n())
    throw std::invalid_argument("size mismatch: " + std::to_string(a.n()) + " vs " +
                                std::to_string(b.n()));
  if (a.dim != b.dim) throw std::invalid_argument("dimension mismatch between sample sets");
}

// Assignment problem via shortest augmenting paths with dual potentials
// (Hungarian method, O(n^3)). Ascending column scans keep tie-breaking at the
// lowest index, so repeated runs augment identically. Returns row -> column.
std::vector<std::size_t> solve_assignment(const CostMatrix& cost) {
  std::size_t n = cost.size;
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0), minv(n + 1);
  std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
  std::vector<char> used(n + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    minv.assign(n + 1, inf);
    used.assign(n + 1, 0);
    do {
      used[j0] = 1;
      std::size_t i0 = p[j0], j1 = 0;
      double delta = inf;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        double cur = cost.at(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<std::size_t> match(n, 0);
  for (std::size_t j = 1; j <= n; ++j)
    if (p[j] != 0) match[p[j] - 1] = j - 1;
  return match;
}

}  // namespace

CostMatrix euclidean_cost_matrix(const SampleSet& a, const SampleSet& b, int threads) {
  check_pair(a, b);
  CostMatrix cost;
  cost.size = a.n();
  cost.entries.resize(cost.size * cost.size);
  parallel_for(cost.size, threads, [&](std::size_t i) {
    auto xi = a.row(i);
    for (std::size_t j = 0; j < cost.size; ++j) {
      auto yj = b.row(j);
      double sq = 0.0;
      for (int k = 0; k < a.dim; ++k) {
        double d = xi[k] - yj[k];
        sq += d * d;
      }
      cost.entries[i * cost.size + j] = std::sqrt(sq);
    }
  });
  return cost;
}

double wasserstein1_1d(const SampleSet& a, const SampleSet& b) {
  check_pair(a, b);
  if (a.dim != 1) throw std::invalid_argument("wasserstein1_1d requires 1D sample sets");
  std::vector<double> xs(a.data), ys(b.data);
  std::sort(xs.begin(), xs.end());
  std::sort(ys.begin(), ys.end());
  double total = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) total += std::abs(xs[i] - ys[i]);
  return total / static_cast<double>(xs.size());
}

double emd_exact(const SampleSet& a, const SampleSet& b, std::size_t max_size) {
  check_pair(a, b);
  if (a.n() > max_size)
    throw std::invalid_argument("emd_exact set size " + std::to_string(a.n()) + " exceeds cap " +
                                std::to_string(max_size) + "; subsample the inputs first");
  CostMatrix cost = euclidean_cost_matrix(a, b);
  auto match = solve_assignment(cost);
  std::vector<double> matched(cost.size);
  for (std::size_t i = 0; i < cost.size; ++i) matched[i] = cost.at(i, match[i]);
  // Summing in sorted order makes the total independent of which argument
  // came first and of input ordering.
  std::sort(matched.begin(), matched.end());
  double total = std::accumulate(matched.begin(), matched.end(), 0.0);
  return total / static_cast<double>(cost.size);
}

}  // namespace schedev
