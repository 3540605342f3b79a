#pragma once

#include <cstddef>
#include <vector>

#include "schedev/flow.hpp"

namespace schedev {

// Pairwise Euclidean distances between two equal-size sample sets; entry
// (i, j) is the distance from a.row(i) to b.row(j).
struct CostMatrix {
  std::size_t size = 0;
  std::vector<double> entries;  // size * size, row-major

  double at(std::size_t i, std::size_t j) const { return entries[i * size + j]; }
};

CostMatrix euclidean_cost_matrix(const SampleSet& a, const SampleSet& b, int threads = 0);

// Mean absolute difference of the sorted values; the exact 1-Wasserstein
// distance between equal-size empirical measures in 1D.
double wasserstein1_1d(const SampleSet& a, const SampleSet& b);

// Exact earth-mover distance between equal-size uniform-weight sets: optimal
// assignment on the Euclidean cost matrix, any dimension. Sizes above
// max_size are rejected; subsample before calling.
double emd_exact(const SampleSet& a, const SampleSet& b, std::size_t max_size = 512);

}  // namespace schedev
