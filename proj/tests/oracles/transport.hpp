#pragma once

// Exhaustive optimal transport between two equal-size, equal-weight samples.
// The transport polytope's vertices are permutation matrices, so the optimum
// is the cheapest permutation.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

namespace xtalgen::oracle {

inline double transport_1d(const std::vector<double>& a, const std::vector<double>& b) {
  std::vector<int> perm(b.size());
  std::iota(perm.begin(), perm.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  do {
    double cost = 0;
    for (std::size_t i = 0; i < a.size(); ++i) cost += std::abs(a[i] - b[static_cast<std::size_t>(perm[i])]);
    best = std::min(best, cost / static_cast<double>(a.size()));
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

}  // namespace xtalgen::oracle
