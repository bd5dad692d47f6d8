#pragma once

#include "xtalgen/crystal.hpp"

#include <random>
#include <vector>

namespace xtalgen::testing {

// Proper rotation from the QR factorisation of a Gaussian matrix.
inline Mat3 random_rotation(std::mt19937_64& rng) {
  std::normal_distribution<double> n;
  Mat3 a;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) a(i, j) = n(rng);
  Eigen::HouseholderQR<Mat3> qr(a);
  Mat3 q = qr.householderQ();
  if (q.determinant() < 0) q.col(0) *= -1.0;
  return q;
}

inline Mat3 random_lattice(std::mt19937_64& rng, double lo = 3.0, double hi = 7.0) {
  std::uniform_real_distribution<double> len(lo, hi), ang(70.0, 110.0);
  for (;;) {
    LatticeParams p{len(rng), len(rng), len(rng), ang(rng), ang(rng), ang(rng)};
    if (is_realizable(p)) return lattice_from_params(p) * random_rotation(rng).transpose();
  }
}

inline Coords random_frac(std::mt19937_64& rng, int n) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Coords x(n, 3);
  for (int i = 0; i < n; ++i)
    for (int k = 0; k < 3; ++k) x(i, k) = u(rng);
  return x;
}

inline std::vector<int> random_types(std::mt19937_64& rng, int n, int k) {
  std::uniform_int_distribution<int> d(0, k - 1);
  std::vector<int> t(n);
  for (auto& v : t) v = d(rng);
  return t;
}

inline Crystal random_crystal(std::mt19937_64& rng, int n, int k = kNumTypes) {
  return Crystal(random_types(rng, n, k), random_frac(rng, n), random_lattice(rng));
}

}  // namespace xtalgen::testing
