#pragma once

// Reference matcher for small cells: every species-preserving permutation,
// every {-1,0,1} change of basis with determinant one, and a grid of starting
// translations, each polished by the exact least-squares translation update.
// No anchors, no assignment solver.

#include "xtalgen/crystal.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <vector>

namespace xtalgen::oracle {

struct BruteMatcherConfig {
  double ltol = 0.3;
  double stol = 0.5;
  double angle_tol = 10.0;
  int grid = 6;
};

namespace detail {

inline RowVec3 nearest(const RowVec3& d, const Mat3& g) {
  RowVec3 best;
  double best_d2 = std::numeric_limits<double>::infinity();
  RowVec3 base;
  for (int k = 0; k < 3; ++k) base(k) = d(k) - std::round(d(k));
  for (int a = -2; a <= 2; ++a)
    for (int b = -2; b <= 2; ++b)
      for (int c = -2; c <= 2; ++c) {
        const RowVec3 v = base + RowVec3(a, b, c);
        const double d2 = v * g * v.transpose();
        if (d2 < best_d2) {
          best_d2 = d2;
          best = v;
        }
      }
  return best;
}

inline bool compatible(const Mat3& a, const Mat3& b, const BruteMatcherConfig& cfg) {
  const LatticeParams pa = params_from_lattice(a), pb = params_from_lattice(b);
  const double la[3] = {pa.a, pa.b, pa.c}, lb[3] = {pb.a, pb.b, pb.c};
  const double aa[3] = {pa.alpha, pa.beta, pa.gamma}, ab[3] = {pb.alpha, pb.beta, pb.gamma};
  for (int k = 0; k < 3; ++k)
    if (std::abs(la[k] - lb[k]) > cfg.ltol * 0.5 * (la[k] + lb[k]) || std::abs(aa[k] - ab[k]) > cfg.angle_tol)
      return false;
  return true;
}

}  // namespace detail

inline std::optional<double> brute_match(const Crystal& gen, const Crystal& ref, const BruteMatcherConfig& cfg = {}) {
  const int n = ref.num_atoms();
  if (gen.num_atoms() != n) return std::nullopt;
  auto sg = gen.atom_types(), sr = ref.atom_types();
  std::sort(sg.begin(), sg.end());
  std::sort(sr.begin(), sr.end());
  if (sg != sr) return std::nullopt;

  const ReducedCell rr = reduce_lattice(ref.lattice()), rg = reduce_lattice(gen.lattice());
  const Coords xr = wrap_frac(Coords(ref.frac_coords() * rr.transform.cast<double>().inverse()));
  const Coords xg0 = wrap_frac(Coords(gen.frac_coords() * rg.transform.cast<double>().inverse()));

  std::optional<double> best;
  Eigen::Matrix3i m;
  for (int code = 0; code < 19683; ++code) {
    int c = code;
    for (int k = 0; k < 9; ++k) {
      m(k / 3, k % 3) = c % 3 - 1;
      c /= 3;
    }
    if (m.determinant() != 1) continue;
    const Mat3 md = m.cast<double>();
    const Mat3 lg = md * rg.lattice;
    if (!detail::compatible(lg, rr.lattice, cfg)) continue;
    const Coords xg = wrap_frac(Coords(xg0 * md.inverse()));
    const Mat3 g = 0.5 * (rr.lattice * rr.lattice.transpose() + lg * lg.transpose());
    const double scale = std::cbrt(std::sqrt(g.determinant()) / n);

    std::vector<int> perm(static_cast<std::size_t>(n));
    std::iota(perm.begin(), perm.end(), 0);
    do {
      bool species_ok = true;
      for (int i = 0; i < n && species_ok; ++i)
        species_ok = gen.atom_types()[static_cast<std::size_t>(i)] == ref.atom_types()[static_cast<std::size_t>(perm[i])];
      if (!species_ok) continue;
      for (int a = 0; a < cfg.grid; ++a)
        for (int b = 0; b < cfg.grid; ++b)
          for (int e = 0; e < cfg.grid; ++e) {
            RowVec3 tau(double(a) / cfg.grid, double(b) / cfg.grid, double(e) / cfg.grid);
            for (int iter = 0; iter < 500; ++iter) {
              RowVec3 mean = RowVec3::Zero();
              for (int i = 0; i < n; ++i) mean += detail::nearest(xg.row(i) + tau - xr.row(perm[i]), g);
              mean /= n;
              tau -= mean;
              if (mean.cwiseAbs().maxCoeff() < 1e-15) break;
            }
            double sum = 0, worst = 0;
            for (int i = 0; i < n; ++i) {
              const RowVec3 d = detail::nearest(xg.row(i) + tau - xr.row(perm[i]), g);
              const double d2 = d * g * d.transpose();
              sum += d2;
              worst = std::max(worst, d2);
            }
            if (std::sqrt(worst) / scale > cfg.stol) continue;
            const double rmse = std::sqrt(sum / n) / scale;
            if (!best || rmse < *best) best = rmse;
          }
    } while (std::next_permutation(perm.begin(), perm.end()));
  }
  return best;
}

}  // namespace xtalgen::oracle
