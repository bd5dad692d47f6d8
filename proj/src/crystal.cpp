#include "xtalgen/crystal.hpp"

#include "xtalgen/error.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <sstream>

namespace xtalgen {

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

double angle_deg(const Vec3& u, const Vec3& v) {
  double c = u.dot(v) / (u.norm() * v.norm());
  c = std::clamp(c, -1.0, 1.0);
  return std::acos(c) / kDeg;
}

}  // namespace

Crystal::Crystal(std::vector<int> atom_types, Coords frac_coords, Mat3 lattice, CrystalMeta meta, std::string id)
    : atom_types_(std::move(atom_types)), lattice_(lattice), meta_(std::move(meta)), id_(std::move(id)) {
  if (atom_types_.empty()) throw DataError("crystal must contain at least one atom");
  if (frac_coords.rows() != static_cast<Eigen::Index>(atom_types_.size())) {
    std::ostringstream os;
    os << "crystal has " << atom_types_.size() << " atom types but " << frac_coords.rows() << " coordinate rows";
    throw DataError(os.str());
  }
  for (int a : atom_types_) {
    if (a < 0 || a >= kNumTypes) throw DataError("atom type label out of range: " + std::to_string(a));
  }
  if (!lattice_.allFinite()) throw DataError("lattice has non-finite entries");
  if (!(lattice_.determinant() > 0.0)) throw DataError("lattice must have positive determinant");
  frac_ = wrap_frac(frac_coords);
}

Crystal Crystal::with_meta(CrystalMeta meta) const {
  Crystal out = *this;
  out.meta_ = std::move(meta);
  return out;
}

Crystal Crystal::with_id(std::string id) const {
  Crystal out = *this;
  out.id_ = std::move(id);
  return out;
}

double wrap_frac(double x) {
  if (!std::isfinite(x)) throw DataError("cannot wrap non-finite fractional coordinate");
  double w = x - std::floor(x);
  // x slightly below an integer rounds up to exactly 1.0
  return w >= 1.0 ? 0.0 : w;
}

Coords wrap_frac(const Coords& x) {
  Coords out(x.rows(), 3);
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    for (int d = 0; d < 3; ++d) out(i, d) = wrap_frac(x(i, d));
  return out;
}

bool is_realizable(const LatticeParams& p) {
  if (!(p.a > 0 && p.b > 0 && p.c > 0)) return false;
  for (double ang : {p.alpha, p.beta, p.gamma})
    if (!(ang > 0 && ang < 180)) return false;
  const double ca = std::cos(p.alpha * kDeg), cb = std::cos(p.beta * kDeg), cg = std::cos(p.gamma * kDeg);
  return 1 - ca * ca - cb * cb - cg * cg + 2 * ca * cb * cg > 0;
}

Mat3 lattice_from_params(const LatticeParams& p) {
  if (!is_realizable(p)) throw DataError("lattice parameters are not realizable");
  const double ca = std::cos(p.alpha * kDeg), cb = std::cos(p.beta * kDeg);
  const double cg = std::cos(p.gamma * kDeg), sg = std::sin(p.gamma * kDeg);
  Mat3 m;
  m.row(0) << p.a, 0, 0;
  m.row(1) << p.b * cg, p.b * sg, 0;
  const double cx = p.c * cb;
  const double cy = p.c * (ca - cb * cg) / sg;
  const double cz = std::sqrt(std::max(0.0, p.c * p.c - cx * cx - cy * cy));
  m.row(2) << cx, cy, cz;
  return m;
}

LatticeParams params_from_lattice(const Mat3& l) {
  const Vec3 a = l.row(0).transpose(), b = l.row(1).transpose(), c = l.row(2).transpose();
  return {a.norm(), b.norm(), c.norm(), angle_deg(b, c), angle_deg(a, c), angle_deg(a, b)};
}

Coords frac_to_cart(const Crystal& c) { return c.frac_coords() * c.lattice(); }

ReducedCell reduce_lattice(const Mat3& lattice) {
  Mat3 b = lattice;
  IMat3 m = IMat3::Identity();
  const double scale = std::cbrt(std::abs(lattice.determinant()));
  const double tol = 1e-10 * std::max(scale, 1e-300);

  auto sort_rows = [&] {
    std::array<int, 3> idx{0, 1, 2};
    std::stable_sort(idx.begin(), idx.end(), [&](int i, int j) { return b.row(i).norm() < b.row(j).norm() - tol; });
    Mat3 nb;
    IMat3 nm;
    for (int r = 0; r < 3; ++r) {
      nb.row(r) = b.row(idx[r]);
      nm.row(r) = m.row(idx[r]);
    }
    b = nb;
    m = nm;
  };

  for (int iter = 0; iter < 200; ++iter) {
    bool changed = false;
    sort_rows();
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) {
        if (i == j) continue;
        const double r = std::round(b.row(i).dot(b.row(j)) / b.row(j).squaredNorm());
        if (r == 0) continue;
        const RowVec3 cand = b.row(i) - r * b.row(j);
        if (cand.norm() < b.row(i).norm() - tol) {
          b.row(i) = cand;
          m.row(i) -= static_cast<int>(r) * m.row(j);
          changed = true;
        }
      }
    }
    for (int i = 0; i < 3; ++i) {
      const int j = (i + 1) % 3, k = (i + 2) % 3;
      for (int s1 : {-1, 1}) {
        for (int s2 : {-1, 1}) {
          const RowVec3 cand = b.row(i) + s1 * b.row(j) + s2 * b.row(k);
          if (cand.norm() < b.row(i).norm() - tol) {
            b.row(i) = cand;
            m.row(i) += s1 * m.row(j) + s2 * m.row(k);
            changed = true;
          }
        }
      }
    }
    if (!changed) break;
  }
  sort_rows();
  if (b.determinant() < 0) {
    b.row(2) = -b.row(2);
    m.row(2) = -m.row(2);
  }
  return {b, m};
}

PeriodicGeometry::PeriodicGeometry(const Mat3& lattice) : lattice_(lattice), reduced_(reduce_lattice(lattice)) {
  // cart = f L = f M^-1 (M L), so f_red = f M^-1
  to_reduced_frac_ = reduced_.transform.cast<double>().inverse();
}

Vec3 PeriodicGeometry::min_image(const RowVec3& frac_diff, bool exclude_zero) const {
  RowVec3 d = frac_diff * to_reduced_frac_;
  for (int k = 0; k < 3; ++k) d(k) -= std::round(d(k));
  const Mat3& r = reduced_.lattice;
  double best = std::numeric_limits<double>::infinity();
  RowVec3 best_v = RowVec3::Zero();
  for (int i = -1; i <= 1; ++i)
    for (int j = -1; j <= 1; ++j)
      for (int k = -1; k <= 1; ++k) {
        const RowVec3 f = d + RowVec3(i, j, k);
        if (exclude_zero && f.squaredNorm() == 0.0) continue;
        const RowVec3 v = f * r;
        const double n = v.squaredNorm();
        if (n < best) {
          best = n;
          best_v = v;
        }
      }
  return best_v.transpose();
}

double PeriodicGeometry::distance(const RowVec3& frac_i, const RowVec3& frac_j, bool same_site) const {
  return min_image(frac_i - frac_j, same_site).norm();
}

double min_periodic_distance(const Crystal& c, int i, int j) {
  if (i < 0 || j < 0 || i >= c.num_atoms() || j >= c.num_atoms()) throw DataError("atom index out of range");
  PeriodicGeometry geo(c.lattice());
  if (i == j) return geo.min_image(RowVec3::Zero(), true).norm();
  return geo.distance(c.frac_coords().row(i), c.frac_coords().row(j));
}

Crystal apply_rotation(const Crystal& c, const Mat3& q) {
  if (!(q.transpose() * q - Mat3::Identity()).isZero(1e-10) || q.determinant() < 0)
    throw DataError("rotation must be a proper orthogonal matrix");
  // rows are vectors: rotating each row by q is right-multiplication by q^T
  return Crystal(c.atom_types(), c.frac_coords(), c.lattice() * q.transpose(), c.meta(), c.id());
}

Crystal apply_permutation(const Crystal& c, std::span<const int> perm) {
  const int n = c.num_atoms();
  if (static_cast<int>(perm.size()) != n) throw DataError("permutation length does not match atom count");
  std::vector<char> seen(n, 0);
  for (int p : perm) {
    if (p < 0 || p >= n || seen[p]) throw DataError("invalid permutation");
    seen[p] = 1;
  }
  std::vector<int> types(n);
  Coords x(n, 3);
  for (int i = 0; i < n; ++i) {
    types[i] = c.atom_types()[perm[i]];
    x.row(i) = c.frac_coords().row(perm[i]);
  }
  return Crystal(std::move(types), std::move(x), c.lattice(), c.meta(), c.id());
}

Crystal apply_periodic_shift(const Crystal& c, const RowVec3& tau) {
  Coords x = c.frac_coords();
  x.rowwise() += tau;
  return Crystal(c.atom_types(), x, c.lattice(), c.meta(), c.id());
}

Crystal apply_lattice_translation(const Crystal& c, const Eigen::MatrixX3i& shifts) {
  if (shifts.rows() != c.num_atoms()) throw DataError("shift rows do not match atom count");
  Coords x = c.frac_coords() + shifts.cast<double>();
  return Crystal(c.atom_types(), x, c.lattice(), c.meta(), c.id());
}

std::string to_string(CrystalSystem s) {
  switch (s) {
    case CrystalSystem::Triclinic: return "triclinic";
    case CrystalSystem::Monoclinic: return "monoclinic";
    case CrystalSystem::Orthorhombic: return "orthorhombic";
    case CrystalSystem::Tetragonal: return "tetragonal";
    case CrystalSystem::Trigonal: return "trigonal";
    case CrystalSystem::Hexagonal: return "hexagonal";
    case CrystalSystem::Cubic: return "cubic";
  }
  return "triclinic";
}

std::optional<CrystalSystem> parse_crystal_system(const std::string& s) {
  std::string lower;
  for (char ch : s) lower.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
  for (auto cs : {CrystalSystem::Triclinic, CrystalSystem::Monoclinic, CrystalSystem::Orthorhombic,
                  CrystalSystem::Tetragonal, CrystalSystem::Trigonal, CrystalSystem::Hexagonal,
                  CrystalSystem::Cubic}) {
    if (to_string(cs) == lower) return cs;
  }
  return std::nullopt;
}

namespace {

// Symmetry rank used for tie breaking (holohedry order).
int rank(CrystalSystem s) {
  switch (s) {
    case CrystalSystem::Triclinic: return 0;
    case CrystalSystem::Monoclinic: return 1;
    case CrystalSystem::Orthorhombic: return 2;
    case CrystalSystem::Trigonal: return 3;
    case CrystalSystem::Tetragonal: return 4;
    case CrystalSystem::Hexagonal: return 5;
    case CrystalSystem::Cubic: return 6;
  }
  return 0;
}

CrystalSystem classify_params(const LatticeParams& p, double len_tol, double ang_tol) {
  const std::array<double, 3> len{p.a, p.b, p.c};
  // ang[k] is the angle between the two vectors other than k
  const std::array<double, 3> ang{p.alpha, p.beta, p.gamma};
  auto eq = [&](double x, double y) { return std::abs(x - y) <= len_tol * std::max(x, y); };
  auto right = [&](double a) { return std::abs(a - 90.0) <= ang_tol; };
  auto hex = [&](double a) { return std::abs(a - 120.0) <= ang_tol || std::abs(a - 60.0) <= ang_tol; };

  const int n_right = right(ang[0]) + right(ang[1]) + right(ang[2]);
  const bool all_len_eq = eq(len[0], len[1]) && eq(len[1], len[2]) && eq(len[0], len[2]);

  if (all_len_eq && n_right == 3) return CrystalSystem::Cubic;
  for (int k = 0; k < 3; ++k) {
    const int i = (k + 1) % 3, j = (k + 2) % 3;
    if (eq(len[i], len[j]) && hex(ang[k]) && right(ang[i]) && right(ang[j])) return CrystalSystem::Hexagonal;
  }
  if (n_right == 3) {
    for (int k = 0; k < 3; ++k) {
      const int i = (k + 1) % 3, j = (k + 2) % 3;
      if (eq(len[i], len[j])) return CrystalSystem::Tetragonal;
    }
  }
  if (all_len_eq && std::abs(ang[0] - ang[1]) <= ang_tol && std::abs(ang[1] - ang[2]) <= ang_tol &&
      std::abs(ang[0] - ang[2]) <= ang_tol)
    return CrystalSystem::Trigonal;
  if (n_right == 3) return CrystalSystem::Orthorhombic;
  if (n_right >= 2) return CrystalSystem::Monoclinic;
  return CrystalSystem::Triclinic;
}

}  // namespace

CrystalSystem classify_crystal_system(const Mat3& lattice, double len_tol, double ang_tol) {
  const auto given = classify_params(params_from_lattice(lattice), len_tol, ang_tol);
  const auto reduced = classify_params(params_from_lattice(reduce_lattice(lattice).lattice), len_tol, ang_tol);
  return rank(reduced) >= rank(given) ? reduced : given;
}

}  // namespace xtalgen
