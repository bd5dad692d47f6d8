#pragma once

#include <Eigen/Dense>

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace xtalgen {

using Mat3 = Eigen::Matrix3d;
using Vec3 = Eigen::Vector3d;
using RowVec3 = Eigen::RowVector3d;
using IMat3 = Eigen::Matrix3i;
// One row per atom.
using Coords = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>;

// Number of real atom classes; label i is atomic number i + 1.
inline constexpr int kNumTypes = 100;

struct CrystalMeta {
  std::optional<std::string> formula;
  std::optional<int> spacegroup;
  std::optional<std::string> crystal_system;
  std::optional<double> formation_energy;
  std::optional<double> band_gap;
  std::optional<double> e_above_hull;
  // Element order used when rendering prompts; derived from the formula when empty.
  std::vector<std::string> elements;

  bool operator==(const CrystalMeta&) const = default;
};

struct LatticeParams {
  double a = 0, b = 0, c = 0;
  double alpha = 90, beta = 90, gamma = 90;  // degrees
};

// A periodic crystal: atom labels, wrapped fractional coordinates and a
// row-vector lattice (cartesian = frac * lattice). Immutable once built.
class Crystal {
 public:
  Crystal(std::vector<int> atom_types, Coords frac_coords, Mat3 lattice, CrystalMeta meta = {},
          std::string id = {});

  const std::vector<int>& atom_types() const { return atom_types_; }
  const Coords& frac_coords() const { return frac_; }
  const Mat3& lattice() const { return lattice_; }
  const CrystalMeta& meta() const { return meta_; }
  const std::string& id() const { return id_; }
  int num_atoms() const { return static_cast<int>(atom_types_.size()); }
  double volume() const { return lattice_.determinant(); }

  Crystal with_meta(CrystalMeta meta) const;
  Crystal with_id(std::string id) const;

 private:
  std::vector<int> atom_types_;
  Coords frac_;
  Mat3 lattice_;
  CrystalMeta meta_;
  std::string id_;
};

double wrap_frac(double x);
Coords wrap_frac(const Coords& x);

Mat3 lattice_from_params(const LatticeParams& p);
LatticeParams params_from_lattice(const Mat3& lattice);
bool is_realizable(const LatticeParams& p);

Coords frac_to_cart(const Crystal& c);

// Reduced basis of the same lattice: reduced = transform * lattice with a
// unimodular integer transform and positive determinant.
struct ReducedCell {
  Mat3 lattice;
  IMat3 transform;
};
ReducedCell reduce_lattice(const Mat3& lattice);

// Nearest-image queries on a reduced copy of the lattice.
class PeriodicGeometry {
 public:
  explicit PeriodicGeometry(const Mat3& lattice);

  // Shortest cartesian vector equivalent to the fractional difference.
  // With exclude_zero the trivial image of a zero difference is skipped.
  Vec3 min_image(const RowVec3& frac_diff, bool exclude_zero = false) const;
  double distance(const RowVec3& frac_i, const RowVec3& frac_j, bool same_site = false) const;

  const Mat3& lattice() const { return lattice_; }
  const Mat3& reduced() const { return reduced_.lattice; }

 private:
  Mat3 lattice_;
  ReducedCell reduced_;
  Mat3 to_reduced_frac_;  // frac (original basis) -> frac (reduced basis)
};

double min_periodic_distance(const Crystal& c, int i, int j);

Crystal apply_rotation(const Crystal& c, const Mat3& q);
Crystal apply_permutation(const Crystal& c, std::span<const int> perm);
Crystal apply_periodic_shift(const Crystal& c, const RowVec3& tau);
// Adds an integer lattice translation to each atom (one row per atom).
Crystal apply_lattice_translation(const Crystal& c, const Eigen::MatrixX3i& shifts);

enum class CrystalSystem { Triclinic, Monoclinic, Orthorhombic, Tetragonal, Trigonal, Hexagonal, Cubic };

std::string to_string(CrystalSystem s);
std::optional<CrystalSystem> parse_crystal_system(const std::string& s);

CrystalSystem classify_crystal_system(const Mat3& lattice, double len_tol = 0.01, double ang_tol = 1.0);

}  // namespace xtalgen
