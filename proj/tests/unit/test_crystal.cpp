#include "support.hpp"
#include "xtalgen/crystal.hpp"
#include "xtalgen/error.hpp"

#include <doctest.h>

#include <cmath>
#include <limits>
#include <numeric>

using namespace xtalgen;
using xtalgen::testing::random_crystal;
using xtalgen::testing::random_lattice;
using xtalgen::testing::random_rotation;

namespace {

// Minimum over a wide image shell, no reduction.
double brute_distance(const Crystal& c, int i, int j, int shell) {
  const Coords cart = frac_to_cart(c);
  double best = std::numeric_limits<double>::infinity();
  for (int a = -shell; a <= shell; ++a)
    for (int b = -shell; b <= shell; ++b)
      for (int e = -shell; e <= shell; ++e) {
        if (i == j && !a && !b && !e) continue;
        const RowVec3 img = RowVec3(a, b, e) * c.lattice();
        best = std::min(best, (cart.row(i) - cart.row(j) + img).norm());
      }
  return best;
}

Eigen::MatrixXd distance_matrix(const Crystal& c) {
  const int n = c.num_atoms();
  Eigen::MatrixXd d(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) d(i, j) = min_periodic_distance(c, i, j);
  return d;
}

}  // namespace

TEST_SUITE("crystal") {
  TEST_CASE("wrap_frac") {
    CHECK(wrap_frac(1.25) == 0.25);
    CHECK(wrap_frac(-0.25) == 0.75);
    CHECK(wrap_frac(-1e-18) == 0.0);  // would round to 1.0
    CHECK_THROWS_AS(wrap_frac(std::nan("")), DataError);
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(-50, 50);
    for (int i = 0; i < 1000; ++i) {
      const double x = u(rng);
      const double w = wrap_frac(x);
      CHECK(w >= 0.0);
      CHECK(w < 1.0);
      CHECK(wrap_frac(w) == w);
      CHECK(w == doctest::Approx(x - std::floor(x)).epsilon(1e-15));
    }
  }

  TEST_CASE("construction invariants") {
    Coords x(1, 3);
    x << 1.5, -0.25, 2.0;
    const Crystal c({0}, x, Mat3::Identity() * 2);
    CHECK(c.frac_coords()(0, 0) == 0.5);
    CHECK(c.frac_coords()(0, 1) == 0.75);
    CHECK(c.frac_coords()(0, 2) == 0.0);
    CHECK_THROWS_AS(Crystal({}, Coords(0, 3), Mat3::Identity()), DataError);
    CHECK_THROWS_AS(Crystal({100}, x, Mat3::Identity()), DataError);
    CHECK_THROWS_AS(Crystal({-1}, x, Mat3::Identity()), DataError);
    CHECK_THROWS_AS(Crystal({0, 1}, x, Mat3::Identity()), DataError);
    Mat3 flipped = Mat3::Identity();
    flipped(0, 0) = -1;
    CHECK_THROWS_AS(Crystal({0}, x, flipped), DataError);
    CHECK_THROWS_AS(Crystal({0}, x, Mat3::Zero()), DataError);
  }

  TEST_CASE("lattice parameters") {
    CHECK(lattice_from_params({2, 2, 2, 90, 90, 90}).isApprox(Mat3::Identity() * 2, 1e-15));
    const Mat3 hex = lattice_from_params({1, 1, 1, 90, 90, 120});
    CHECK(hex(1, 0) == doctest::Approx(-0.5));
    CHECK(hex(1, 1) == doctest::Approx(std::sqrt(3.0) / 2));
    CHECK(std::abs(hex(1, 2)) < 1e-15);
    // Gram reconstruction of the hexagonal cell
    const Mat3 g = hex * hex.transpose();
    CHECK(g(0, 1) == doctest::Approx(-0.5));
    CHECK(std::abs(g(0, 2)) < 1e-12);
    CHECK(std::abs(g(1, 2)) < 1e-12);

    CHECK_FALSE(is_realizable({1, 1, 1, 10, 10, 150}));
    CHECK_THROWS_AS(lattice_from_params({1, 1, 1, 10, 10, 150}), DataError);
    CHECK_THROWS_AS(lattice_from_params({-1, 1, 1, 90, 90, 90}), DataError);

    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> len(0.5, 20), ang(30, 150);
    int tested = 0;
    while (tested < 200) {
      const LatticeParams p{len(rng), len(rng), len(rng), ang(rng), ang(rng), ang(rng)};
      if (!is_realizable(p)) continue;
      ++tested;
      const Mat3 l = lattice_from_params(p);
      const LatticeParams q = params_from_lattice(l);
      CHECK(std::abs(q.a - p.a) < 1e-9);
      CHECK(std::abs(q.b - p.b) < 1e-9);
      CHECK(std::abs(q.c - p.c) < 1e-9);
      CHECK(std::abs(q.alpha - p.alpha) < 1e-9);
      CHECK(std::abs(q.beta - p.beta) < 1e-9);
      CHECK(std::abs(q.gamma - p.gamma) < 1e-9);
      const double r = M_PI / 180, ca = std::cos(p.alpha * r), cb = std::cos(p.beta * r), cg = std::cos(p.gamma * r);
      const double vol = p.a * p.b * p.c * std::sqrt(1 - ca * ca - cb * cb - cg * cg + 2 * ca * cb * cg);
      CHECK(std::abs(l.determinant() - vol) < 1e-9 * std::max(1.0, vol));
      CHECK(std::abs(l(0, 1)) + std::abs(l(0, 2)) + std::abs(l(1, 2)) == 0.0);
    }
  }

  TEST_CASE("fractional to cartesian") {
    Coords x(1, 3);
    x << 0.5, 0.5, 0.5;
    CHECK(frac_to_cart(Crystal({0}, x, Mat3::Identity() * 2)).row(0).isApprox(RowVec3(1, 1, 1)));
    std::mt19937_64 rng(3);
    for (int rep = 0; rep < 20; ++rep) {
      const Crystal c = random_crystal(rng, 4);
      CHECK(frac_to_cart(Crystal({0}, Coords::Zero(1, 3), c.lattice())).norm() == 0.0);
      const Coords cart = frac_to_cart(c);
      for (int i = 0; i < 4; ++i) {
        RowVec3 expect = RowVec3::Zero();
        for (int j = 0; j < 3; ++j) expect += c.frac_coords()(i, j) * c.lattice().row(j);
        CHECK((cart.row(i) - expect).norm() < 1e-12);
      }
    }
  }

  TEST_CASE("minimum periodic distance") {
    Coords x(2, 3);
    x << 0, 0, 0, 0.9, 0, 0;
    const Crystal c({0, 1}, x, Mat3::Identity() * 10);
    CHECK(min_periodic_distance(c, 0, 1) == doctest::Approx(1.0));
    CHECK(min_periodic_distance(c, 0, 0) == doctest::Approx(10.0));
    CHECK(min_periodic_distance(Crystal({0}, Coords::Zero(1, 3), Mat3::Identity() * 3), 0, 0) == doctest::Approx(3.0));
    CHECK_THROWS_AS(min_periodic_distance(c, 0, 2), DataError);

    std::mt19937_64 rng(4);
    for (int rep = 0; rep < 100; ++rep) {
      // skewed cells exercise the reduction pass
      std::uniform_real_distribution<double> len(2, 9), ang(40, 140);
      LatticeParams p{len(rng), len(rng), len(rng), ang(rng), ang(rng), ang(rng)};
      if (!is_realizable(p)) continue;
      const Crystal s({0, 1, 2}, testing::random_frac(rng, 3), lattice_from_params(p));
      for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) CHECK(std::abs(min_periodic_distance(s, i, j) - brute_distance(s, i, j, 3)) < 1e-9);
    }
  }

  TEST_CASE("distances are invariant under every transform") {
    std::mt19937_64 rng(5);
    for (int rep = 0; rep < 100; ++rep) {
      const Crystal c = random_crystal(rng, 5);
      const Eigen::MatrixXd d = distance_matrix(c);
      CHECK((d - d.transpose()).cwiseAbs().maxCoeff() < 1e-9);

      CHECK((distance_matrix(apply_rotation(c, random_rotation(rng))) - d).cwiseAbs().maxCoeff() < 1e-9);

      std::vector<int> perm(5);
      std::iota(perm.begin(), perm.end(), 0);
      std::shuffle(perm.begin(), perm.end(), rng);
      const Eigen::MatrixXd dp = distance_matrix(apply_permutation(c, perm));
      for (int i = 0; i < 5; ++i)
        for (int j = 0; j < 5; ++j) CHECK(std::abs(dp(i, j) - d(perm[i], perm[j])) < 1e-9);

      std::uniform_real_distribution<double> u(-3, 3);
      CHECK((distance_matrix(apply_periodic_shift(c, RowVec3(u(rng), u(rng), u(rng)))) - d).cwiseAbs().maxCoeff() <
            1e-9);

      Eigen::MatrixX3i shifts(5, 3);
      std::uniform_int_distribution<int> k(-3, 3);
      for (int i = 0; i < 5; ++i)
        for (int j = 0; j < 3; ++j) shifts(i, j) = k(rng);
      CHECK((distance_matrix(apply_lattice_translation(c, shifts)) - d).cwiseAbs().maxCoeff() < 1e-9);
    }
  }

  TEST_CASE("rotation, permutation and shift") {
    std::mt19937_64 rng(6);
    const Crystal c = random_crystal(rng, 4);
    const Crystal same = apply_rotation(c, Mat3::Identity());
    CHECK(same.lattice() == c.lattice());
    CHECK(same.frac_coords() == c.frac_coords());

    const Mat3 q = random_rotation(rng);
    const Crystal r = apply_rotation(c, q);
    CHECK(r.frac_coords() == c.frac_coords());
    const Coords expect = (q * frac_to_cart(c).transpose()).transpose();
    CHECK((frac_to_cart(r) - expect).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((apply_rotation(r, q.transpose()).lattice() - c.lattice()).cwiseAbs().maxCoeff() < 1e-12);

    CHECK_THROWS_AS(apply_rotation(c, Mat3::Identity() * 2), DataError);
    Mat3 mirror = Mat3::Identity();
    mirror(2, 2) = -1;
    CHECK_THROWS_AS(apply_rotation(c, mirror), DataError);

    const std::vector<int> id{0, 1, 2, 3};
    CHECK(apply_permutation(c, id).frac_coords() == c.frac_coords());
    CHECK_THROWS_AS(apply_permutation(c, std::vector<int>{0, 0, 1, 2}), DataError);
    CHECK_THROWS_AS(apply_permutation(c, std::vector<int>{0, 1}), DataError);
    const std::vector<int> rev{3, 2, 1, 0};
    const Crystal p = apply_permutation(c, rev);
    CHECK(p.atom_types()[0] == c.atom_types()[3]);
    CHECK(p.frac_coords().row(0) == c.frac_coords().row(3));

    const Crystal s = apply_periodic_shift(c, RowVec3(1, 0, 0));
    CHECK((s.frac_coords() - c.frac_coords()).cwiseAbs().maxCoeff() < 1e-15);
  }

  TEST_CASE("reduced cell is an equivalent basis") {
    std::mt19937_64 rng(7);
    for (int rep = 0; rep < 50; ++rep) {
      const Mat3 l = random_lattice(rng);
      Mat3 skew = Mat3::Identity();
      skew(2, 0) = 3;
      skew(1, 2) = -2;
      const Mat3 bad = skew * l;
      const ReducedCell r = reduce_lattice(bad);
      CHECK(r.transform.determinant() == 1);
      CHECK((r.transform.cast<double>() * bad - r.lattice).cwiseAbs().maxCoeff() < 1e-9);
      CHECK(std::abs(r.lattice.determinant() - l.determinant()) < 1e-8);
      CHECK(r.lattice.rowwise().norm().maxCoeff() <= bad.rowwise().norm().maxCoeff() + 1e-9);
    }
  }

  TEST_CASE("crystal system classification") {
    CHECK(classify_crystal_system(Mat3::Identity() * 4) == CrystalSystem::Cubic);
    CHECK(classify_crystal_system(lattice_from_params({3, 3, 5, 90, 90, 120})) == CrystalSystem::Hexagonal);
    CHECK(classify_crystal_system(lattice_from_params({3, 3, 5, 90, 90, 90})) == CrystalSystem::Tetragonal);
    CHECK(classify_crystal_system(lattice_from_params({3, 4, 5, 90, 90, 90})) == CrystalSystem::Orthorhombic);
    CHECK(classify_crystal_system(lattice_from_params({3, 4, 5, 90, 100, 90})) == CrystalSystem::Monoclinic);
    CHECK(classify_crystal_system(lattice_from_params({4, 4, 4, 80, 80, 80})) == CrystalSystem::Trigonal);
    CHECK(classify_crystal_system(lattice_from_params({3, 4, 5, 80, 95, 105})) == CrystalSystem::Triclinic);

    std::mt19937_64 rng(8);
    std::normal_distribution<double> nd(0, 1e-4);
    for (int rep = 0; rep < 20; ++rep) {
      Mat3 l = Mat3::Identity() * 4;
      for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) l(i, j) += nd(rng);
      CHECK(classify_crystal_system(l, 1e-2, 1.0) == CrystalSystem::Cubic);
    }
    const Mat3 tet = lattice_from_params({3, 3, 5, 90, 90, 90});
    for (int rep = 0; rep < 20; ++rep) {
      const Mat3 rotated = tet * random_rotation(rng).transpose();
      CHECK(classify_crystal_system(rotated) == CrystalSystem::Tetragonal);
      Mat3 swapped = rotated;
      swapped.row(0).swap(swapped.row(2));
      swapped.row(1) *= -1;  // keep det > 0
      CHECK(classify_crystal_system(swapped) == CrystalSystem::Tetragonal);
    }
    for (auto s : {CrystalSystem::Triclinic, CrystalSystem::Monoclinic, CrystalSystem::Orthorhombic,
                   CrystalSystem::Tetragonal, CrystalSystem::Trigonal, CrystalSystem::Hexagonal, CrystalSystem::Cubic})
      CHECK(parse_crystal_system(to_string(s)) == s);
    CHECK_FALSE(parse_crystal_system("rhombic"));
  }
}
