#include "oracles/d3pm_enumeration.hpp"
#include "xtalgen/error.hpp"
#include "xtalgen/schedules.hpp"

#include <doctest.h>

#include <cmath>
#include <random>

using namespace xtalgen;

TEST_SUITE("schedules") {
  TEST_CASE("ddpm from explicit betas") {
    DDPMParams p;
    p.betas = {0.1, 0.2};
    const DDPMSchedule s = make_ddpm(2, p);
    CHECK(s.alpha_bar[0] == 1.0);
    CHECK(s.alpha_bar[1] == doctest::Approx(0.9).epsilon(1e-15));
    CHECK(s.alpha_bar[2] == doctest::Approx(0.72).epsilon(1e-15));
    p.betas = {0.1};
    CHECK_THROWS_AS(make_ddpm(2, p), ConfigError);
    p.betas = {0.1, 1.0};
    CHECK_THROWS_AS(make_ddpm(2, p), ConfigError);
    CHECK_THROWS_AS(make_ddpm(1), ConfigError);
  }

  TEST_CASE("ddpm cosine and linear") {
    const DDPMSchedule c = make_ddpm(1000);
    CHECK(c.alpha_bar[1000] < 1e-4);
    DDPMParams lin;
    lin.kind = DDPMKind::Linear;
    const DDPMSchedule l = make_ddpm(1000, lin);
    CHECK(l.beta[1] == doctest::Approx(1e-4));
    CHECK(l.beta[1000] == doctest::Approx(2e-2));
    CHECK(make_ddpm(500).alpha_bar[500] < 0.01);
    CHECK(make_ddpm(100).alpha_bar[100] < 0.01);

    std::mt19937_64 rng(1);
    std::uniform_int_distribution<int> T(2, 800);
    for (int rep = 0; rep < 30; ++rep) {
      DDPMParams p;
      p.kind = rep % 2 ? DDPMKind::Linear : DDPMKind::Cosine;
      const DDPMSchedule s = make_ddpm(T(rng), p);
      double prod = 1;
      for (int t = 1; t <= s.T; ++t) {
        CHECK(s.beta[t] > 0);
        CHECK(s.beta[t] < 1);
        CHECK(s.alpha[t] == 1 - s.beta[t]);
        prod *= s.alpha[t];
        CHECK(s.alpha_bar[t] == prod);
        CHECK(s.alpha_bar[t] < s.alpha_bar[t - 1]);
      }
    }
    const DDPMSchedule back = ddpm_from_json(to_json(c));
    CHECK(back.alpha_bar == c.alpha_bar);
  }

  TEST_CASE("sigma schedule") {
    const SigmaSchedule one = make_sigma(1, 0.1, 10);
    CHECK(one.sigma[1] == doctest::Approx(10));
    const SigmaSchedule s = make_sigma(500);
    CHECK(s.sigma[500] == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(s.sigma[0] == doctest::Approx(0.005).epsilon(1e-15));
    CHECK(std::abs(s.sigma[250] - std::sqrt(0.005 * 0.5)) < 1e-9);
    const double ratio = s.sigma[1] / s.sigma[0];
    for (int t = 1; t <= 500; ++t) {
      CHECK(s.sigma[t] > s.sigma[t - 1]);
      CHECK(s.sigma[t] / s.sigma[t - 1] == doctest::Approx(ratio).epsilon(1e-12));
    }
    CHECK_THROWS_AS(make_sigma(10, 0.5, 0.1), ConfigError);
    CHECK_THROWS_AS(make_sigma(0), ConfigError);
    CHECK(sigma_from_json(to_json(s)).sigma == s.sigma);
  }

  TEST_CASE("d3pm matrices") {
    const D3PMSchedule d(4, 3);
    const oracle::AbsorbingChain chain{4, 3};
    CHECK(d.num_states() == 4);
    CHECK(d.mask_index() == 3);
    for (int t = 1; t <= 4; ++t) {
      const Eigen::MatrixXd q = d.Q(t);
      CHECK((q - chain.step(t)).cwiseAbs().maxCoeff() < 1e-15);
      CHECK((q.rowwise().sum().array() - 1).abs().maxCoeff() < 1e-12);
      CHECK(q(3, 3) == 1.0);
      for (int i = 0; i < 3; ++i) {
        CHECK(q(i, i) == doctest::Approx(1 - d.beta(t)));
        CHECK(q(i, 3) == doctest::Approx(d.beta(t)));
      }
      const Eigen::MatrixXd qb = d.Q_bar(t);
      CHECK((qb - d.Q_bar(t - 1) * q).cwiseAbs().maxCoeff() < 1e-12);
      CHECK((qb.rowwise().sum().array() - 1).abs().maxCoeff() < 1e-12);
      for (int i = 0; i < 3; ++i) CHECK(std::abs(qb(i, i) - (1.0 - t / 4.0)) < 1e-12);
      for (int a0 = 0; a0 < 3; ++a0)
        CHECK((qb.row(a0).transpose() - chain.marginal(a0, t)).cwiseAbs().maxCoeff() < 1e-12);
    }
    CHECK(d.Q_bar(0).isIdentity());
    // span entries compose
    for (int from = 0; from <= 4; ++from)
      for (int to = from; to <= 4; ++to) {
        Eigen::MatrixXd prod = Eigen::MatrixXd::Identity(4, 4);
        for (int t = from + 1; t <= to; ++t) prod = prod * d.Q(t);
        for (int i = 0; i < 4; ++i)
          for (int j = 0; j < 4; ++j) CHECK(std::abs(d.span_entry(from, to, i, j) - prod(i, j)) < 1e-12);
      }
  }

  TEST_CASE("d3pm absorption at the default horizon") {
    for (auto kind : {MaskScheduleKind::Uniform, MaskScheduleKind::Cosine}) {
      const D3PMSchedule d(500, 100, kind);
      for (int i = 0; i < 100; i += 7) CHECK(d.qbar_entry(500, i, 100) >= 0.999);
      for (int t = 1; t <= 500; ++t) CHECK(d.mask_prob(t) >= d.mask_prob(t - 1));
      Eigen::VectorXd row = Eigen::VectorXd::Zero(101);
      row(42) = 1;
      const Eigen::VectorXd out = d.qbar_row_times(250, row);
      CHECK(out(42) == doctest::Approx(d.qbar_entry(250, 42, 42)));
      CHECK(out.sum() == doctest::Approx(1.0));
    }
    const D3PMSchedule d(500, 100);
    CHECK(std::abs(d.mask_prob(123) - 123.0 / 500) < 1e-12);
    const D3PMSchedule back = d3pm_from_json(to_json(d));
    CHECK(back.T() == 500);
    CHECK(back.mask_prob(77) == d.mask_prob(77));
    CHECK(back.lambda_ce() == d.lambda_ce());
    CHECK_THROWS_AS(D3PMSchedule(10, 1), ConfigError);
    CHECK_THROWS_AS(D3PMSchedule(10, 3, MaskScheduleKind::Uniform, -1), ConfigError);
  }
}
