#pragma once

#include <Eigen/Dense>

#include <json.hpp>

#include <string>
#include <vector>

namespace xtalgen {

enum class DDPMKind { Cosine, Linear };

struct DDPMParams {
  DDPMKind kind = DDPMKind::Cosine;
  double beta_start = 1e-4;  // linear only
  double beta_end = 2e-2;    // linear only
  double cosine_offset = 0.008;
  double cosine_beta_max = 0.5;  // cosine only
  // explicit betas override kind when non-empty (length T)
  std::vector<double> betas;
};

// Gaussian schedule for the lattice. Arrays are indexed by t = 0..T with the
// t = 0 entries fixed to beta = 0, alpha_bar = 1.
struct DDPMSchedule {
  int T = 0;
  std::vector<double> beta;
  std::vector<double> alpha;
  std::vector<double> alpha_bar;
  DDPMParams params;
};

DDPMSchedule make_ddpm(int T, const DDPMParams& params = {});

// Exponential noise scale for fractional coordinates: sigma_t = smin (smax/smin)^(t/T), t = 0..T.
struct SigmaSchedule {
  int T = 0;
  double sigma_min = 0.005;
  double sigma_max = 0.5;
  std::vector<double> sigma;
};

SigmaSchedule make_sigma(int T, double sigma_min = 0.005, double sigma_max = 0.5);

enum class MaskScheduleKind {
  Uniform,  // beta_t = 1/(T - t + 1): mask probability after t steps is t/T
  Cosine,   // mask probability 1 - cos(pi t / 2T)
};

// Absorbing-state discrete diffusion over k real classes plus [MASK] (index k).
// Everything is determined by the per-step absorption rates; the dense
// matrices are built on demand.
class D3PMSchedule {
 public:
  D3PMSchedule() = default;
  D3PMSchedule(int T, int k, MaskScheduleKind kind = MaskScheduleKind::Uniform, double lambda_ce = 0.01);

  int T() const { return T_; }
  int num_classes() const { return k_; }
  int num_states() const { return k_ + 1; }
  int mask_index() const { return k_; }
  double lambda_ce() const { return lambda_ce_; }
  MaskScheduleKind kind() const { return kind_; }

  double beta(int t) const { return beta_.at(t); }
  // Probability of having been absorbed after t steps (0 at t = 0).
  double mask_prob(int t) const { return mask_prob_.at(t); }

  // Entry [i, j] of the single-step matrix Q_t (rows: from, cols: to).
  double q_entry(int t, int i, int j) const;
  // Entry [i, j] of Q_bar_t = Q_1 ... Q_t (Q_bar_0 = I).
  double qbar_entry(int t, int i, int j) const;
  // Entry [i, j] of the multi-step matrix Q_{from+1} ... Q_to (identity when from == to).
  double span_entry(int from, int to, int i, int j) const;

  // row * Q_bar_t for a row vector over the k+1 states.
  Eigen::VectorXd qbar_row_times(int t, const Eigen::VectorXd& row) const;
  // Q_bar_t * col.
  Eigen::VectorXd qbar_times_col(int t, const Eigen::VectorXd& col) const;

  Eigen::MatrixXd Q(int t) const;
  Eigen::MatrixXd Q_bar(int t) const;

 private:
  int T_ = 0;
  int k_ = 0;
  MaskScheduleKind kind_ = MaskScheduleKind::Uniform;
  double lambda_ce_ = 0.01;
  std::vector<double> beta_;       // index 0 unused (0)
  std::vector<double> mask_prob_;  // cumulative
};

nlohmann::json to_json(const DDPMSchedule& s);
nlohmann::json to_json(const SigmaSchedule& s);
nlohmann::json to_json(const D3PMSchedule& s);
DDPMSchedule ddpm_from_json(const nlohmann::json& j);
SigmaSchedule sigma_from_json(const nlohmann::json& j);
D3PMSchedule d3pm_from_json(const nlohmann::json& j);

}  // namespace xtalgen
