#pragma once

#include "xtalgen/crystal.hpp"
#include "xtalgen/schedules.hpp"

#include <Eigen/Dense>

#include <random>
#include <span>
#include <vector>

namespace xtalgen {

// Noise for one forward corruption of one crystal.
struct NoiseDraws {
  Mat3 eps_L;
  Coords eps_X;
  std::vector<double> type_draw;  // uniform [0,1) per atom
};

NoiseDraws draw_noise(int num_atoms, std::mt19937_64& rng);

Mat3 forward_lattice(const Mat3& l0, int t, const DDPMSchedule& sched, const Mat3& eps_l);
Coords forward_coords(const Coords& x0, int t, const SigmaSchedule& sched, const Coords& eps_x);
// Samples a_t from row a0 of Q_bar_t using a uniform draw u in [0, 1).
int forward_type(int a0, int t, const D3PMSchedule& d3pm, double u);
std::vector<int> forward_types(std::span<const int> a0, int t, const D3PMSchedule& d3pm, std::span<const double> u);
std::vector<int> forward_types(std::span<const int> a0, int t, const D3PMSchedule& d3pm, std::mt19937_64& rng);

// Image count actually summed for a given sigma: k_max, widened for broad kernels.
int effective_k_max(double sigma, int k_max);

// d/dx log sum_{k=-K..K} exp(-(x - x0 + k)^2 / (2 sigma^2)), with the
// difference first reduced to [-1/2, 1/2) so the result has period 1.
double wn_score(double x_t, double x0, double sigma, int k_max = 5);
Coords wn_score(const Coords& x_t, const Coords& x0, double sigma, int k_max = 5);

enum class CoordWeighting { Unit, Sigma2 };

// Mean over the 9 entries of (eps - eps_hat)^2.
double lattice_loss(const Mat3& eps, const Mat3& eps_hat);
Mat3 lattice_loss_grad(const Mat3& eps, const Mat3& eps_hat);

// Mean over the N x 3 entries of w * (target - score_hat)^2 with w = 1 or sigma^2.
double coord_loss(const Coords& target, const Coords& score_hat, double sigma, CoordWeighting weighting);
Coords coord_loss_grad(const Coords& target, const Coords& score_hat, double sigma, CoordWeighting weighting);

// q(a_prev | a_t, a0) over the k+1 states, where a_prev is the state at time
// t_prev < t (t_prev = t - 1 for a single step).
Eigen::VectorXd d3pm_posterior(int a_t, int a0, int t, const D3PMSchedule& d3pm, int t_prev = -1);

// p_theta(a_prev | a_t) = normalised sum over a0' of q(a_prev, a_t | a0') softmax(logits)[a0'].
Eigen::VectorXd d3pm_model_posterior(const Eigen::VectorXd& logits, int a_t, int t, const D3PMSchedule& d3pm,
                                     int t_prev = -1);

struct TypeLoss {
  double vb = 0;
  double ce = 0;
  Eigen::VectorXd grad_vb;  // d vb / d logits
  Eigen::VectorXd grad_ce;  // d ce / d logits
};

// Per-atom type loss with x0-parameterised logits over the k real classes.
// t = 1 uses the decoder term -log p_theta(a0 | a1).
TypeLoss type_loss(const Eigen::VectorXd& logits, int a0, int a_t, int t, const D3PMSchedule& d3pm);

struct LossParts {
  double lattice = 0;
  double coord = 0;
  double type_vb = 0;
  double type_ce = 0;
};

struct LossWeights {
  double lattice = 1.0;
  double type = 1.0;
  double coord = 10.0;
  double ce = 0.01;
};

struct LossBreakdown {
  double lattice_loss = 0;
  double coord_loss = 0;
  double type_vb_loss = 0;
  double type_ce_loss = 0;
  double total = 0;
};

LossBreakdown combine_losses(const LossParts& parts, const LossWeights& w);

Eigen::VectorXd softmax(const Eigen::VectorXd& logits);

}  // namespace xtalgen
