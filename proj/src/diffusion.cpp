#include "xtalgen/diffusion.hpp"

#include "xtalgen/error.hpp"

#include <cmath>

namespace xtalgen {

NoiseDraws draw_noise(int num_atoms, std::mt19937_64& rng) {
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  NoiseDraws d;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) d.eps_L(r, c) = normal(rng);
  d.eps_X.resize(num_atoms, 3);
  for (int i = 0; i < num_atoms; ++i)
    for (int c = 0; c < 3; ++c) d.eps_X(i, c) = normal(rng);
  d.type_draw.resize(num_atoms);
  for (auto& u : d.type_draw) u = uniform(rng);
  return d;
}

Mat3 forward_lattice(const Mat3& l0, int t, const DDPMSchedule& sched, const Mat3& eps_l) {
  if (t < 0 || t > sched.T) throw ConfigError("time step out of range");
  const double ab = sched.alpha_bar[t];
  return std::sqrt(ab) * l0 + std::sqrt(1.0 - ab) * eps_l;
}

Coords forward_coords(const Coords& x0, int t, const SigmaSchedule& sched, const Coords& eps_x) {
  if (t < 0 || t > sched.T) throw ConfigError("time step out of range");
  if (x0.rows() != eps_x.rows()) throw DataError("coordinate noise shape mismatch");
  return wrap_frac(x0 + sched.sigma[t] * eps_x);
}

int forward_type(int a0, int t, const D3PMSchedule& d3pm, double u) {
  // absorbing chain: row a0 of Q_bar_t has mass only on a0 and [MASK]
  if (a0 == d3pm.mask_index()) return a0;
  return u < d3pm.mask_prob(t) ? d3pm.mask_index() : a0;
}

std::vector<int> forward_types(std::span<const int> a0, int t, const D3PMSchedule& d3pm, std::span<const double> u) {
  if (a0.size() != u.size()) throw DataError("type draw shape mismatch");
  std::vector<int> out(a0.size());
  for (std::size_t i = 0; i < a0.size(); ++i) out[i] = forward_type(a0[i], t, d3pm, u[i]);
  return out;
}

std::vector<int> forward_types(std::span<const int> a0, int t, const D3PMSchedule& d3pm, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  std::vector<double> u(a0.size());
  for (auto& x : u) x = uniform(rng);
  return forward_types(a0, t, d3pm, u);
}

int effective_k_max(double sigma, int k_max) {
  if (sigma <= 0.5) return k_max;
  // keep the outermost image at least ~9 sigma away
  return std::max(k_max, static_cast<int>(std::ceil(9.0 * sigma)) + 1);
}

double wn_score(double x_t, double x0, double sigma, int k_max) {
  if (!(sigma > 0)) throw ConfigError("wrapped-normal sigma must be positive");
  if (k_max < 1) throw ConfigError("k_max must be at least 1");
  double d = x_t - x0;
  d -= std::floor(d + 0.5);
  const int kk = effective_k_max(sigma, k_max);
  const double inv2s2 = 1.0 / (2.0 * sigma * sigma);
  // log-sum-exp relative to the k = 0 term, which is the largest for |d| <= 1/2
  const double e0 = d * d * inv2s2;
  // images summed in +-k pairs so that d = 0 gives exactly zero
  double num = d, den = 1;
  for (int k = 1; k <= kk; ++k) {
    const double yp = d + k, ym = d - k;
    const double wp = std::exp(e0 - yp * yp * inv2s2), wm = std::exp(e0 - ym * ym * inv2s2);
    num += wp * yp + wm * ym;
    den += wp + wm;
  }
  return -num / (den * sigma * sigma);
}

Coords wn_score(const Coords& x_t, const Coords& x0, double sigma, int k_max) {
  if (x_t.rows() != x0.rows()) throw DataError("coordinate shape mismatch");
  Coords out(x_t.rows(), 3);
  for (Eigen::Index i = 0; i < x_t.rows(); ++i)
    for (int c = 0; c < 3; ++c) out(i, c) = wn_score(x_t(i, c), x0(i, c), sigma, k_max);
  return out;
}

double lattice_loss(const Mat3& eps, const Mat3& eps_hat) { return (eps - eps_hat).squaredNorm() / 9.0; }

Mat3 lattice_loss_grad(const Mat3& eps, const Mat3& eps_hat) { return -2.0 / 9.0 * (eps - eps_hat); }

namespace {

double coord_weight(double sigma, CoordWeighting w) { return w == CoordWeighting::Sigma2 ? sigma * sigma : 1.0; }

}  // namespace

double coord_loss(const Coords& target, const Coords& score_hat, double sigma, CoordWeighting weighting) {
  if (target.rows() != score_hat.rows()) throw DataError("coordinate loss shape mismatch");
  return coord_weight(sigma, weighting) * (target - score_hat).squaredNorm() / static_cast<double>(target.size());
}

Coords coord_loss_grad(const Coords& target, const Coords& score_hat, double sigma, CoordWeighting weighting) {
  if (target.rows() != score_hat.rows()) throw DataError("coordinate loss shape mismatch");
  return (-2.0 * coord_weight(sigma, weighting) / static_cast<double>(target.size())) * (target - score_hat);
}

Eigen::VectorXd softmax(const Eigen::VectorXd& logits) {
  const double m = logits.maxCoeff();
  Eigen::VectorXd e = (logits.array() - m).exp();
  return e / e.sum();
}

Eigen::VectorXd d3pm_posterior(int a_t, int a0, int t, const D3PMSchedule& d3pm, int t_prev) {
  if (t_prev < 0) t_prev = t - 1;
  if (t < 1 || t > d3pm.T() || t_prev >= t) throw ConfigError("invalid posterior time indices");
  const int s = d3pm.num_states();
  const double norm = d3pm.qbar_entry(t, a0, a_t);
  if (!(norm > 0)) throw DataError("posterior conditioned on a zero-probability (a0, a_t) pair");
  Eigen::VectorXd q(s);
  for (int j = 0; j < s; ++j) q(j) = d3pm.span_entry(t_prev, t, j, a_t) * d3pm.qbar_entry(t_prev, a0, j) / norm;
  return q;
}

Eigen::VectorXd d3pm_model_posterior(const Eigen::VectorXd& logits, int a_t, int t, const D3PMSchedule& d3pm,
                                     int t_prev) {
  if (t_prev < 0) t_prev = t - 1;
  const int k = d3pm.num_classes();
  if (logits.size() != k) throw DataError("logit vector must cover the real classes");
  Eigen::VectorXd probs = Eigen::VectorXd::Zero(k + 1);
  probs.head(k) = softmax(logits);
  Eigen::VectorXd u = d3pm.qbar_row_times(t_prev, probs);
  for (int j = 0; j <= k; ++j) u(j) *= d3pm.span_entry(t_prev, t, j, a_t);
  const double total = u.sum();
  if (!(total > 0)) throw NumericError("model posterior has no mass");
  return u / total;
}

TypeLoss type_loss(const Eigen::VectorXd& logits, int a0, int a_t, int t, const D3PMSchedule& d3pm) {
  const int k = d3pm.num_classes();
  if (logits.size() != k) throw DataError("logit vector must cover the real classes");
  if (!logits.allFinite()) throw NumericError("non-finite type logits");
  if (a0 < 0 || a0 >= k) throw DataError("clean atom type out of range");

  TypeLoss out;
  const Eigen::VectorXd s = softmax(logits);
  out.ce = -std::log(std::max(s(a0), 1e-300));
  out.grad_ce = s;
  out.grad_ce(a0) -= 1.0;

  Eigen::VectorXd s_ext = Eigen::VectorXd::Zero(k + 1);
  s_ext.head(k) = s;
  const Eigen::VectorXd r = d3pm.qbar_row_times(t - 1, s_ext);
  Eigen::VectorXd col(k + 1);
  for (int j = 0; j <= k; ++j) col(j) = d3pm.q_entry(t, j, a_t);
  const Eigen::VectorXd u = r.cwiseProduct(col);
  const double total = u.sum();
  if (!(total > 0)) throw NumericError("model posterior has no mass");

  Eigen::VectorXd g_u = Eigen::VectorXd::Constant(k + 1, 1.0 / total);
  if (t == 1) {
    out.vb = -std::log(std::max(u(a0) / total, 1e-300));
    g_u(a0) -= 1.0 / u(a0);
  } else {
    const Eigen::VectorXd q = d3pm_posterior(a_t, a0, t, d3pm);
    out.vb = 0;
    for (int j = 0; j <= k; ++j) {
      if (q(j) <= 0) continue;
      out.vb += q(j) * (std::log(q(j)) - std::log(u(j) / total));
      g_u(j) -= q(j) / u(j);
    }
  }
  // u_j = col_j * sum_i s_i Qbar[i, j]  =>  dvb/ds = Qbar (g_u .* col)
  const Eigen::VectorXd g_s = d3pm.qbar_times_col(t - 1, g_u.cwiseProduct(col)).head(k);
  out.grad_vb = s.cwiseProduct(g_s.array().matrix() - Eigen::VectorXd::Constant(k, s.dot(g_s)));
  return out;
}

LossBreakdown combine_losses(const LossParts& p, const LossWeights& w) {
  LossBreakdown b;
  b.lattice_loss = p.lattice;
  b.coord_loss = p.coord;
  b.type_vb_loss = p.type_vb;
  b.type_ce_loss = p.type_ce;
  b.total = w.lattice * p.lattice + w.coord * p.coord + w.type * (p.type_vb + w.ce * p.type_ce);
  return b;
}

}  // namespace xtalgen
