#include "xtalgen/schedules.hpp"

#include "xtalgen/error.hpp"

#include <cmath>
#include <numbers>

namespace xtalgen {

DDPMSchedule make_ddpm(int T, const DDPMParams& params) {
  if (T < 2) throw ConfigError("DDPM schedule needs T >= 2");
  DDPMSchedule s;
  s.T = T;
  s.params = params;
  s.beta.assign(T + 1, 0.0);
  if (!params.betas.empty()) {
    if (static_cast<int>(params.betas.size()) != T) throw ConfigError("explicit betas must have length T");
    for (int t = 1; t <= T; ++t) s.beta[t] = params.betas[t - 1];
  } else if (params.kind == DDPMKind::Linear) {
    for (int t = 1; t <= T; ++t)
      s.beta[t] = params.beta_start + (params.beta_end - params.beta_start) * (t - 1) / (T - 1);
  } else {
    auto f = [&](double t) {
      const double v = std::cos((t / T + params.cosine_offset) / (1 + params.cosine_offset) * std::numbers::pi / 2);
      return v * v;
    };
    for (int t = 1; t <= T; ++t) s.beta[t] = std::min(1.0 - f(t) / f(t - 1), params.cosine_beta_max);
  }
  s.alpha.assign(T + 1, 1.0);
  s.alpha_bar.assign(T + 1, 1.0);
  for (int t = 1; t <= T; ++t) {
    if (!(s.beta[t] > 0.0 && s.beta[t] < 1.0)) throw ConfigError("DDPM beta must lie in (0, 1)");
    s.alpha[t] = 1.0 - s.beta[t];
    s.alpha_bar[t] = s.alpha_bar[t - 1] * s.alpha[t];
  }
  return s;
}

SigmaSchedule make_sigma(int T, double sigma_min, double sigma_max) {
  if (T < 1) throw ConfigError("sigma schedule needs T >= 1");
  if (!(sigma_min > 0 && sigma_max > sigma_min)) throw ConfigError("sigma schedule needs 0 < sigma_min < sigma_max");
  SigmaSchedule s;
  s.T = T;
  s.sigma_min = sigma_min;
  s.sigma_max = sigma_max;
  s.sigma.resize(T + 1);
  for (int t = 0; t <= T; ++t) s.sigma[t] = sigma_min * std::pow(sigma_max / sigma_min, static_cast<double>(t) / T);
  s.sigma[T] = sigma_max;
  return s;
}

D3PMSchedule::D3PMSchedule(int T, int k, MaskScheduleKind kind, double lambda_ce)
    : T_(T), k_(k), kind_(kind), lambda_ce_(lambda_ce) {
  if (T < 1) throw ConfigError("D3PM schedule needs T >= 1");
  if (k < 2) throw ConfigError("D3PM schedule needs at least 2 classes");
  if (lambda_ce < 0) throw ConfigError("cross-entropy weight must be non-negative");
  beta_.assign(T + 1, 0.0);
  mask_prob_.assign(T + 1, 0.0);
  for (int t = 1; t <= T; ++t) {
    if (kind == MaskScheduleKind::Uniform) {
      beta_[t] = 1.0 / (T - t + 1);
      mask_prob_[t] = static_cast<double>(t) / T;
    } else {
      mask_prob_[t] = t == T ? 1.0 : 1.0 - std::cos(std::numbers::pi * t / (2.0 * T));
      const double keep_prev = 1.0 - mask_prob_[t - 1];
      beta_[t] = keep_prev > 0 ? 1.0 - (1.0 - mask_prob_[t]) / keep_prev : 1.0;
    }
  }
}

double D3PMSchedule::q_entry(int t, int i, int j) const {
  if (i == k_) return j == k_ ? 1.0 : 0.0;
  if (j == i) return 1.0 - beta(t);
  if (j == k_) return beta(t);
  return 0.0;
}

double D3PMSchedule::qbar_entry(int t, int i, int j) const {
  if (i == k_) return j == k_ ? 1.0 : 0.0;
  if (j == i) return 1.0 - mask_prob(t);
  if (j == k_) return mask_prob(t);
  return 0.0;
}

double D3PMSchedule::span_entry(int from, int to, int i, int j) const {
  if (from == to) return i == j ? 1.0 : 0.0;
  if (i == k_) return j == k_ ? 1.0 : 0.0;
  const double keep_from = 1.0 - mask_prob(from);
  const double survive = keep_from > 0 ? (1.0 - mask_prob(to)) / keep_from : 0.0;
  if (j == i) return survive;
  if (j == k_) return 1.0 - survive;
  return 0.0;
}

Eigen::VectorXd D3PMSchedule::qbar_row_times(int t, const Eigen::VectorXd& row) const {
  const double m = mask_prob(t);
  Eigen::VectorXd out(k_ + 1);
  out.head(k_) = (1.0 - m) * row.head(k_);
  out(k_) = m * row.head(k_).sum() + row(k_);
  return out;
}

Eigen::VectorXd D3PMSchedule::qbar_times_col(int t, const Eigen::VectorXd& col) const {
  const double m = mask_prob(t);
  Eigen::VectorXd out(k_ + 1);
  out.head(k_) = (1.0 - m) * col.head(k_) + Eigen::VectorXd::Constant(k_, m * col(k_));
  out(k_) = col(k_);
  return out;
}

Eigen::MatrixXd D3PMSchedule::Q(int t) const {
  Eigen::MatrixXd q = Eigen::MatrixXd::Zero(k_ + 1, k_ + 1);
  for (int i = 0; i <= k_; ++i)
    for (int j = 0; j <= k_; ++j) q(i, j) = q_entry(t, i, j);
  return q;
}

Eigen::MatrixXd D3PMSchedule::Q_bar(int t) const {
  Eigen::MatrixXd q = Eigen::MatrixXd::Zero(k_ + 1, k_ + 1);
  for (int i = 0; i <= k_; ++i)
    for (int j = 0; j <= k_; ++j) q(i, j) = qbar_entry(t, i, j);
  return q;
}

nlohmann::json to_json(const DDPMSchedule& s) {
  nlohmann::json j;
  j["T"] = s.T;
  j["kind"] = s.params.kind == DDPMKind::Cosine ? "cosine" : "linear";
  j["beta_start"] = s.params.beta_start;
  j["beta_end"] = s.params.beta_end;
  j["cosine_offset"] = s.params.cosine_offset;
  j["cosine_beta_max"] = s.params.cosine_beta_max;
  j["beta"] = std::vector<double>(s.beta.begin() + 1, s.beta.end());
  return j;
}

nlohmann::json to_json(const SigmaSchedule& s) {
  return {{"T", s.T}, {"sigma_min", s.sigma_min}, {"sigma_max", s.sigma_max}};
}

nlohmann::json to_json(const D3PMSchedule& s) {
  return {{"T", s.T()},
          {"k", s.num_classes()},
          {"kind", s.kind() == MaskScheduleKind::Uniform ? "uniform" : "cosine"},
          {"lambda_ce", s.lambda_ce()}};
}

DDPMSchedule ddpm_from_json(const nlohmann::json& j) {
  DDPMParams p;
  p.kind = j.at("kind").get<std::string>() == "linear" ? DDPMKind::Linear : DDPMKind::Cosine;
  p.beta_start = j.at("beta_start").get<double>();
  p.beta_end = j.at("beta_end").get<double>();
  p.cosine_offset = j.at("cosine_offset").get<double>();
  p.cosine_beta_max = j.at("cosine_beta_max").get<double>();
  p.betas = j.at("beta").get<std::vector<double>>();
  DDPMSchedule s = make_ddpm(j.at("T").get<int>(), p);
  s.params.betas.clear();
  return s;
}

SigmaSchedule sigma_from_json(const nlohmann::json& j) {
  return make_sigma(j.at("T").get<int>(), j.at("sigma_min").get<double>(), j.at("sigma_max").get<double>());
}

D3PMSchedule d3pm_from_json(const nlohmann::json& j) {
  const auto kind = j.at("kind").get<std::string>() == "cosine" ? MaskScheduleKind::Cosine : MaskScheduleKind::Uniform;
  return D3PMSchedule(j.at("T").get<int>(), j.at("k").get<int>(), kind, j.at("lambda_ce").get<double>());
}

}  // namespace xtalgen
