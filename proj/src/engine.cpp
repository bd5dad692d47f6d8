#include "xtalgen/engine.hpp"

#include "xtalgen/elements.hpp"
#include "xtalgen/error.hpp"
#include "xtalgen/prompts.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <numeric>
#include <set>
#include <sstream>

namespace xtalgen {

using nlohmann::json;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

std::string to_string(Task t) { return t == Task::Gen ? "gen" : "csp"; }

Task parse_task(const std::string& s) {
  if (s == "gen") return Task::Gen;
  if (s == "csp") return Task::Csp;
  throw ConfigError("unknown task '" + s + "' (expected gen or csp)");
}

std::string to_string(TypeStrategy s) { return s == TypeStrategy::D3pmAncestral ? "d3pm_ancestral" : "alg2_softmax"; }

TypeStrategy parse_type_strategy(const std::string& s) {
  if (s == "d3pm_ancestral") return TypeStrategy::D3pmAncestral;
  if (s == "alg2_softmax") return TypeStrategy::Alg2Softmax;
  throw ConfigError("unknown type strategy '" + s + "'");
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be positive");
  if (batch_size < 1) throw ConfigError("batch_size must be positive");
  if (lambda_lattice < 0 || lambda_type < 0 || lambda_coord < 0 || lambda_ce < 0)
    throw ConfigError("loss weights must be non-negative");
  if (optimizer != "adam") throw ConfigError("unsupported optimizer '" + optimizer + "'");
  if (!(lr > 0)) throw ConfigError("learning rate must be positive");
  if (lr_schedule != "plateau" && lr_schedule != "constant" && lr_schedule != "cosine") throw ConfigError("unknown lr_schedule '" + lr_schedule + "'");
  if (!(plateau_factor > 0 && plateau_factor < 1)) throw ConfigError("plateau_factor must lie in (0, 1)");
  if (plateau_patience < 1) throw ConfigError("plateau_patience must be positive");
  if (min_lr < 0 || grad_clip < 0) throw ConfigError("min_lr and grad_clip must be non-negative");
  if (T < 2) throw ConfigError("T must be at least 2");
  if (!(text_dropout >= 0 && text_dropout <= 1)) throw ConfigError("text_dropout must lie in [0, 1]");
  if (k_max < 1) throw ConfigError("k_max must be positive");
  if (!(ddpm_beta_max > 0 && ddpm_beta_max < 1)) throw ConfigError("ddpm_beta_max must lie in (0, 1)");
}

namespace {

const std::set<std::string> kTrainKeys = {
    "epochs",         "batch_size", "lambda_lattice", "lambda_type",   "lambda_coord",  "lambda_ce",
    "optimizer",      "lr",         "lr_schedule",    "plateau_factor", "plateau_patience", "min_lr",
    "grad_clip",      "seed",       "T",              "deterministic", "task",          "coord_weighting",
    "text_dropout",   "ddpm_kind", "ddpm_beta_max",  "sigma_min",      "sigma_max",     "mask_schedule", "k_max"};

}  // namespace

json to_json(const TrainConfig& c) {
  return {{"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"lambda_lattice", c.lambda_lattice},
          {"lambda_type", c.lambda_type},
          {"lambda_coord", c.lambda_coord},
          {"lambda_ce", c.lambda_ce},
          {"optimizer", c.optimizer},
          {"lr", c.lr},
          {"lr_schedule", c.lr_schedule},
          {"plateau_factor", c.plateau_factor},
          {"plateau_patience", c.plateau_patience},
          {"min_lr", c.min_lr},
          {"grad_clip", c.grad_clip},
          {"seed", c.seed},
          {"T", c.T},
          {"deterministic", c.deterministic},
          {"task", to_string(c.task)},
          {"coord_weighting", c.coord_weighting == CoordWeighting::Sigma2 ? "sigma2" : "unit"},
          {"text_dropout", c.text_dropout},
          {"ddpm_kind", c.ddpm_kind == DDPMKind::Cosine ? "cosine" : "linear"},
          {"ddpm_beta_max", c.ddpm_beta_max},
          {"sigma_min", c.sigma_min},
          {"sigma_max", c.sigma_max},
          {"mask_schedule", c.mask_schedule == MaskScheduleKind::Uniform ? "uniform" : "cosine"},
          {"k_max", c.k_max}};
}

TrainConfig train_config_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("train config must be a JSON object");
  for (const auto& [key, _] : j.items())
    if (!kTrainKeys.count(key)) throw ConfigError("unknown train config key '" + key + "'");
  TrainConfig c;
  try {
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.lambda_lattice = j.value("lambda_lattice", c.lambda_lattice);
    c.lambda_type = j.value("lambda_type", c.lambda_type);
    c.lambda_coord = j.value("lambda_coord", c.lambda_coord);
    c.lambda_ce = j.value("lambda_ce", c.lambda_ce);
    c.optimizer = j.value("optimizer", c.optimizer);
    c.lr = j.value("lr", c.lr);
    c.lr_schedule = j.value("lr_schedule", c.lr_schedule);
    c.plateau_factor = j.value("plateau_factor", c.plateau_factor);
    c.plateau_patience = j.value("plateau_patience", c.plateau_patience);
    c.min_lr = j.value("min_lr", c.min_lr);
    c.grad_clip = j.value("grad_clip", c.grad_clip);
    c.seed = j.value("seed", c.seed);
    c.T = j.value("T", c.T);
    c.deterministic = j.value("deterministic", c.deterministic);
    c.task = parse_task(j.value("task", to_string(c.task)));
    const std::string w = j.value("coord_weighting", std::string("sigma2"));
    if (w != "sigma2" && w != "unit") throw ConfigError("coord_weighting must be sigma2 or unit");
    c.coord_weighting = w == "unit" ? CoordWeighting::Unit : CoordWeighting::Sigma2;
    c.text_dropout = j.value("text_dropout", c.text_dropout);
    const std::string dk = j.value("ddpm_kind", std::string("cosine"));
    if (dk != "cosine" && dk != "linear") throw ConfigError("ddpm_kind must be cosine or linear");
    c.ddpm_kind = dk == "linear" ? DDPMKind::Linear : DDPMKind::Cosine;
    c.ddpm_beta_max = j.value("ddpm_beta_max", c.ddpm_beta_max);
    c.sigma_min = j.value("sigma_min", c.sigma_min);
    c.sigma_max = j.value("sigma_max", c.sigma_max);
    const std::string mk = j.value("mask_schedule", std::string("uniform"));
    if (mk != "uniform" && mk != "cosine") throw ConfigError("mask_schedule must be uniform or cosine");
    c.mask_schedule = mk == "cosine" ? MaskScheduleKind::Cosine : MaskScheduleKind::Uniform;
    c.k_max = j.value("k_max", c.k_max);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("train config: ") + e.what());
  }
  c.validate();
  return c;
}

Schedules make_schedules(const TrainConfig& cfg, int k_classes) {
  DDPMParams p;
  p.kind = cfg.ddpm_kind;
  p.cosine_beta_max = cfg.ddpm_beta_max;
  return {make_ddpm(cfg.T, p), make_sigma(cfg.T, cfg.sigma_min, cfg.sigma_max),
          D3PMSchedule(cfg.T, k_classes, cfg.mask_schedule, cfg.lambda_ce)};
}

Coords coord_score_from_output(const Coords& raw, double sigma, CoordWeighting w) {
  return w == CoordWeighting::Sigma2 ? Coords(raw / sigma) : raw;
}

SampleLoss sample_loss(const Denoiser& model, const Schedules& sched, const TrainConfig& cfg, const Crystal& x0,
                       const std::optional<Eigen::VectorXd>& text, int t, const NoiseDraws& noise,
                       DenoiserCache* cache) {
  const int n = x0.num_atoms();
  const auto& a0 = x0.atom_types();
  const double sigma = sched.sigma.sigma[static_cast<std::size_t>(t)];

  DenoiserInput in;
  in.lattice = forward_lattice(x0.lattice(), t, sched.ddpm, noise.eps_L);
  in.frac = forward_coords(x0.frac_coords(), t, sched.sigma, noise.eps_X);
  in.types = cfg.task == Task::Gen ? forward_types(a0, t, sched.d3pm, noise.type_draw) : a0;
  in.t = t;
  in.T = sched.ddpm.T;
  in.text = text;
  const DenoiserOutput out = model.forward(in, cache);

  LossParts parts;
  SampleLoss res;
  parts.lattice = lattice_loss(noise.eps_L, out.eps_L);
  res.grad.eps_L = cfg.lambda_lattice * lattice_loss_grad(noise.eps_L, out.eps_L);

  const Coords target = wn_score(in.frac, x0.frac_coords(), sigma, cfg.k_max);
  const Coords score = coord_score_from_output(out.eps_X, sigma, cfg.coord_weighting);
  parts.coord = coord_loss(target, score, sigma, cfg.coord_weighting);
  Coords d_score = coord_loss_grad(target, score, sigma, cfg.coord_weighting);
  if (cfg.coord_weighting == CoordWeighting::Sigma2) d_score /= sigma;
  res.grad.eps_X = cfg.lambda_coord * d_score;

  res.grad.logits = RowMat::Zero(n, out.logits.cols());
  if (cfg.task == Task::Gen) {
    for (int i = 0; i < n; ++i) {
      const TypeLoss tl = type_loss(out.logits.row(i).transpose(), a0[static_cast<std::size_t>(i)],
                                    in.types[static_cast<std::size_t>(i)], t, sched.d3pm);
      parts.type_vb += tl.vb / n;
      parts.type_ce += tl.ce / n;
      res.grad.logits.row(i) = (cfg.lambda_type / n) * (tl.grad_vb + cfg.lambda_ce * tl.grad_ce).transpose();
    }
  }
  res.loss = combine_losses(parts, cfg.loss_weights());
  return res;
}

namespace {

struct Adam {
  std::vector<double> m, v;
  long step = 0;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

  explicit Adam(std::size_t n) : m(n, 0.0), v(n, 0.0) {}

  void update(std::vector<double>& params, const std::vector<double>& grad, double lr, const Denoiser& model) {
    ++step;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step));
    const auto& groups = model.layout().groups();
    for (std::size_t g = 0; g < groups.size(); ++g) {
      if (model.group_frozen(g)) continue;
      const std::size_t end = groups[g].offset + groups[g].size;
      for (std::size_t i = groups[g].offset; i < end; ++i) {
        m[i] = beta1 * m[i] + (1 - beta1) * grad[i];
        v[i] = beta2 * v[i] + (1 - beta2) * grad[i] * grad[i];
        params[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps);
      }
    }
  }
};

std::string rng_to_string(const std::mt19937_64& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

void check_finite_loss(const LossBreakdown& l, int epoch, int batch, const std::string& id) {
  if (std::isfinite(l.total)) return;
  std::ostringstream os;
  os << "non-finite loss at epoch " << epoch << ", batch " << batch << " (structure '" << id
     << "'): lattice=" << l.lattice_loss << " coord=" << l.coord_loss << " type_vb=" << l.type_vb_loss
     << " type_ce=" << l.type_ce_loss;
  throw NumericError(os.str());
}

}  // namespace

Checkpoint train(const std::vector<TrainingExample>& data, const TrainConfig& cfg, const DenoiserConfig& model_cfg,
                 const TextEncoderSpec& text, const EpochCallback& on_epoch) {
  cfg.validate();
  model_cfg.validate();
  if (data.empty()) throw DataError("training set is empty");
  for (const auto& ex : data) {
    if (!ex.text) throw DataError("structure '" + ex.crystal.id() + "' has no prompt embedding");
    if (ex.text->size() != model_cfg.text_raw_dim)
      throw DataError("prompt embedding for '" + ex.crystal.id() + "' has the wrong dimension");
    for (int a : ex.crystal.atom_types())
      if (a >= model_cfg.k_classes) throw DataError("atom type exceeds the model's class count");
  }

  Checkpoint ck;
  ck.train = cfg;
  ck.text = text;
  ck.schedules = make_schedules(cfg, model_cfg.k_classes);
  ck.model = init_denoiser(model_cfg, model_cfg.seed);
  for (const auto& ex : data) ++ck.num_atoms_hist[ex.crystal.num_atoms()];

  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  std::uniform_int_distribution<int> pick_t(1, cfg.T);
  Denoiser& model = ck.model;
  Adam adam(model.num_params());
  std::vector<double> grad(model.num_params());
  const int n_data = static_cast<int>(data.size());
  const int batch = std::min(cfg.batch_size, n_data);
  double lr = cfg.lr;
  double best = std::numeric_limits<double>::infinity();
  int bad_epochs = 0;
  std::vector<int> order(static_cast<std::size_t>(n_data));
  DenoiserCache cache;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    if (cfg.lr_schedule == "cosine")
      lr = cfg.min_lr + 0.5 * (cfg.lr - cfg.min_lr) * (1.0 + std::cos(std::numbers::pi * (epoch - 1) / cfg.epochs));
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    LossBreakdown sum;
    for (int start = 0, b = 0; start < n_data; start += batch, ++b) {
      const int end = std::min(start + batch, n_data);
      const double inv = 1.0 / (end - start);
      std::fill(grad.begin(), grad.end(), 0.0);
      for (int k = start; k < end; ++k) {
        const auto& ex = data[static_cast<std::size_t>(order[static_cast<std::size_t>(k)])];
        const int t = pick_t(rng);
        const NoiseDraws noise = draw_noise(ex.crystal.num_atoms(), rng);
        const bool drop = uniform(rng) < cfg.text_dropout;
        SampleLoss sl = sample_loss(model, ck.schedules, cfg, ex.crystal, drop ? std::nullopt : ex.text, t, noise,
                                    &cache);
        check_finite_loss(sl.loss, epoch, b, ex.crystal.id());
        sl.grad.eps_L *= inv;
        sl.grad.eps_X *= inv;
        sl.grad.logits *= inv;
        model.backward(cache, sl.grad, grad);
        sum.lattice_loss += sl.loss.lattice_loss;
        sum.coord_loss += sl.loss.coord_loss;
        sum.type_vb_loss += sl.loss.type_vb_loss;
        sum.type_ce_loss += sl.loss.type_ce_loss;
        sum.total += sl.loss.total;
      }
      if (cfg.grad_clip > 0) {
        double norm = 0;
        for (double g : grad) norm += g * g;
        norm = std::sqrt(norm);
        if (norm > cfg.grad_clip)
          for (double& g : grad) g *= cfg.grad_clip / norm;
      }
      adam.update(model.params(), grad, lr, model);
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = lr;
    rec.loss.lattice_loss = sum.lattice_loss / n_data;
    rec.loss.coord_loss = sum.coord_loss / n_data;
    rec.loss.type_vb_loss = sum.type_vb_loss / n_data;
    rec.loss.type_ce_loss = sum.type_ce_loss / n_data;
    rec.loss.total = sum.total / n_data;
    ck.history.push_back(rec);
    if (cfg.lr_schedule == "plateau") {
      if (rec.loss.total < best * (1.0 - 1e-4)) {
        best = rec.loss.total;
        bad_epochs = 0;
      } else if (++bad_epochs > cfg.plateau_patience) {
        lr = std::max(cfg.min_lr, lr * cfg.plateau_factor);
        bad_epochs = 0;
      }
    }
    if (on_epoch) on_epoch(rec);
  }
  ck.epoch = cfg.epochs;
  ck.rng_state = rng_to_string(rng);
  for (double& p : model.params()) p = static_cast<double>(static_cast<float>(p));
  return ck;
}

namespace {

int sample_categorical(const Eigen::VectorXd& probs, std::mt19937_64& rng) {
  const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng) * probs.sum();
  double acc = 0;
  for (Eigen::Index i = 0; i < probs.size(); ++i) {
    acc += probs(i);
    if (u < acc) return static_cast<int>(i);
  }
  for (Eigen::Index i = probs.size() - 1; i >= 0; --i)
    if (probs(i) > 0) return static_cast<int>(i);
  return 0;
}

}  // namespace

std::vector<int> type_update(const RowMat& logits, const std::vector<int>& a_t, int t, int t_prev,
                             const D3PMSchedule& d3pm, TypeStrategy strategy, double sigma_t, std::mt19937_64& rng) {
  const int k = d3pm.num_classes();
  if (logits.rows() != static_cast<Eigen::Index>(a_t.size()) || logits.cols() != k)
    throw DataError("type_update: logits shape mismatch");
  std::vector<int> out(a_t.size());
  if (strategy == TypeStrategy::Alg2Softmax) {
    std::normal_distribution<double> normal;
    for (std::size_t i = 0; i < a_t.size(); ++i) {
      Eigen::VectorXd z = logits.row(static_cast<Eigen::Index>(i)).transpose();
      for (auto& v : z) v += sigma_t * normal(rng);
      Eigen::Index best = 0;
      z.maxCoeff(&best);
      out[i] = static_cast<int>(best);
    }
    return out;
  }
  for (std::size_t i = 0; i < a_t.size(); ++i) {
    if (a_t[i] != d3pm.mask_index()) {
      out[i] = a_t[i];
      continue;
    }
    const int a0 = sample_categorical(softmax(logits.row(static_cast<Eigen::Index>(i)).transpose()), rng);
    out[i] = sample_categorical(d3pm_posterior(a_t[i], a0, t, d3pm, t_prev), rng);
  }
  return out;
}

std::vector<int> time_grid(int T, int steps) {
  if (steps == 0) steps = T;
  if (steps < 1 || steps > T) throw ConfigError("steps must lie in [1, T]");
  std::vector<int> grid(static_cast<std::size_t>(steps) + 1);
  for (int i = 0; i <= steps; ++i)
    grid[static_cast<std::size_t>(i)] =
        static_cast<int>(std::llround(static_cast<double>(T) * (steps - i) / steps));
  return grid;
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index) {
  std::uint64_t x = base ^ (index * 0x9e3779b97f4a7c15ULL + 0x632be59bd9b4e019ULL);
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

namespace {

bool degenerate_lattice(const Mat3& l) {
  const double r = (l.row(0).norm() + l.row(1).norm() + l.row(2).norm()) / 3.0;
  return !(std::abs(l.determinant()) >= 1e-6 * r * r * r) || !(r > 0);
}

Mat3 normal_mat3(std::mt19937_64& rng) {
  std::normal_distribution<double> normal;
  Mat3 m;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) m(r, c) = normal(rng);
  return m;
}

Coords normal_coords(int n, std::mt19937_64& rng) {
  std::normal_distribution<double> normal;
  Coords x(n, 3);
  for (int i = 0; i < n; ++i)
    for (int c = 0; c < 3; ++c) x(i, c) = normal(rng);
  return x;
}

}  // namespace

SampleResult sample(const Checkpoint& ckpt, const SampleOptions& opt) {
  using clock = std::chrono::steady_clock;
  const auto t_start = clock::now();
  const Denoiser& model = ckpt.model;
  const Schedules& sch = ckpt.schedules;
  const int T = sch.ddpm.T;
  const int k = sch.d3pm.num_classes();
  const CoordWeighting weighting = ckpt.train.coord_weighting;
  const std::vector<int> grid = time_grid(T, opt.steps);
  if (!(opt.step_size >= 0)) throw ConfigError("step_size must be non-negative");

  std::mt19937_64 rng(opt.seed);
  std::vector<int> types;
  if (opt.mode == Task::Csp) {
    if (!opt.fixed_types || opt.fixed_types->empty()) throw ConfigError("csp sampling requires fixed atom types");
    types = *opt.fixed_types;
    for (int a : types)
      if (a < 0 || a >= k) throw DataError("fixed atom type out of range");
  } else {
    if (opt.num_atoms < 1) throw ConfigError("gen sampling requires a positive atom count");
    if (opt.strategy == TypeStrategy::D3pmAncestral) {
      types.assign(static_cast<std::size_t>(opt.num_atoms), sch.d3pm.mask_index());
    } else {
      std::uniform_int_distribution<int> d(0, k - 1);
      types.resize(static_cast<std::size_t>(opt.num_atoms));
      for (auto& a : types) a = d(rng);
    }
  }
  const int n = static_cast<int>(types.size());

  Mat3 L = normal_mat3(rng);
  Coords X(n, 3);
  {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int i = 0; i < n; ++i)
      for (int c = 0; c < 3; ++c) X(i, c) = u(rng);
  }

  SampleResult res;
  double last_beta = 0;
  const std::size_t S = grid.size() - 1;
  for (std::size_t i = 0; i < S; ++i) {
    const auto step_start = clock::now();
    const int t = grid[i], s = grid[i + 1];
    const bool last = s == 0;
    DenoiserInput in;
    in.types = types;
    in.frac = X;
    in.lattice = L;
    in.t = t;
    in.T = T;
    in.text = opt.text;
    const DenoiserOutput out = model.forward(in);

    const double ab_t = sch.ddpm.alpha_bar[static_cast<std::size_t>(t)];
    const double ab_s = sch.ddpm.alpha_bar[static_cast<std::size_t>(s)];
    const double alpha = ab_t / ab_s, beta = 1.0 - alpha;
    const Mat3 eps_L = normal_mat3(rng);
    if (last) last_beta = beta;
    const Mat3 L_next = (L - beta / std::sqrt(1.0 - ab_t) * out.eps_L) / std::sqrt(alpha) +
                        std::sqrt(beta * (1.0 - ab_s) / (1.0 - ab_t)) * eps_L;

    std::vector<int> types_next = types;
    const double sig_t = sch.sigma.sigma[static_cast<std::size_t>(t)];
    const double sig_s = sch.sigma.sigma[static_cast<std::size_t>(s)];
    if (opt.mode == Task::Gen) types_next = type_update(out.logits, types, t, s, sch.d3pm, opt.strategy, sig_t, rng);

    const double dvar = sig_t * sig_t - sig_s * sig_s;
    const Coords score = coord_score_from_output(out.eps_X, sig_t, weighting);
    const Coords eps1 = normal_coords(n, rng);
    const double noise1 = last ? 0.0 : sig_s * std::sqrt(dvar) / sig_t;
    const Coords X_half = wrap_frac(Coords(X + dvar * score + noise1 * eps1));

    in.frac = X_half;
    in.lattice = L_next;
    const DenoiserOutput out2 = model.forward(in);
    const Coords score2 = coord_score_from_output(out2.eps_X, sig_t, weighting);
    const double eta = opt.step_size * sig_s / sig_t;
    const Coords eps2 = normal_coords(n, rng);
    const double noise2 = last ? 0.0 : std::sqrt(2.0 * eta);
    X = wrap_frac(Coords(X_half + eta * score2 + noise2 * eps2));
    L = L_next;
    types = std::move(types_next);
    if (!L.allFinite() || !X.allFinite())
      throw NumericError("non-finite sampler state at step t=" + std::to_string(t));
    if (opt.on_step) opt.on_step(s, L, X, types);
    res.step_seconds.push_back(std::chrono::duration<double>(clock::now() - step_start).count());
  }

  if (degenerate_lattice(L)) {
    // one retry: perturb the final lattice at the scale of the last step's variance
    res.lattice_resampled = true;
    L += std::sqrt(last_beta) * normal_mat3(rng);
  }
  if (!degenerate_lattice(L)) {
    if (L.determinant() < 0) {
      // inversion of both basis and coordinates leaves every atom position unchanged
      L = -L;
      X = wrap_frac(Coords(-X));
    }
    for (auto& a : types)
      if (a >= k) throw NumericError("sampler finished with unresolved [MASK] types");
    res.crystal = Crystal(types, X, L);
  }
  res.total_seconds = std::chrono::duration<double>(clock::now() - t_start).count();
  return res;
}

int choose_num_atoms(const Checkpoint& ckpt, const std::string& prompt_text, std::mt19937_64& rng) {
  try {
    const Composition comp = parse_formula(parse_prompt(prompt_text).formula);
    int total = 0;
    for (const auto& [_, c] : comp) total += c;
    if (total > 0) return total;
  } catch (const DataError&) {
  }
  if (ckpt.num_atoms_hist.empty()) throw ConfigError("checkpoint has no atom-count distribution");
  int total = 0;
  for (const auto& [_, c] : ckpt.num_atoms_hist) total += c;
  int r = std::uniform_int_distribution<int>(0, total - 1)(rng);
  for (const auto& [n, c] : ckpt.num_atoms_hist) {
    if (r < c) return n;
    r -= c;
  }
  return ckpt.num_atoms_hist.rbegin()->first;
}

Eigen::VectorXd embed_prompt(const TextEncoderSpec& spec, const std::string& text) {
  if (spec.kind != "hash") throw ConfigError("model expects external embeddings; supply them by prompt id");
  const std::vector<double> v = encode_text_hash(text, spec.dim, spec.seed);
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

namespace {

constexpr const char* kMagic = "xtalgen-checkpoint";

json history_to_json(const std::vector<EpochRecord>& h) {
  json arr = json::array();
  for (const auto& r : h)
    arr.push_back({{"epoch", r.epoch},
                   {"lattice", r.loss.lattice_loss},
                   {"coord", r.loss.coord_loss},
                   {"type_vb", r.loss.type_vb_loss},
                   {"type_ce", r.loss.type_ce_loss},
                   {"total", r.loss.total},
                   {"lr", r.lr}});
  return arr;
}

}  // namespace

std::string serialize_checkpoint(const Checkpoint& ck) {
  json layout = json::array();
  for (const auto& g : ck.model.layout().groups())
    layout.push_back({{"name", g.name}, {"offset", g.offset}, {"size", g.size}});
  json hist = json::array();
  for (const auto& [n, c] : ck.num_atoms_hist) hist.push_back({n, c});
  json header = {{"format", kMagic},
                 {"version", ck.version},
                 {"denoiser", to_json(ck.model.config())},
                 {"param_layout", layout},
                 {"train", to_json(ck.train)},
                 {"text_encoder", {{"kind", ck.text.kind}, {"dim", ck.text.dim}, {"seed", ck.text.seed}}},
                 {"schedules",
                  {{"ddpm", to_json(ck.schedules.ddpm)},
                   {"sigma", to_json(ck.schedules.sigma)},
                   {"d3pm", to_json(ck.schedules.d3pm)}}},
                 {"epoch", ck.epoch},
                 {"history", history_to_json(ck.history)},
                 {"num_atoms_hist", hist},
                 {"rng_state", ck.rng_state}};
  if (!ck.provenance.is_null()) header["provenance"] = ck.provenance;
  std::string out = header.dump();
  out.push_back('\n');
  const std::uint64_t count = ck.model.num_params();
  char buf[8];
  std::memcpy(buf, &count, 8);
  out.append(buf, 8);
  std::vector<float> blob(count);
  for (std::size_t i = 0; i < count; ++i) blob[i] = static_cast<float>(ck.model.params()[i]);
  out.append(reinterpret_cast<const char*>(blob.data()), blob.size() * sizeof(float));
  return out;
}

Checkpoint deserialize_checkpoint(const std::string& bytes) {
  const auto nl = bytes.find('\n');
  if (nl == std::string::npos) throw DataError("corrupt checkpoint: missing header");
  json h;
  try {
    h = json::parse(bytes.substr(0, nl));
  } catch (const json::exception& e) {
    throw DataError(std::string("corrupt checkpoint header: ") + e.what());
  }
  try {
    if (h.value("format", std::string()) != kMagic) throw DataError("not an xtalgen checkpoint");
    const int version = h.at("version").get<int>();
    if (version != Checkpoint::kVersion)
      throw DataError("checkpoint version " + std::to_string(version) + " is not supported (expected " +
                      std::to_string(Checkpoint::kVersion) + ")");
    Checkpoint ck;
    ck.version = version;
    ck.model = Denoiser(denoiser_config_from_json(h.at("denoiser")));
    const auto& groups = ck.model.layout().groups();
    const auto& layout = h.at("param_layout");
    if (layout.size() != groups.size()) throw DataError("checkpoint parameter layout does not match the model");
    for (std::size_t g = 0; g < groups.size(); ++g)
      if (layout[g].at("name") != groups[g].name || layout[g].at("offset").get<std::size_t>() != groups[g].offset ||
          layout[g].at("size").get<std::size_t>() != groups[g].size)
        throw DataError("checkpoint parameter layout does not match the model");
    ck.train = train_config_from_json(h.at("train"));
    const auto& te = h.at("text_encoder");
    ck.text = {te.at("kind").get<std::string>(), te.at("dim").get<int>(), te.at("seed").get<std::uint64_t>()};
    const auto& s = h.at("schedules");
    ck.schedules = {ddpm_from_json(s.at("ddpm")), sigma_from_json(s.at("sigma")), d3pm_from_json(s.at("d3pm"))};
    ck.epoch = h.at("epoch").get<int>();
    for (const auto& r : h.at("history")) {
      EpochRecord rec;
      rec.epoch = r.at("epoch").get<int>();
      rec.loss.lattice_loss = r.at("lattice").get<double>();
      rec.loss.coord_loss = r.at("coord").get<double>();
      rec.loss.type_vb_loss = r.at("type_vb").get<double>();
      rec.loss.type_ce_loss = r.at("type_ce").get<double>();
      rec.loss.total = r.at("total").get<double>();
      rec.lr = r.at("lr").get<double>();
      ck.history.push_back(rec);
    }
    for (const auto& p : h.at("num_atoms_hist")) ck.num_atoms_hist[p.at(0).get<int>()] = p.at(1).get<int>();
    ck.rng_state = h.at("rng_state").get<std::string>();
    if (h.contains("provenance")) ck.provenance = h.at("provenance");

    const std::size_t body = nl + 1;
    if (bytes.size() < body + 8) throw DataError("truncated checkpoint: missing parameter count");
    std::uint64_t count = 0;
    std::memcpy(&count, bytes.data() + body, 8);
    if (count != ck.model.num_params())
      throw DataError("checkpoint holds " + std::to_string(count) + " parameters, model needs " +
                      std::to_string(ck.model.num_params()));
    if (bytes.size() != body + 8 + count * sizeof(float))
      throw DataError("truncated checkpoint: parameter blob has the wrong length");
    std::vector<float> blob(count);
    std::memcpy(blob.data(), bytes.data() + body + 8, count * sizeof(float));
    for (std::size_t i = 0; i < count; ++i) {
      if (!std::isfinite(blob[i])) throw DataError("corrupt checkpoint: non-finite parameter");
      ck.model.params()[i] = blob[i];
    }
    return ck;
  } catch (const json::exception& e) {
    throw DataError(std::string("corrupt checkpoint header: ") + e.what());
  } catch (const ConfigError& e) {
    throw DataError(std::string("corrupt checkpoint header: ") + e.what());
  }
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot write checkpoint: " + path.string());
  const std::string bytes = serialize_checkpoint(ckpt);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw DataError("failed writing checkpoint: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open checkpoint: " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return deserialize_checkpoint(ss.str());
}

}  // namespace xtalgen
