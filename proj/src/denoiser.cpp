#include "xtalgen/denoiser.hpp"

#include "xtalgen/error.hpp"

#include <cmath>
#include <numbers>

namespace xtalgen {

using nlohmann::json;

LatticeFeatureMode parse_lattice_feature_mode(const std::string& s) {
  if (s == "raw") return LatticeFeatureMode::Raw;
  if (s == "volume") return LatticeFeatureMode::Volume;
  if (s == "trace_log") return LatticeFeatureMode::TraceLog;
  throw ConfigError("unknown lattice feature mode '" + s + "'");
}

std::string to_string(LatticeFeatureMode m) {
  switch (m) {
    case LatticeFeatureMode::Raw: return "raw";
    case LatticeFeatureMode::Volume: return "volume";
    case LatticeFeatureMode::TraceLog: break;
  }
  return "trace_log";
}

void DenoiserConfig::validate() const {
  if (num_layers < 1 || hidden_dim < 1 || fourier_freqs < 1 || text_proj_dim < 1 || text_raw_dim < 1 ||
      atom_embed_dim < 1)
    throw ConfigError("denoiser dimensions must be positive");
  if (time_embed_dim < 2 || time_embed_dim % 2 != 0) throw ConfigError("time embedding dimension must be even and >= 2");
  if (k_classes < 2) throw ConfigError("denoiser needs at least 2 type classes");
  parse_activation(activation);
}

json to_json(const DenoiserConfig& c) {
  return {{"num_layers", c.num_layers},
          {"hidden_dim", c.hidden_dim},
          {"fourier_freqs", c.fourier_freqs},
          {"time_embed_dim", c.time_embed_dim},
          {"text_proj_dim", c.text_proj_dim},
          {"text_raw_dim", c.text_raw_dim},
          {"atom_embed_dim", c.atom_embed_dim},
          {"k_classes", c.k_classes},
          {"activation", c.activation},
          {"lattice_features", to_string(c.lattice_features)},
          {"lattice_polar", c.lattice_polar},
          {"freeze_text_projection", c.freeze_text_projection},
          {"layer_norm", c.layer_norm},
          {"seed", c.seed}};
}

DenoiserConfig denoiser_config_from_json(const json& j) {
  DenoiserConfig c;
  c.num_layers = j.value("num_layers", c.num_layers);
  c.hidden_dim = j.value("hidden_dim", c.hidden_dim);
  c.fourier_freqs = j.value("fourier_freqs", c.fourier_freqs);
  c.time_embed_dim = j.value("time_embed_dim", c.time_embed_dim);
  c.text_proj_dim = j.value("text_proj_dim", c.text_proj_dim);
  c.text_raw_dim = j.value("text_raw_dim", c.text_raw_dim);
  c.atom_embed_dim = j.value("atom_embed_dim", c.atom_embed_dim);
  c.k_classes = j.value("k_classes", c.k_classes);
  c.activation = j.value("activation", c.activation);
  c.lattice_features = parse_lattice_feature_mode(j.value("lattice_features", to_string(c.lattice_features)));
  c.lattice_polar = j.value("lattice_polar", c.lattice_polar);
  c.freeze_text_projection = j.value("freeze_text_projection", c.freeze_text_projection);
  c.layer_norm = j.value("layer_norm", c.layer_norm);
  c.seed = j.value("seed", c.seed);
  c.validate();
  return c;
}

Eigen::RowVectorXd fourier_features(double d, int n_f) {
  Eigen::RowVectorXd out(2 * n_f);
  for (int m = 1; m <= n_f; ++m) {
    const double a = 2.0 * std::numbers::pi * m * d;
    out(m - 1) = std::sin(a);
    out(n_f + m - 1) = std::cos(a);
  }
  return out;
}

Eigen::RowVectorXd time_embedding(int t, int T, int dim) {
  if (t < 0 || t > T) throw ConfigError("time step out of range for embedding");
  if (dim < 2 || dim % 2 != 0) throw ConfigError("time embedding dimension must be even");
  const int half = dim / 2;
  Eigen::RowVectorXd out(dim);
  for (int i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(10000.0) * i / half);
    out(i) = std::sin(t * freq);
    out(half + i) = std::cos(t * freq);
  }
  return out;
}

Eigen::RowVectorXd lattice_features(const Mat3& lattice, LatticeFeatureMode mode) {
  const Mat3 g = lattice * lattice.transpose();
  Eigen::RowVectorXd f(7);
  f << g(0, 0), g(1, 1), g(2, 2), g(0, 1), g(0, 2), g(1, 2), 0.0;
  if (mode == LatticeFeatureMode::Volume) {
    const double v = std::max(std::abs(lattice.determinant()), 1e-12);
    f.head(6) /= std::cbrt(v * v);
    f(6) = std::log(v) / 3.0;
  } else if (mode == LatticeFeatureMode::TraceLog) {
    const double s = std::max(g.trace() / 3.0, 1e-12);
    f.head(6) /= s;
    f(6) = std::log(s);
  }
  return f;
}

Mat3 polar_factor(const Mat3& lattice) {
  const Eigen::JacobiSVD<Mat3> svd(lattice, Eigen::ComputeFullU | Eigen::ComputeFullV);
  return svd.matrixU() * svd.matrixV().transpose();
}

Denoiser::Denoiser(const DenoiserConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  act_ = parse_activation(cfg_.activation);
  const int H = cfg_.hidden_dim;
  const int psi_dim = 6 * cfg_.fourier_freqs;

  layout_.begin_group("atom_embedding");
  atom_table_ = layout_.add(cfg_.k_classes + 1, cfg_.atom_embed_dim);
  layout_.begin_group("text_projection");
  text_group_ = static_cast<int>(layout_.groups().size()) - 1;
  text_proj_ = make_mlp2(layout_, cfg_.text_raw_dim, cfg_.text_proj_dim, cfg_.text_proj_dim, false);
  layout_.begin_group("text_null");
  text_null_ = layout_.add(1, cfg_.text_proj_dim);
  layout_.begin_group("fusion");
  fusion_ = make_linear(layout_, cfg_.atom_embed_dim + cfg_.time_embed_dim + cfg_.text_proj_dim, H);
  for (int l = 0; l < cfg_.num_layers; ++l) {
    Layer layer;
    layout_.begin_group("layer" + std::to_string(l) + ".message");
    layer.msg_hi = make_linear(layout_, H, H);
    layer.msg_hj = make_linear(layout_, H, H);
    layer.msg_lat = make_linear(layout_, 7, H);
    layer.msg_psi = make_linear(layout_, psi_dim, H);
    layer.msg2 = make_linear(layout_, H, H);
    layout_.begin_group("layer" + std::to_string(l) + ".update");
    layer.update = make_mlp2(layout_, 2 * H, H, H, true);
    if (cfg_.layer_norm) {
      layout_.begin_group("layer" + std::to_string(l) + ".norm");
      layer.norm = make_layer_norm(layout_, H);
    }
    layers_.push_back(layer);
  }
  if (cfg_.layer_norm) {
    layout_.begin_group("final_norm");
    final_norm_ = make_layer_norm(layout_, H);
  }
  layout_.begin_group("head_lattice");
  head_L_ = make_mlp2(layout_, H, H, cfg_.lattice_polar ? 18 : 9, false);
  layout_.begin_group("head_types");
  head_A_ = make_mlp2(layout_, H, H, cfg_.k_classes, false);
  layout_.begin_group("head_coords");
  head_X_ = make_mlp2(layout_, H, H, 3, false);
  params_.assign(layout_.total(), 0.0);
}

bool Denoiser::group_frozen(std::size_t group_index) const {
  return cfg_.freeze_text_projection && static_cast<int>(group_index) == text_group_;
}

Denoiser init_denoiser(const DenoiserConfig& cfg, std::uint64_t seed) {
  Denoiser d(cfg);
  d.cfg_.seed = seed;
  std::mt19937_64 rng(seed);
  double* p = d.params_.data();
  std::normal_distribution<double> normal;
  for (std::size_t i = 0; i < d.atom_table_.size(); ++i) p[d.atom_table_.offset + i] = normal(rng);
  init_mlp2(d.text_proj_, p, rng);
  for (std::size_t i = 0; i < d.text_null_.size(); ++i) p[d.text_null_.offset + i] = 0.1 * normal(rng);
  init_linear(d.fusion_, p, rng);
  for (const auto& layer : d.layers_) {
    // the four blocks act as one linear layer over the concatenated input
    const double fan_in = 2 * layer.msg_hi.in + layer.msg_lat.in + layer.msg_psi.in;
    for (const Linear* l : {&layer.msg_hi, &layer.msg_hj, &layer.msg_lat, &layer.msg_psi}) {
      init_linear(*l, p, rng);
      const double scale = std::sqrt(l->in / fan_in);
      for (std::size_t i = 0; i < l->w.size(); ++i) p[l->w.offset + i] *= scale;
      for (std::size_t i = 0; i < l->b.size(); ++i) p[l->b.offset + i] *= scale;
    }
    init_linear(layer.msg2, p, rng);
    init_mlp2(layer.update, p, rng);
    if (cfg.layer_norm) init_layer_norm(layer.norm, p);
  }
  if (cfg.layer_norm) init_layer_norm(d.final_norm_, p);
  init_mlp2(d.head_L_, p, rng);
  init_mlp2(d.head_A_, p, rng);
  init_mlp2(d.head_X_, p, rng);
  return d;
}

DenoiserOutput Denoiser::forward(const DenoiserInput& in, DenoiserCache* cache) const {
  const int n = static_cast<int>(in.types.size());
  const int H = cfg_.hidden_dim;
  const int nf = cfg_.fourier_freqs;
  if (n < 1) throw DataError("denoiser input has no atoms");
  if (in.frac.rows() != n) throw DataError("denoiser input: types and coordinates disagree in length");
  if (!in.frac.allFinite() || !in.lattice.allFinite()) throw NumericError("non-finite denoiser input");
  const double* p = params_.data();

  DenoiserCache local;
  DenoiserCache& c = cache ? *cache : local;
  c.n = n;
  c.types = in.types;
  c.lattice = in.lattice;
  c.layers.clear();

  // node inputs: atom embedding | time embedding | projected text
  Eigen::Map<const RowMat> table(p + atom_table_.offset, atom_table_.rows, atom_table_.cols);
  c.fused_in.resize(n, cfg_.atom_embed_dim + cfg_.time_embed_dim + cfg_.text_proj_dim);
  const Eigen::RowVectorXd temb = time_embedding(in.t, in.T, cfg_.time_embed_dim);
  Eigen::RowVectorXd text_vec;
  c.used_text = in.text.has_value();
  if (c.used_text) {
    if (in.text->size() != cfg_.text_raw_dim)
      throw DataError("text embedding has dimension " + std::to_string(in.text->size()) + ", model expects " +
                      std::to_string(cfg_.text_raw_dim));
    RowMat raw = in.text->transpose();
    text_vec = mlp2_forward(text_proj_, act_, p, raw, &c.text).row(0);
  } else {
    text_vec = Eigen::Map<const Eigen::RowVectorXd>(p + text_null_.offset, cfg_.text_proj_dim);
  }
  for (int i = 0; i < n; ++i) {
    const int a = in.types[i];
    if (a < 0 || a > cfg_.k_classes) throw DataError("atom type out of range for denoiser");
    c.fused_in.row(i) << table.row(a), temb, text_vec;
  }
  RowMat h = linear_forward(fusion_, p, c.fused_in);

  c.lat_feat = lattice_features(in.lattice, cfg_.lattice_features);
  c.psi.resize(static_cast<Eigen::Index>(n) * n, 6 * nf);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      for (int k = 0; k < 3; ++k)
        c.psi.row(i * n + j).segment(2 * nf * k, 2 * nf) = fourier_features(in.frac(i, k) - in.frac(j, k), nf);

  for (const auto& layer : layers_) {
    DenoiserCache::LayerCache lc;
    lc.h_in = cfg_.layer_norm ? layer_norm_forward(layer.norm, p, h, &lc.norm) : h;
    const RowMat& hn = lc.h_in;
    const RowMat A = linear_forward(layer.msg_hi, p, hn);
    const RowMat B = linear_forward(layer.msg_hj, p, hn);
    const RowMat G = linear_forward(layer.msg_lat, p, c.lat_feat);
    lc.pre1 = linear_forward(layer.msg_psi, p, c.psi);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) lc.pre1.row(i * n + j) += A.row(i) + B.row(j) + G.row(0);
    lc.a1 = activate(act_, lc.pre1);
    lc.pre2 = linear_forward(layer.msg2, p, lc.a1);
    const RowMat msg = activate(act_, lc.pre2);
    RowMat m = RowMat::Zero(n, H);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) m.row(i) += msg.row(i * n + j);
    lc.cat.resize(n, 2 * H);
    lc.cat << hn, m;
    h += mlp2_forward(layer.update, act_, p, lc.cat, &lc.update);
    c.layers.push_back(std::move(lc));
  }
  if (cfg_.layer_norm) h = layer_norm_forward(final_norm_, p, h, &c.final_norm);
  c.h_final = h;

  DenoiserOutput out;
  const RowMat pooled = h.colwise().mean();
  using RowMat3 = Eigen::Matrix<double, 3, 3, Eigen::RowMajor>;
  const RowMat m = mlp2_forward(head_L_, act_, p, pooled, &c.head_L);
  out.eps_L = Eigen::Map<const RowMat3>(m.data()) * in.lattice;
  if (cfg_.lattice_polar) {
    c.polar = polar_factor(in.lattice);
    out.eps_L += Eigen::Map<const RowMat3>(m.data() + 9) * c.polar;
  }
  out.logits = mlp2_forward(head_A_, act_, p, h, &c.head_A);
  out.eps_X = mlp2_forward(head_X_, act_, p, h, &c.head_X);
  if (!out.eps_L.allFinite() || !out.logits.allFinite() || !out.eps_X.allFinite())
    throw NumericError("denoiser produced non-finite output");
  return out;
}

void Denoiser::backward(const DenoiserCache& c, const DenoiserGrad& d_out, std::vector<double>& grad) const {
  if (grad.size() != params_.size()) throw ConfigError("gradient buffer has the wrong size");
  const int n = c.n;
  const int H = cfg_.hidden_dim;
  const double* p = params_.data();
  // frozen groups are restored after the pass so that nothing leaks into them
  std::vector<double> saved;
  const ParamGroup* frozen = nullptr;
  if (cfg_.freeze_text_projection) {
    frozen = &layout_.groups()[static_cast<std::size_t>(text_group_)];
    saved.assign(grad.begin() + frozen->offset, grad.begin() + frozen->offset + frozen->size);
  }
  double* g = grad.data();

  RowMat dh = RowMat::Zero(n, H);
  {
    using RowMat3 = Eigen::Matrix<double, 3, 3, Eigen::RowMajor>;
    RowMat dm(1, cfg_.lattice_polar ? 18 : 9);
    Eigen::Map<RowMat3>(dm.data()) = d_out.eps_L * c.lattice.transpose();
    if (cfg_.lattice_polar) Eigen::Map<RowMat3>(dm.data() + 9) = d_out.eps_L * c.polar.transpose();
    RowMat d_pooled;
    mlp2_backward(head_L_, act_, p, c.head_L, dm, g, &d_pooled);
    dh.rowwise() += d_pooled.row(0) / n;
  }
  if (d_out.logits.size() > 0) {
    RowMat dx;
    mlp2_backward(head_A_, act_, p, c.head_A, d_out.logits, g, &dx);
    dh += dx;
  }
  if (d_out.eps_X.size() > 0) {
    RowMat dx;
    mlp2_backward(head_X_, act_, p, c.head_X, RowMat(d_out.eps_X), g, &dx);
    dh += dx;
  }
  if (cfg_.layer_norm) {
    RowMat dx;
    layer_norm_backward(final_norm_, p, c.final_norm, dh, g, &dx);
    dh = std::move(dx);
  }

  for (int l = cfg_.num_layers - 1; l >= 0; --l) {
    const Layer& layer = layers_[static_cast<std::size_t>(l)];
    const auto& lc = c.layers[static_cast<std::size_t>(l)];
    RowMat d_cat;
    mlp2_backward(layer.update, act_, p, lc.update, dh, g, &d_cat);
    RowMat dh_in = d_cat.leftCols(H);  // w.r.t. the normalised input
    const RowMat dm = d_cat.rightCols(H);
    RowMat d_msg(static_cast<Eigen::Index>(n) * n, H);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) d_msg.row(i * n + j) = dm.row(i);
    const RowMat d_pre2 = activation_backward(act_, lc.pre2, d_msg);
    RowMat d_a1;
    linear_backward(layer.msg2, p, lc.a1, d_pre2, g, &d_a1);
    const RowMat d_pre1 = activation_backward(act_, lc.pre1, d_a1);
    linear_backward(layer.msg_psi, p, c.psi, d_pre1, g, nullptr);
    RowMat dA = RowMat::Zero(n, H), dB = RowMat::Zero(n, H);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        dA.row(i) += d_pre1.row(i * n + j);
        dB.row(j) += d_pre1.row(i * n + j);
      }
    const RowMat dG = d_pre1.colwise().sum();
    linear_backward(layer.msg_lat, p, c.lat_feat, dG, g, nullptr);
    RowMat dtmp;
    linear_backward(layer.msg_hi, p, lc.h_in, dA, g, &dtmp);
    dh_in += dtmp;
    linear_backward(layer.msg_hj, p, lc.h_in, dB, g, &dtmp);
    dh_in += dtmp;
    if (cfg_.layer_norm) {
      layer_norm_backward(layer.norm, p, lc.norm, dh_in, g, &dtmp);
      dh += dtmp;
    } else {
      dh += dh_in;
    }
  }

  RowMat d_fused;
  linear_backward(fusion_, p, c.fused_in, dh, g, &d_fused);
  const int ea = cfg_.atom_embed_dim, et = cfg_.time_embed_dim, ed = cfg_.text_proj_dim;
  Eigen::Map<RowMat> g_table(g + atom_table_.offset, atom_table_.rows, atom_table_.cols);
  for (int i = 0; i < n; ++i) g_table.row(c.types[static_cast<std::size_t>(i)]) += d_fused.row(i).head(ea);
  const RowMat d_text = d_fused.middleCols(ea + et, ed).colwise().sum();
  if (c.used_text) {
    mlp2_backward(text_proj_, act_, p, c.text, d_text, g, nullptr);
  } else {
    Eigen::Map<Eigen::RowVectorXd>(g + text_null_.offset, ed) += d_text.row(0);
  }
  if (frozen) std::copy(saved.begin(), saved.end(), grad.begin() + frozen->offset);
}

}  // namespace xtalgen
