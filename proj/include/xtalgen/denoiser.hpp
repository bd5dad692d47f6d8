#pragma once

#include "xtalgen/crystal.hpp"
#include "xtalgen/nn.hpp"

#include <json.hpp>

#include <optional>
#include <string>
#include <vector>

namespace xtalgen {

enum class LatticeFeatureMode {
  Raw,       // the 6 Gram entries as-is
  Volume,    // Gram / |det L|^(2/3)
  TraceLog,  // Gram / (tr/3), plus log(tr/3)
};

LatticeFeatureMode parse_lattice_feature_mode(const std::string& s);
std::string to_string(LatticeFeatureMode m);

struct DenoiserConfig {
  int num_layers = 4;
  int hidden_dim = 512;
  int fourier_freqs = 10;
  int time_embed_dim = 64;
  int text_proj_dim = 64;
  int text_raw_dim = 64;
  int atom_embed_dim = 64;
  int k_classes = kNumTypes;
  std::string activation = "silu";
  LatticeFeatureMode lattice_features = LatticeFeatureMode::TraceLog;
  // eps_L = M1 L + M2 U with U the orthogonal polar factor of L; off leaves M1 L only
  bool lattice_polar = true;
  bool freeze_text_projection = false;
  bool layer_norm = true;  // pre-norm in every layer plus one before the heads
  std::uint64_t seed = 0;

  void validate() const;
};

nlohmann::json to_json(const DenoiserConfig& c);
DenoiserConfig denoiser_config_from_json(const nlohmann::json& j);

// [sin(2 pi m d)]_{m=1..n_f} followed by [cos(2 pi m d)]_{m=1..n_f}
Eigen::RowVectorXd fourier_features(double d, int n_f);
Eigen::RowVectorXd time_embedding(int t, int T, int dim);
// 7 rotation-invariant numbers derived from the Gram matrix L L^T.
Eigen::RowVectorXd lattice_features(const Mat3& lattice, LatticeFeatureMode mode);
// U with L = P U, P symmetric positive semi-definite and U orthogonal.
Mat3 polar_factor(const Mat3& lattice);

struct DenoiserInput {
  std::vector<int> types;  // values in 0..k, k meaning [MASK]
  Coords frac;
  Mat3 lattice = Mat3::Identity();
  int t = 0;
  int T = 1;
  std::optional<Eigen::VectorXd> text;  // raw text vector; empty selects the learned null embedding
};

struct DenoiserOutput {
  Mat3 eps_L = Mat3::Zero();
  RowMat logits;  // N x k
  Coords eps_X;   // N x 3
};

struct DenoiserGrad {
  Mat3 eps_L = Mat3::Zero();
  RowMat logits;
  Coords eps_X;
};

struct DenoiserCache;

class Denoiser {
 public:
  Denoiser() = default;
  explicit Denoiser(const DenoiserConfig& cfg);

  const DenoiserConfig& config() const { return cfg_; }
  const ParamLayout& layout() const { return layout_; }
  std::vector<double>& params() { return params_; }
  const std::vector<double>& params() const { return params_; }
  std::size_t num_params() const { return params_.size(); }
  bool group_frozen(std::size_t group_index) const;

  DenoiserOutput forward(const DenoiserInput& in, DenoiserCache* cache = nullptr) const;
  // Accumulates parameter gradients into grad (size num_params()). Frozen groups receive nothing.
  void backward(const DenoiserCache& cache, const DenoiserGrad& d_out, std::vector<double>& grad) const;

 private:
  struct Layer {
    Linear msg_hi, msg_hj, msg_lat, msg_psi;  // first message layer, split by input block
    Linear msg2;
    Mlp2 update;
    LayerNorm norm;
  };

  DenoiserConfig cfg_;
  Activation act_ = Activation::SiLU;
  ParamLayout layout_;
  std::vector<double> params_;
  Slot atom_table_;
  Mlp2 text_proj_;
  Slot text_null_;
  Linear fusion_;
  std::vector<Layer> layers_;
  LayerNorm final_norm_;
  Mlp2 head_L_, head_A_, head_X_;
  int text_group_ = -1;

  friend Denoiser init_denoiser(const DenoiserConfig& cfg, std::uint64_t seed);
};

Denoiser init_denoiser(const DenoiserConfig& cfg, std::uint64_t seed);

struct DenoiserCache {
  struct LayerCache {
    RowMat h_in;  // after normalisation
    LayerNormCache norm;
    RowMat pre1, a1, pre2;
    RowMat cat;
    Mlp2Cache update;
  };
  int n = 0;
  std::vector<int> types;
  Mat3 lattice = Mat3::Zero();
  Mat3 polar = Mat3::Zero();
  RowMat psi;  // N^2 x 6 n_f, row i*N + j
  RowMat lat_feat;
  bool used_text = false;
  Mlp2Cache text;
  RowMat fused_in;
  std::vector<LayerCache> layers;
  RowMat h_final;
  LayerNormCache final_norm;
  Mlp2Cache head_L, head_A, head_X;
};

}  // namespace xtalgen
