#pragma once

#include "xtalgen/crystal.hpp"
#include "xtalgen/denoiser.hpp"
#include "xtalgen/diffusion.hpp"
#include "xtalgen/schedules.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace xtalgen {

enum class Task { Gen, Csp };

std::string to_string(Task t);
Task parse_task(const std::string& s);

struct TrainConfig {
  int epochs = 500;
  int batch_size = 512;  // clamped to the dataset size
  double lambda_lattice = 1.0;
  double lambda_type = 1.0;
  double lambda_coord = 10.0;
  double lambda_ce = 0.01;
  std::string optimizer = "adam";
  double lr = 1e-3;
  std::string lr_schedule = "plateau";  // "constant", or "cosine" from lr down to min_lr
  double plateau_factor = 0.6;
  int plateau_patience = 30;
  double min_lr = 1e-4;
  double grad_clip = 0.0;  // global norm; 0 disables
  std::uint64_t seed = 0;
  int T = 500;
  bool deterministic = true;
  Task task = Task::Gen;
  CoordWeighting coord_weighting = CoordWeighting::Sigma2;
  double text_dropout = 0.1;
  DDPMKind ddpm_kind = DDPMKind::Cosine;
  double ddpm_beta_max = 0.5;  // cap on cosine betas
  double sigma_min = 0.005;
  double sigma_max = 0.5;
  MaskScheduleKind mask_schedule = MaskScheduleKind::Uniform;
  int k_max = 5;

  void validate() const;
  LossWeights loss_weights() const { return {lambda_lattice, lambda_type, lambda_coord, lambda_ce}; }
};

nlohmann::json to_json(const TrainConfig& c);
// Unknown keys are rejected.
TrainConfig train_config_from_json(const nlohmann::json& j);

struct Schedules {
  DDPMSchedule ddpm;
  SigmaSchedule sigma;
  D3PMSchedule d3pm;
};

Schedules make_schedules(const TrainConfig& cfg, int k_classes);

// How prompt text becomes the raw vector fed to the denoiser.
struct TextEncoderSpec {
  std::string kind = "hash";  // "hash" or "external"
  int dim = 64;
  std::uint64_t seed = 0;
};

struct EpochRecord {
  int epoch = 0;
  LossBreakdown loss;
  double lr = 0;
};

struct Checkpoint {
  static constexpr int kVersion = 1;
  int version = kVersion;
  Schedules schedules;
  Denoiser model;
  TrainConfig train;
  TextEncoderSpec text;
  std::string rng_state;
  int epoch = 0;
  std::vector<EpochRecord> history;
  std::map<int, int> num_atoms_hist;  // N -> count in the training set
  nlohmann::json provenance;           // written to the header when not null
};

struct TrainingExample {
  Crystal crystal;
  std::optional<Eigen::VectorXd> text;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

// Parameters of the returned checkpoint are rounded to float32 so that the
// in-memory model and a saved/loaded copy behave identically.
Checkpoint train(const std::vector<TrainingExample>& data, const TrainConfig& cfg, const DenoiserConfig& model_cfg,
                 const TextEncoderSpec& text = {}, const EpochCallback& on_epoch = {});

struct SampleLoss {
  LossBreakdown loss;
  DenoiserGrad grad;  // d total / d outputs
};

// Corrupts one example at time t with the given noise and evaluates the
// weighted loss of the network's prediction.
SampleLoss sample_loss(const Denoiser& model, const Schedules& sched, const TrainConfig& cfg, const Crystal& x0,
                       const std::optional<Eigen::VectorXd>& text, int t, const NoiseDraws& noise,
                       DenoiserCache* cache);

// Score estimate from the coordinate head under the configured parameterisation.
Coords coord_score_from_output(const Coords& raw, double sigma, CoordWeighting w);

enum class TypeStrategy { D3pmAncestral, Alg2Softmax };

std::string to_string(TypeStrategy s);
TypeStrategy parse_type_strategy(const std::string& s);

// One reverse step for the atom types from time t to t_prev < t.
std::vector<int> type_update(const RowMat& logits, const std::vector<int>& a_t, int t, int t_prev,
                             const D3PMSchedule& d3pm, TypeStrategy strategy, double sigma_t, std::mt19937_64& rng);

struct SampleOptions {
  Task mode = Task::Gen;
  int num_atoms = 0;                           // gen mode
  std::optional<std::vector<int>> fixed_types;  // csp mode
  int steps = 0;                               // 0: all T steps
  TypeStrategy strategy = TypeStrategy::D3pmAncestral;
  double step_size = 1e-5;
  std::uint64_t seed = 0;
  std::optional<Eigen::VectorXd> text;
  // Called after every reverse step with the new state at time t_prev.
  std::function<void(int t_prev, const Mat3& lattice, const Coords& frac, const std::vector<int>& types)> on_step;
};

struct SampleResult {
  std::optional<Crystal> crystal;  // empty when the final lattice is degenerate
  bool lattice_resampled = false;
  std::vector<double> step_seconds;
  double total_seconds = 0;
};

// Decreasing time grid T = tau_0 > ... > tau_S = 0.
std::vector<int> time_grid(int T, int steps);

SampleResult sample(const Checkpoint& ckpt, const SampleOptions& opt);

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index);

// Gen-mode atom count: from the prompt's formula when it parses, otherwise
// drawn from the training distribution.
int choose_num_atoms(const Checkpoint& ckpt, const std::string& prompt_text, std::mt19937_64& rng);

Eigen::VectorXd embed_prompt(const TextEncoderSpec& spec, const std::string& text);

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);
std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(const std::string& bytes);

}  // namespace xtalgen
