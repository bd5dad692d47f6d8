#pragma once

#include "xtalgen/crystal.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace xtalgen {

enum class EnergySign { Unspecified, Negative, Positive, Zero };
enum class GapSign { Unspecified, Zero, Nonzero };

// Fields carried by a short prompt.
struct PromptConstraints {
  std::string formula;
  std::vector<std::string> elements;
  EnergySign formation_energy_sign = EnergySign::Unspecified;
  GapSign band_gap_sign = GapSign::Unspecified;
  GapSign e_above_hull_sign = GapSign::Unspecified;
  std::optional<int> spacegroup;
  std::optional<std::string> crystal_system;

  bool operator==(const PromptConstraints&) const = default;
};

// One line of a prompt JSONL file. `types` is required for structure prediction.
struct PromptEntry {
  std::string id;
  std::string text;
  std::optional<std::vector<int>> types;
};

std::string to_string(EnergySign s);
std::string to_string(GapSign s);

EnergySign energy_sign_of(double value);
GapSign gap_sign_of(double value);

PromptConstraints constraints_from_meta(const CrystalMeta& meta);
std::string make_short_prompt(const CrystalMeta& meta);
PromptConstraints parse_prompt(std::string_view text);

inline constexpr int kDefaultTextDim = 64;

// Feature-hashed bag of tokens, L2-normalised. Tokens are the lowercase
// alphanumeric runs of the text. Empty text yields the zero vector.
std::vector<double> encode_text_hash(std::string_view text, int dim = kDefaultTextDim, std::uint64_t seed = 0);

// Precomputed embeddings keyed by prompt id; all vectors share one dimension.
class EmbeddingTable {
 public:
  EmbeddingTable() = default;
  void insert(const std::string& id, std::vector<double> vec);
  const std::vector<double>& at(const std::string& id) const;
  bool contains(const std::string& id) const { return vectors_.count(id) != 0; }
  int dim() const { return dim_; }
  std::size_t size() const { return vectors_.size(); }

 private:
  int dim_ = 0;
  std::map<std::string, std::vector<double>> vectors_;
};

// Lines of {"id": str, "vector": [float...]}.
EmbeddingTable load_external_embeddings(const std::filesystem::path& path);
EmbeddingTable parse_external_embeddings(std::string_view text);

std::vector<PromptEntry> read_prompts(const std::filesystem::path& path);
std::vector<PromptEntry> parse_prompts(std::string_view text);

}  // namespace xtalgen
