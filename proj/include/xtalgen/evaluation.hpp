#pragma once

#include "xtalgen/crystal.hpp"
#include "xtalgen/prompts.hpp"

#include <json.hpp>

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace xtalgen {

struct MatcherConfig {
  double ltol = 0.3;        // relative length tolerance
  double stol = 0.5;        // site tolerance in units of (V/N)^(1/3)
  double angle_tol = 10.0;  // degrees

  void validate() const;
};

struct MatchResult {
  double rmse = 0;          // normalised by (V/N)^(1/3)
  double max_displacement = 0;
};

// Structure matching up to permutation, rotation, translation and choice of
// periodic cell. Compositions must agree as multisets; no supercells.
std::optional<MatchResult> match_structures(const Crystal& gen, const Crystal& ref, const MatcherConfig& cfg = {});

// The {-1,0,1} integer matrices with determinant +1, in a fixed order.
const std::vector<IMat3>& small_unimodular_matrices();

// Whether two cells agree in lengths (relative to their mean) and angles.
bool lattices_compatible(const Mat3& a, const Mat3& b, const MatcherConfig& cfg);

struct MatchRate {
  double match_rate = 0;  // percent of references with at least one match
  double mean_rmse = 0;   // over matched references; 0 when none matched
  int matched = 0;
  int total = 0;
};

// gens[i] holds the candidates for refs[i]; empty optionals are failed samples.
MatchRate match_rate(const std::vector<std::vector<std::optional<Crystal>>>& gens, const std::vector<Crystal>& refs,
                     const MatcherConfig& cfg = {});

// Strict: every interatomic distance, periodic self-images included, exceeds the cutoff.
bool structural_validity(const Crystal& c, double cutoff = 0.5);

enum class CompValidity { Valid, Invalid, Indeterminate, NotApplicable };

std::string to_string(CompValidity v);

// Charge neutrality with one oxidation state per element. Single-element
// cells are NotApplicable; elements without tabulated states are Indeterminate.
CompValidity compositional_validity(const Crystal& c);

struct CoverageConfig {
  double struct_thresh = 0.3;
  double comp_thresh = 0.25;
  double cutoff = 6.0;
  int bins = 40;
};

struct Fingerprint {
  Eigen::VectorXd composition;  // kNumTypes element fractions
  Eigen::VectorXd structure;    // L2-normalised pair-distance histogram
};

Fingerprint fingerprint(const Crystal& c, const CoverageConfig& cfg = {});

struct Coverage {
  double recall = 0;     // COV-R, percent
  double precision = 0;  // COV-P, percent
};

Coverage coverage(const std::vector<Crystal>& gens, const std::vector<Crystal>& refs, const CoverageConfig& cfg = {});

// Exact 1-D earth mover's distance between empirical distributions.
double emd_1d(std::vector<double> a, std::vector<double> b);

double density(const Crystal& c);  // g/cm^3
int num_elements(const Crystal& c);

// Returns a property value for a crystal, or nothing when it cannot.
using PropertyPredictor = std::function<std::optional<double>(const Crystal&, const std::string& property)>;

// Keys: "density", "num_elements", "formation_energy". Empty values mean unavailable.
std::map<std::string, std::optional<double>> property_stats(const std::vector<Crystal>& gens,
                                                            const std::vector<Crystal>& refs,
                                                            const PropertyPredictor& predictor = {});

enum class FieldCheck { Match, Mismatch, Unsupported, Skipped };

std::string to_string(FieldCheck f);

// Only fields present in the constraints appear in the result.
std::map<std::string, FieldCheck> prompt_correctness(const Crystal& gen, const PromptConstraints& constraints,
                                                     const PropertyPredictor& predictor = {});

struct EvalReport {
  std::optional<double> match_rate;
  std::optional<double> mean_rmse;
  double struct_validity = 0;
  std::optional<double> comp_validity;  // empty for elemental sets
  int comp_indeterminate = 0;
  std::optional<double> cov_r, cov_p;
  std::map<std::string, std::optional<double>> emd;
  std::map<std::string, double> correctness;       // field -> percent matched among checked samples
  std::map<std::string, std::string> unchecked;    // field -> "unsupported" or "skipped"
  std::map<std::string, double> timings;
  int num_generated = 0;
  int num_failed = 0;  // samples without a usable structure
  int num_references = 0;
};

nlohmann::json to_json(const EvalReport& r);
// name,value,count rows.
std::string to_csv(const EvalReport& r);

struct EvalInputs {
  // Generated structures keyed by reference index; for unconditional sets a
  // single group may hold everything.
  std::vector<std::vector<std::optional<Crystal>>> gens;
  std::vector<Crystal> refs;
  std::vector<std::optional<PromptConstraints>> prompts;  // parallel to gens, may be empty
  bool csp = false;  // compute match rate (needs gens parallel to refs)
};

EvalReport evaluate(const EvalInputs& in, const MatcherConfig& mcfg = {}, const CoverageConfig& ccfg = {},
                    const PropertyPredictor& predictor = {});

}  // namespace xtalgen
