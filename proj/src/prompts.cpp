#include "xtalgen/prompts.hpp"

#include "xtalgen/dataset_io.hpp"
#include "xtalgen/elements.hpp"
#include "xtalgen/error.hpp"

#include <json.hpp>

#include <cctype>
#include <cmath>
#include <fstream>
#include <iostream>
#include <regex>
#include <sstream>

namespace xtalgen {

using nlohmann::json;

namespace {

constexpr double kZeroTol = 1e-6;

const char* kPreamble = "Below is a description of a bulk material.";

std::string join(const std::vector<std::string>& parts, const std::string& sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out += sep;
    out += parts[i];
  }
  return out;
}

std::string trim(std::string s) {
  auto issp = [](unsigned char ch) { return std::isspace(ch) != 0; };
  while (!s.empty() && issp(static_cast<unsigned char>(s.back()))) s.pop_back();
  std::size_t i = 0;
  while (i < s.size() && issp(static_cast<unsigned char>(s[i]))) ++i;
  return s.substr(i);
}

std::optional<double> as_number(const std::string& s) {
  try {
    std::size_t used = 0;
    double v = std::stod(s, &used);
    if (used != s.size()) return std::nullopt;
    return v;
  } catch (const std::exception&) {
    return std::nullopt;
  }
}

EnergySign parse_energy_word(const std::string& w) {
  if (w == "negative") return EnergySign::Negative;
  if (w == "positive") return EnergySign::Positive;
  if (w == "zero") return EnergySign::Zero;
  if (auto v = as_number(w)) return energy_sign_of(*v);
  return EnergySign::Unspecified;
}

GapSign parse_gap_word(const std::string& w) {
  if (w == "zero") return GapSign::Zero;
  if (w == "nonzero" || w == "non-zero") return GapSign::Nonzero;
  if (auto v = as_number(w)) return gap_sign_of(*v);
  return GapSign::Unspecified;
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t fnv1a(std::string_view s, std::uint64_t seed) {
  std::uint64_t h = 0xcbf29ce484222325ULL ^ splitmix64(seed);
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

std::string to_string(EnergySign s) {
  switch (s) {
    case EnergySign::Negative: return "negative";
    case EnergySign::Positive: return "positive";
    case EnergySign::Zero: return "zero";
    case EnergySign::Unspecified: break;
  }
  return "unspecified";
}

std::string to_string(GapSign s) {
  switch (s) {
    case GapSign::Zero: return "zero";
    case GapSign::Nonzero: return "nonzero";
    case GapSign::Unspecified: break;
  }
  return "unspecified";
}

EnergySign energy_sign_of(double v) {
  if (std::abs(v) <= kZeroTol) return EnergySign::Zero;
  return v < 0 ? EnergySign::Negative : EnergySign::Positive;
}

GapSign gap_sign_of(double v) { return std::abs(v) <= kZeroTol ? GapSign::Zero : GapSign::Nonzero; }

PromptConstraints constraints_from_meta(const CrystalMeta& meta) {
  if (!meta.formula || meta.formula->empty()) throw DataError("prompt requires a formula");
  PromptConstraints c;
  c.formula = *meta.formula;
  c.elements = meta.elements.empty() ? formula_elements(*meta.formula) : meta.elements;
  if (meta.formation_energy) c.formation_energy_sign = energy_sign_of(*meta.formation_energy);
  if (meta.band_gap) c.band_gap_sign = gap_sign_of(*meta.band_gap);
  if (meta.e_above_hull) c.e_above_hull_sign = gap_sign_of(*meta.e_above_hull);
  c.spacegroup = meta.spacegroup;
  c.crystal_system = meta.crystal_system;
  return c;
}

std::string make_short_prompt(const CrystalMeta& meta) {
  const PromptConstraints c = constraints_from_meta(meta);
  std::ostringstream os;
  os << kPreamble << " The chemical formula is " << c.formula << ". The elements are " << join(c.elements, ", ")
     << ".";
  if (c.formation_energy_sign != EnergySign::Unspecified)
    os << " The formation energy is " << to_string(c.formation_energy_sign) << ".";
  if (c.band_gap_sign != GapSign::Unspecified) os << " The band gap is " << to_string(c.band_gap_sign) << ".";
  if (c.e_above_hull_sign != GapSign::Unspecified)
    os << " The energy above the convex hull is " << to_string(c.e_above_hull_sign) << ".";
  if (c.spacegroup) os << " The spacegroup number is " << *c.spacegroup << ".";
  if (c.crystal_system) os << " The crystal system is " << *c.crystal_system << ".";
  os << " Generate the material.";
  return os.str();
}

PromptConstraints parse_prompt(std::string_view text_view) {
  const std::string text(text_view);
  // A value ends at the sentence period: a '.' followed by whitespace or end of text.
  static const std::regex formula_re(R"(The chemical formula is ([A-Za-z0-9()\[\]]+)\.(?:\s|$))");
  static const std::regex elements_re(R"(The elements are (.+?)\.(?:\s|$))");
  static const std::regex formation_re(R"(The formation energy (?:per atom )?is (\S+?)\.(?:\s|$))");
  static const std::regex gap_re(R"(The band gap is (\S+?)\.(?:\s|$))");
  static const std::regex hull_re(R"(The energy above the convex hull is (\S+?)\.(?:\s|$))");
  static const std::regex sg_re(R"(The spacegroup number is (\d+)\.?)");
  static const std::regex system_re(R"(The crystal system is ([A-Za-z]+)\.?)");

  PromptConstraints c;
  std::smatch m;
  if (!std::regex_search(text, m, formula_re)) throw DataError("prompt has no chemical formula clause");
  c.formula = m[1];
  if (std::regex_search(text, m, elements_re)) {
    std::string list = std::regex_replace(std::string(m[1]), std::regex(R"(\band\b)"), ",");
    std::stringstream ss(list);
    for (std::string item; std::getline(ss, item, ',');) {
      item = trim(item);
      if (!item.empty()) c.elements.push_back(item);
    }
  } else {
    c.elements = formula_elements(c.formula);
  }
  if (std::regex_search(text, m, formation_re)) c.formation_energy_sign = parse_energy_word(m[1]);
  if (std::regex_search(text, m, gap_re)) c.band_gap_sign = parse_gap_word(m[1]);
  if (std::regex_search(text, m, hull_re)) c.e_above_hull_sign = parse_gap_word(m[1]);
  if (std::regex_search(text, m, sg_re)) c.spacegroup = std::stoi(m[1]);
  if (std::regex_search(text, m, system_re)) {
    std::string s = m[1];
    for (auto& ch : s) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    c.crystal_system = s;
  }
  return c;
}

std::vector<double> encode_text_hash(std::string_view text, int dim, std::uint64_t seed) {
  if (dim < 8) throw ConfigError("hash encoder dimension must be at least 8");
  std::vector<double> v(static_cast<std::size_t>(dim), 0.0);
  std::string token;
  int n_tokens = 0;
  auto flush = [&] {
    if (token.empty()) return;
    const std::uint64_t h = fnv1a(token, seed);
    const std::uint64_t h1 = splitmix64(h), h2 = splitmix64(h ^ 0xa5a5a5a5a5a5a5a5ULL);
    v[h1 % static_cast<std::uint64_t>(dim)] += (h1 >> 63) ? -1.0 : 1.0;
    v[h2 % static_cast<std::uint64_t>(dim)] += (h2 >> 63) ? -1.0 : 1.0;
    ++n_tokens;
    token.clear();
  };
  for (char ch : text) {
    const auto u = static_cast<unsigned char>(ch);
    if (std::isalnum(u))
      token.push_back(static_cast<char>(std::tolower(u)));
    else
      flush();
  }
  flush();
  if (n_tokens == 0) {
    std::cerr << "warning: empty prompt text encodes to the zero vector\n";
    return v;
  }
  double norm = 0;
  for (double x : v) norm += x * x;
  norm = std::sqrt(norm);
  if (norm > 0)
    for (double& x : v) x /= norm;
  return v;
}

void EmbeddingTable::insert(const std::string& id, std::vector<double> vec) {
  if (vec.empty()) throw DataError("embedding '" + id + "' is empty");
  if (dim_ == 0) dim_ = static_cast<int>(vec.size());
  if (static_cast<int>(vec.size()) != dim_)
    throw DataError("embedding '" + id + "' has dimension " + std::to_string(vec.size()) + ", expected " +
                    std::to_string(dim_));
  for (double x : vec)
    if (!std::isfinite(x)) throw DataError("embedding '" + id + "' has non-finite entries");
  if (!vectors_.emplace(id, std::move(vec)).second) throw DataError("duplicate embedding id '" + id + "'");
}

const std::vector<double>& EmbeddingTable::at(const std::string& id) const {
  auto it = vectors_.find(id);
  if (it == vectors_.end()) throw DataError("no embedding for prompt id '" + id + "'");
  return it->second;
}

EmbeddingTable parse_external_embeddings(std::string_view text) {
  EmbeddingTable table;
  std::istringstream in{std::string(text)};
  int lineno = 0;
  for (std::string line; std::getline(in, line);) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      json j = json::parse(line);
      if (is_provenance_line(j)) continue;
      table.insert(j.at("id").get<std::string>(), j.at("vector").get<std::vector<double>>());
    } catch (const json::exception& e) {
      throw DataError("embedding line " + std::to_string(lineno) + ": " + e.what());
    } catch (const DataError& e) {
      throw DataError("embedding line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return table;
}

EmbeddingTable load_external_embeddings(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot open embeddings: " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_external_embeddings(ss.str());
}

std::vector<PromptEntry> parse_prompts(std::string_view text) {
  std::vector<PromptEntry> out;
  std::istringstream in{std::string(text)};
  int lineno = 0;
  for (std::string line; std::getline(in, line);) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      json j = json::parse(line);
      if (is_provenance_line(j)) continue;
      PromptEntry e;
      e.id = j.at("id").get<std::string>();
      e.text = j.at("text").get<std::string>();
      if (auto it = j.find("types"); it != j.end() && !it->is_null()) e.types = it->get<std::vector<int>>();
      out.push_back(std::move(e));
    } catch (const json::exception& e) {
      throw DataError("prompt line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

std::vector<PromptEntry> read_prompts(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot open prompts: " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_prompts(ss.str());
}

}  // namespace xtalgen
