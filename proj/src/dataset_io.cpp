#include "xtalgen/dataset_io.hpp"

#include "xtalgen/elements.hpp"
#include "xtalgen/error.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <sstream>

namespace xtalgen {

using nlohmann::json;
using nlohmann::ordered_json;

ordered_json crystal_to_json(const Crystal& c) {
  ordered_json j;
  j["id"] = c.id();
  j["atom_types"] = c.atom_types();
  ordered_json frac = ordered_json::array();
  for (Eigen::Index i = 0; i < c.frac_coords().rows(); ++i)
    frac.push_back({c.frac_coords()(i, 0), c.frac_coords()(i, 1), c.frac_coords()(i, 2)});
  j["frac_coords"] = std::move(frac);
  ordered_json lat = ordered_json::array();
  for (int r = 0; r < 3; ++r) lat.push_back({c.lattice()(r, 0), c.lattice()(r, 1), c.lattice()(r, 2)});
  j["lattice"] = std::move(lat);

  ordered_json meta = ordered_json::object();
  const auto& m = c.meta();
  if (m.formula) meta["formula"] = *m.formula;
  if (!m.elements.empty()) meta["elements"] = m.elements;
  if (m.spacegroup) meta["spacegroup"] = *m.spacegroup;
  if (m.crystal_system) meta["crystal_system"] = *m.crystal_system;
  if (m.formation_energy) meta["formation_energy"] = *m.formation_energy;
  if (m.band_gap) meta["band_gap"] = *m.band_gap;
  if (m.e_above_hull) meta["e_above_hull"] = *m.e_above_hull;
  j["meta"] = std::move(meta);
  return j;
}

namespace {

template <typename T>
std::optional<T> opt_field(const json& obj, const char* key) {
  auto it = obj.find(key);
  if (it == obj.end() || it->is_null()) return std::nullopt;
  return it->get<T>();
}

}  // namespace

Crystal crystal_from_json(const json& j) {
  if (!j.is_object()) throw DataError("crystal record must be a JSON object");
  for (const char* key : {"atom_types", "frac_coords", "lattice"})
    if (!j.contains(key)) throw DataError(std::string("crystal record is missing '") + key + "'");
  try {
    auto types = j.at("atom_types").get<std::vector<int>>();
    const auto& fc = j.at("frac_coords");
    if (!fc.is_array()) throw DataError("frac_coords must be an array");
    Coords x(static_cast<Eigen::Index>(fc.size()), 3);
    for (std::size_t i = 0; i < fc.size(); ++i) {
      auto row = fc[i].get<std::vector<double>>();
      if (row.size() != 3) throw DataError("each frac_coords row must have 3 entries");
      for (int d = 0; d < 3; ++d) x(static_cast<Eigen::Index>(i), d) = row[d];
    }
    const auto& lj = j.at("lattice");
    if (!lj.is_array() || lj.size() != 3) throw DataError("lattice must be a 3x3 array");
    Mat3 lat;
    for (int r = 0; r < 3; ++r) {
      auto row = lj[r].get<std::vector<double>>();
      if (row.size() != 3) throw DataError("lattice must be a 3x3 array");
      for (int c = 0; c < 3; ++c) lat(r, c) = row[c];
    }
    CrystalMeta meta;
    if (auto it = j.find("meta"); it != j.end() && !it->is_null()) {
      const auto& m = *it;
      if (!m.is_object()) throw DataError("meta must be an object");
      meta.formula = opt_field<std::string>(m, "formula");
      meta.spacegroup = opt_field<int>(m, "spacegroup");
      meta.crystal_system = opt_field<std::string>(m, "crystal_system");
      meta.formation_energy = opt_field<double>(m, "formation_energy");
      meta.band_gap = opt_field<double>(m, "band_gap");
      meta.e_above_hull = opt_field<double>(m, "e_above_hull");
      if (auto el = opt_field<std::vector<std::string>>(m, "elements")) meta.elements = *el;
    }
    std::string id = j.contains("id") ? j.at("id").get<std::string>() : std::string{};
    return Crystal(std::move(types), std::move(x), lat, std::move(meta), std::move(id));
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed crystal record: ") + e.what());
  }
}

bool is_provenance_line(const json& j) { return j.is_object() && j.size() == 1 && j.contains("provenance"); }

std::vector<Crystal> parse_jsonl_dataset(std::string_view text) {
  std::vector<Crystal> out;
  std::istringstream in{std::string(text)};
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      json j = json::parse(line);
      if (is_provenance_line(j)) continue;
      out.push_back(crystal_from_json(j));
    } catch (const json::exception& e) {
      throw DataError("line " + std::to_string(lineno) + ": invalid JSON: " + e.what());
    } catch (const DataError& e) {
      throw DataError("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

std::vector<Crystal> read_jsonl_dataset(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot open dataset: " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  try {
    return parse_jsonl_dataset(ss.str());
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

std::string format_jsonl_dataset(const std::vector<Crystal>& crystals) {
  std::string out;
  for (const auto& c : crystals) {
    out += crystal_to_json(c).dump();
    out += '\n';
  }
  return out;
}

void write_jsonl_dataset(const std::filesystem::path& path, const std::vector<Crystal>& crystals,
                         const ordered_json& provenance) {
  std::ofstream f(path);
  if (!f) throw DataError("cannot write dataset: " + path.string());
  if (!provenance.is_null()) f << ordered_json{{"provenance", provenance}}.dump() << '\n';
  f << format_jsonl_dataset(crystals);
}

// ---------------------------------------------------------------------------
// CIF subset

namespace {

[[noreturn]] void unsupported(const std::string& what) { throw DataError("unsupported CIF feature: " + what); }

std::vector<std::string> cif_tokens(const std::string& line) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    if (i >= line.size()) break;
    if (line[i] == '#') break;
    if (line[i] == '\'' || line[i] == '"') {
      const char q = line[i++];
      std::size_t end = line.find(q, i);
      if (end == std::string::npos) throw DataError("unterminated quoted CIF value");
      out.push_back(line.substr(i, end - i));
      i = end + 1;
    } else {
      std::size_t start = i;
      while (i < line.size() && !std::isspace(static_cast<unsigned char>(line[i]))) ++i;
      out.push_back(line.substr(start, i - start));
    }
  }
  return out;
}

double cif_number(const std::string& v, const std::string& key) {
  std::string s = v.substr(0, v.find('('));  // drop standard uncertainty
  try {
    std::size_t used = 0;
    double d = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return d;
  } catch (const std::exception&) {
    throw DataError("CIF value for " + key + " is not a number: '" + v + "'");
  }
}

std::string lower(std::string s) {
  for (auto& ch : s) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  return s;
}

bool is_identity_op(std::string op) {
  op.erase(std::remove_if(op.begin(), op.end(), [](unsigned char ch) { return std::isspace(ch); }), op.end());
  return lower(op) == "x,y,z";
}

std::string symbol_from_type(const std::string& t) {
  std::string sym;
  for (char ch : t) {
    if (std::isalpha(static_cast<unsigned char>(ch)))
      sym.push_back(ch);
    else
      break;
  }
  return sym;
}

}  // namespace

Crystal parse_cif_min(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }

  std::map<std::string, std::string> scalars;
  std::vector<std::string> site_headers;
  std::vector<std::vector<std::string>> site_rows;
  int data_blocks = 0;

  std::size_t i = 0;
  while (i < lines.size()) {
    const std::string& raw = lines[i];
    if (!raw.empty() && raw[0] == ';') unsupported("multi-line text field outside a recognised key");
    auto toks = cif_tokens(raw);
    if (toks.empty()) {
      ++i;
      continue;
    }
    const std::string head = lower(toks[0]);
    if (head.rfind("data_", 0) == 0) {
      if (++data_blocks > 1) unsupported("multiple data blocks");
      ++i;
      continue;
    }
    if (head == "loop_") {
      std::vector<std::string> headers;
      ++i;
      while (i < lines.size()) {
        auto t = cif_tokens(lines[i]);
        if (t.size() == 1 && t[0][0] == '_') {
          headers.push_back(lower(t[0]));
          ++i;
        } else {
          break;
        }
      }
      std::vector<std::string> values;
      while (i < lines.size()) {
        auto t = cif_tokens(lines[i]);
        if (!t.empty() && (t[0][0] == '_' || lower(t[0]) == "loop_" || lower(t[0]).rfind("data_", 0) == 0)) break;
        if (!lines[i].empty() && lines[i][0] == ';') unsupported("multi-line text field in loop");
        values.insert(values.end(), t.begin(), t.end());
        ++i;
      }
      if (headers.empty()) throw DataError("CIF loop_ without headers");
      if (values.size() % headers.size() != 0) throw DataError("CIF loop has a ragged value table");
      const std::size_t nrows = values.size() / headers.size();

      const bool is_symop = std::any_of(headers.begin(), headers.end(), [](const std::string& h) {
        return h.find("symop") != std::string::npos || h.find("symmetry_equiv") != std::string::npos;
      });
      const bool is_site = std::any_of(headers.begin(), headers.end(),
                                       [](const std::string& h) { return h.rfind("_atom_site_", 0) == 0; });
      if (is_symop) {
        auto col = std::find_if(headers.begin(), headers.end(), [](const std::string& h) {
          return h.find("xyz") != std::string::npos;
        });
        if (col == headers.end()) unsupported("symmetry-operation loop");
        const std::size_t c = static_cast<std::size_t>(col - headers.begin());
        for (std::size_t r = 0; r < nrows; ++r)
          if (!is_identity_op(values[r * headers.size() + c])) unsupported("symmetry-operation expansion");
      } else if (is_site) {
        if (!site_headers.empty()) unsupported("more than one atom_site loop");
        site_headers = headers;
        for (std::size_t r = 0; r < nrows; ++r)
          site_rows.emplace_back(values.begin() + static_cast<long>(r * headers.size()),
                                 values.begin() + static_cast<long>((r + 1) * headers.size()));
      }
      continue;
    }
    if (head[0] == '_') {
      std::string value;
      if (toks.size() >= 2) {
        value = toks[1];
        ++i;
      } else if (i + 1 < lines.size() && !lines[i + 1].empty() && lines[i + 1][0] == ';') {
        // multi-line text value: skip it
        i += 2;
        while (i < lines.size() && (lines[i].empty() || lines[i][0] != ';')) ++i;
        ++i;
      } else if (i + 1 < lines.size()) {
        auto next = cif_tokens(lines[i + 1]);
        if (!next.empty()) value = next[0];
        i += 2;
      } else {
        ++i;
      }
      if (head.find("symop") != std::string::npos || head.find("symmetry_equiv") != std::string::npos) {
        if (!is_identity_op(value)) unsupported("symmetry-operation expansion");
      }
      scalars[head] = value;
      continue;
    }
    ++i;
  }

  LatticeParams p;
  const std::pair<const char*, double*> cell[] = {
      {"_cell_length_a", &p.a},        {"_cell_length_b", &p.b},       {"_cell_length_c", &p.c},
      {"_cell_angle_alpha", &p.alpha}, {"_cell_angle_beta", &p.beta}, {"_cell_angle_gamma", &p.gamma}};
  for (const auto& [key, dst] : cell) {
    auto it = scalars.find(key);
    if (it == scalars.end()) throw DataError(std::string("CIF is missing ") + key);
    *dst = cif_number(it->second, key);
  }
  if (site_headers.empty()) throw DataError("CIF has no atom_site loop");

  auto col = [&](const char* name) -> int {
    auto it = std::find(site_headers.begin(), site_headers.end(), name);
    return it == site_headers.end() ? -1 : static_cast<int>(it - site_headers.begin());
  };
  if (col("_atom_site_cartn_x") >= 0) unsupported("cartesian atom sites");
  const int ct = col("_atom_site_type_symbol");
  const int cx = col("_atom_site_fract_x"), cy = col("_atom_site_fract_y"), cz = col("_atom_site_fract_z");
  const int cocc = col("_atom_site_occupancy");
  if (ct < 0) throw DataError("CIF atom_site loop lacks _atom_site_type_symbol");
  if (cx < 0 || cy < 0 || cz < 0) throw DataError("CIF atom_site loop lacks fractional coordinates");
  if (site_rows.empty()) throw DataError("CIF atom_site loop is empty");

  std::vector<int> types;
  Coords x(static_cast<Eigen::Index>(site_rows.size()), 3);
  for (std::size_t r = 0; r < site_rows.size(); ++r) {
    const auto& row = site_rows[r];
    if (cocc >= 0 && row[cocc] != "." && row[cocc] != "?" &&
        std::abs(cif_number(row[cocc], "_atom_site_occupancy") - 1.0) > 1e-6)
      unsupported("partial occupancy");
    const std::string sym = symbol_from_type(row[ct]);
    auto label = element_label(sym);
    if (!label) throw DataError("unknown element symbol in CIF: '" + row[ct] + "'");
    types.push_back(*label);
    x(static_cast<Eigen::Index>(r), 0) = cif_number(row[cx], "_atom_site_fract_x");
    x(static_cast<Eigen::Index>(r), 1) = cif_number(row[cy], "_atom_site_fract_y");
    x(static_cast<Eigen::Index>(r), 2) = cif_number(row[cz], "_atom_site_fract_z");
  }
  return Crystal(std::move(types), std::move(x), lattice_from_params(p));
}

}  // namespace xtalgen
