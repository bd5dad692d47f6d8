#include "xtalgen/elements.hpp"

#include "xtalgen/crystal.hpp"
#include "xtalgen/error.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <numeric>
#include <vector>

namespace xtalgen {

namespace {

struct ElementRecord {
  const char* symbol;
  double mass;  // standard atomic weight, u
  std::vector<int> oxidation;
};

// Masses: IUPAC standard atomic weights (abridged, 2021); mass number of the
// longest-lived isotope for elements without a standard weight.
// Oxidation states: the "common oxidation states" set tabulated in pymatgen's
// periodic_table.json, which is the usual SMACT-style neutrality table.
const std::array<ElementRecord, kNumTypes>& table() {
  static const std::array<ElementRecord, kNumTypes> t = {{
      {"H", 1.008, {-1, 1}},       {"He", 4.0026, {}},          {"Li", 6.94, {1}},
      {"Be", 9.0122, {2}},         {"B", 10.81, {3}},           {"C", 12.011, {-4, 4}},
      {"N", 14.007, {-3, 3, 5}},   {"O", 15.999, {-2}},         {"F", 18.998, {-1}},
      {"Ne", 20.180, {}},          {"Na", 22.990, {1}},         {"Mg", 24.305, {2}},
      {"Al", 26.982, {3}},         {"Si", 28.085, {-4, 4}},     {"P", 30.974, {-3, 3, 5}},
      {"S", 32.06, {-2, 2, 4, 6}}, {"Cl", 35.45, {-1, 1, 3, 5, 7}}, {"Ar", 39.948, {}},
      {"K", 39.098, {1}},          {"Ca", 40.078, {2}},         {"Sc", 44.956, {3}},
      {"Ti", 47.867, {4}},         {"V", 50.942, {5}},          {"Cr", 51.996, {3, 6}},
      {"Mn", 54.938, {2, 4, 7}},   {"Fe", 55.845, {2, 3}},      {"Co", 58.933, {2, 3}},
      {"Ni", 58.693, {2}},         {"Cu", 63.546, {2}},         {"Zn", 65.38, {2}},
      {"Ga", 69.723, {3}},         {"Ge", 72.630, {-4, 2, 4}},  {"As", 74.922, {-3, 3, 5}},
      {"Se", 78.971, {-2, 2, 4, 6}}, {"Br", 79.904, {-1, 1, 3, 5}}, {"Kr", 83.798, {2}},
      {"Rb", 85.468, {1}},         {"Sr", 87.62, {2}},          {"Y", 88.906, {3}},
      {"Zr", 91.224, {4}},         {"Nb", 92.906, {5}},         {"Mo", 95.95, {4, 6}},
      {"Tc", 97.907, {4, 7}},      {"Ru", 101.07, {3, 4}},      {"Rh", 102.91, {3}},
      {"Pd", 106.42, {2, 4}},      {"Ag", 107.87, {1}},         {"Cd", 112.41, {2}},
      {"In", 114.82, {3}},         {"Sn", 118.71, {-4, 2, 4}},  {"Sb", 121.76, {-3, 3, 5}},
      {"Te", 127.60, {-2, 2, 4, 6}}, {"I", 126.90, {-1, 1, 3, 5, 7}}, {"Xe", 131.29, {2, 4, 6}},
      {"Cs", 132.91, {1}},         {"Ba", 137.33, {2}},         {"La", 138.91, {3}},
      {"Ce", 140.12, {3, 4}},      {"Pr", 140.91, {3}},         {"Nd", 144.24, {3}},
      {"Pm", 144.91, {3}},         {"Sm", 150.36, {3}},         {"Eu", 151.96, {2, 3}},
      {"Gd", 157.25, {3}},         {"Tb", 158.93, {3}},         {"Dy", 162.50, {3}},
      {"Ho", 164.93, {3}},         {"Er", 167.26, {3}},         {"Tm", 168.93, {3}},
      {"Yb", 173.05, {3}},         {"Lu", 174.97, {3}},         {"Hf", 178.49, {4}},
      {"Ta", 180.95, {5}},         {"W", 183.84, {4, 6}},       {"Re", 186.21, {4}},
      {"Os", 190.23, {4}},         {"Ir", 192.22, {3, 4}},      {"Pt", 195.08, {2, 4}},
      {"Au", 196.97, {3}},         {"Hg", 200.59, {1, 2}},      {"Tl", 204.38, {1, 3}},
      {"Pb", 207.2, {2, 4}},       {"Bi", 208.98, {3}},         {"Po", 208.98, {-2, 2, 4}},
      {"At", 209.99, {-1, 1}},     {"Rn", 222.02, {2}},         {"Fr", 223.02, {1}},
      {"Ra", 226.03, {2}},         {"Ac", 227.03, {3}},         {"Th", 232.04, {4}},
      {"Pa", 231.04, {5}},         {"U", 238.03, {6}},          {"Np", 237.05, {5}},
      {"Pu", 244.06, {4}},         {"Am", 243.06, {3}},         {"Cm", 247.07, {3}},
      {"Bk", 247.07, {3}},         {"Cf", 251.08, {3}},         {"Es", 252.08, {3}},
      {"Fm", 257.10, {3}},
  }};
  return t;
}

void check_label(int label) {
  if (label < 0 || label >= kNumTypes) throw DataError("element label out of range: " + std::to_string(label));
}

class FormulaParser {
 public:
  explicit FormulaParser(std::string_view s) : s_(s) {}

  Composition parse() {
    Composition out = group();
    if (pos_ != s_.size()) fail("unexpected character");
    if (out.empty()) fail("empty formula");
    return out;
  }

  std::vector<std::string> order;

 private:
  Composition group() {
    Composition acc;
    while (pos_ < s_.size()) {
      const char ch = s_[pos_];
      if (ch == '(' || ch == '[') {
        ++pos_;
        Composition inner = group();
        if (pos_ >= s_.size() || (s_[pos_] != ')' && s_[pos_] != ']')) fail("unbalanced parenthesis");
        ++pos_;
        const int mult = number();
        for (auto& [el, n] : inner) acc[el] += n * mult;
      } else if (ch == ')' || ch == ']') {
        break;
      } else if (std::isupper(static_cast<unsigned char>(ch))) {
        std::string sym(1, ch);
        ++pos_;
        while (pos_ < s_.size() && std::islower(static_cast<unsigned char>(s_[pos_]))) sym.push_back(s_[pos_++]);
        auto label = element_label(sym);
        if (!label) fail("unknown element '" + sym + "'");
        if (std::find(order.begin(), order.end(), sym) == order.end()) order.push_back(sym);
        acc[*label] += number();
      } else {
        fail("unexpected character");
      }
    }
    return acc;
  }

  int number() {
    if (pos_ >= s_.size() || !std::isdigit(static_cast<unsigned char>(s_[pos_]))) return 1;
    int v = 0;
    while (pos_ < s_.size() && std::isdigit(static_cast<unsigned char>(s_[pos_]))) {
      v = v * 10 + (s_[pos_++] - '0');
      if (v > 1000000) fail("count too large");
    }
    if (v == 0) fail("zero count");
    return v;
  }

  [[noreturn]] void fail(const std::string& why) const {
    throw DataError("cannot parse formula '" + std::string(s_) + "': " + why);
  }

  std::string_view s_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string_view element_symbol(int label) {
  check_label(label);
  return table()[label].symbol;
}

std::optional<int> element_label(std::string_view symbol) {
  const auto& t = table();
  for (int i = 0; i < kNumTypes; ++i)
    if (symbol == t[i].symbol) return i;
  return std::nullopt;
}

double atomic_mass(int label) {
  check_label(label);
  return table()[label].mass;
}

std::span<const int> oxidation_states(int label) {
  check_label(label);
  return table()[label].oxidation;
}

Composition parse_formula(std::string_view formula) { return FormulaParser(formula).parse(); }

std::vector<std::string> formula_elements(std::string_view formula) {
  FormulaParser p(formula);
  p.parse();
  return p.order;
}

Composition composition_of(std::span<const int> atom_types) {
  Composition c;
  for (int a : atom_types) {
    check_label(a);
    ++c[a];
  }
  return c;
}

Composition reduce_composition(const Composition& comp) {
  int g = 0;
  for (const auto& [el, n] : comp) g = std::gcd(g, n);
  if (g <= 1) return comp;
  Composition out;
  for (const auto& [el, n] : comp) out[el] = n / g;
  return out;
}

std::string canonical_formula(const Composition& comp) {
  std::map<std::string, int> by_symbol;
  for (const auto& [el, n] : reduce_composition(comp)) by_symbol[std::string(element_symbol(el))] = n;
  std::string out;
  for (const auto& [sym, n] : by_symbol) {
    out += sym;
    if (n != 1) out += std::to_string(n);
  }
  return out;
}

}  // namespace xtalgen
