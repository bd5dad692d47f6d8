#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace xtalgen {

// Element data for labels 0..99 (label = atomic number - 1).
std::string_view element_symbol(int label);
std::optional<int> element_label(std::string_view symbol);
double atomic_mass(int label);
// Common oxidation states; empty for noble gases and elements without a tabulated state.
std::span<const int> oxidation_states(int label);

// Element label -> count.
using Composition = std::map<int, int>;

// Parses formulas with nested parentheses and integer multipliers, e.g. "La(NiGe)2".
Composition parse_formula(std::string_view formula);
Composition composition_of(std::span<const int> atom_types);
// Divides all counts by their gcd.
Composition reduce_composition(const Composition& comp);
// Hill-like canonical string of the reduced composition: elements sorted by symbol, counts of 1 omitted.
std::string canonical_formula(const Composition& comp);
// Symbols in order of first appearance in the formula.
std::vector<std::string> formula_elements(std::string_view formula);

}  // namespace xtalgen
