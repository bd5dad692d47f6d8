#pragma once

#include "xtalgen/crystal.hpp"

#include <json.hpp>

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace xtalgen {

// JSON-Lines crystal records:
// {"id", "atom_types", "frac_coords", "lattice", "meta": {...}}
nlohmann::ordered_json crystal_to_json(const Crystal& c);
Crystal crystal_from_json(const nlohmann::json& j);

std::vector<Crystal> read_jsonl_dataset(const std::filesystem::path& path);
std::vector<Crystal> parse_jsonl_dataset(std::string_view text);
void write_jsonl_dataset(const std::filesystem::path& path, const std::vector<Crystal>& crystals,
                         const nlohmann::ordered_json& provenance = nullptr);
std::string format_jsonl_dataset(const std::vector<Crystal>& crystals);

// Optional first line of any JSONL file this project writes: {"provenance": {...}}.
bool is_provenance_line(const nlohmann::json& j);

// Minimal CIF: cell lengths/angles plus one atom_site loop with type symbols and
// fractional coordinates. Anything else that affects the structure is rejected.
Crystal parse_cif_min(std::string_view text);

}  // namespace xtalgen
