#include "support.hpp"
#include "xtalgen/dataset_io.hpp"
#include "xtalgen/elements.hpp"
#include "xtalgen/error.hpp"
#include "xtalgen/toy_data.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>

using namespace xtalgen;

namespace {

bool same_crystal(const Crystal& a, const Crystal& b) {
  return a.atom_types() == b.atom_types() && a.frac_coords() == b.frac_coords() && a.lattice() == b.lattice() &&
         a.meta() == b.meta() && a.id() == b.id();
}

std::string expect_data_error(const std::string& text) {
  try {
    parse_jsonl_dataset(text);
  } catch (const DataError& e) {
    return e.what();
  }
  return {};
}

std::string cif_error(const std::string& text) {
  try {
    parse_cif_min(text);
  } catch (const DataError& e) {
    return e.what();
  }
  return {};
}

const char* kCubicBa = R"(data_ba
_cell_length_a 4
_cell_length_b 4
_cell_length_c 4
_cell_angle_alpha 90
_cell_angle_beta 90
_cell_angle_gamma 90
loop_
_atom_site_label
_atom_site_type_symbol
_atom_site_fract_x
_atom_site_fract_y
_atom_site_fract_z
Ba1 Ba 0 0 0
)";

}  // namespace

TEST_SUITE("dataset_io") {
  TEST_CASE("perovskite record round-trips exactly") {
    const auto toys = make_toy_perovskites(20, 3);
    for (const auto& c : toys) {
      REQUIRE(c.num_atoms() == 5);
      const std::string line = crystal_to_json(c).dump();
      const Crystal back = crystal_from_json(nlohmann::json::parse(line));
      CHECK(same_crystal(c, back));
      CHECK(crystal_to_json(back).dump() == line);
    }
    const std::string text = format_jsonl_dataset(toys);
    const auto parsed = parse_jsonl_dataset(text);
    REQUIRE(parsed.size() == toys.size());
    for (std::size_t i = 0; i < toys.size(); ++i) CHECK(same_crystal(parsed[i], toys[i]));
    CHECK(format_jsonl_dataset(parsed) == text);
  }

  TEST_CASE("files and provenance line") {
    const auto toys = make_toy_perovskites(4, 1);
    const auto path = std::filesystem::temp_directory_path() / "xtalgen_io_test.jsonl";
    write_jsonl_dataset(path, toys, {{"tool", "test"}});
    std::ifstream f(path);
    std::string first;
    std::getline(f, first);
    CHECK(is_provenance_line(nlohmann::json::parse(first)));
    const auto back = read_jsonl_dataset(path);
    REQUIRE(back.size() == 4);
    CHECK(same_crystal(back[3], toys[3]));
    std::filesystem::remove(path);
    CHECK_THROWS_AS(read_jsonl_dataset(path), DataError);
  }

  TEST_CASE("malformed records name the line") {
    const std::string good = crystal_to_json(make_toy_perovskites(1, 0)[0]).dump();
    CHECK(expect_data_error(good + "\n{not json}\n").find("line 2") != std::string::npos);
    CHECK(expect_data_error(good + "\n" + good + "\n{\"id\":\"x\"}\n").find("line 3") != std::string::npos);
    auto j = nlohmann::json::parse(good);
    j["lattice"] = {{1, 0, 0}, {0, 1, 0}};
    CHECK(expect_data_error(j.dump()).find("line 1") != std::string::npos);
    j = nlohmann::json::parse(good);
    j["atom_types"] = {0, 1};
    CHECK_FALSE(expect_data_error(j.dump()).empty());
    j = nlohmann::json::parse(good);
    j["atom_types"][0] = 100;
    CHECK_FALSE(expect_data_error(j.dump()).empty());
    // blank lines are skipped
    CHECK(parse_jsonl_dataset("\n" + good + "\n\n").size() == 1);
  }

  TEST_CASE("minimal CIF") {
    const Crystal c = parse_cif_min(kCubicBa);
    CHECK(c.num_atoms() == 1);
    CHECK(c.atom_types()[0] == *element_label("Ba"));
    CHECK(c.lattice().isApprox(Mat3::Identity() * 4, 1e-12));
    CHECK(classify_crystal_system(c.lattice()) == CrystalSystem::Cubic);

    // charges and uncertainties in the usual places
    std::string withcharge = kCubicBa;
    withcharge.replace(withcharge.find("Ba1 Ba 0 0 0"), 12, "Ti1 Ti4+ 0.5(1) 0.5 0.5\nO1 O2- 0.5 0.5 0");
    const Crystal t = parse_cif_min(withcharge);
    REQUIRE(t.num_atoms() == 2);
    CHECK(t.atom_types()[0] == *element_label("Ti"));
    CHECK(t.frac_coords()(0, 0) == doctest::Approx(0.5));

    std::string p1 = kCubicBa;
    p1.insert(p1.find("loop_"), "loop_\n_symmetry_equiv_pos_as_xyz\n'x, y, z'\n");
    CHECK(parse_cif_min(p1).num_atoms() == 1);
  }

  TEST_CASE("unsupported CIF features are rejected") {
    std::string symops = kCubicBa;
    symops.insert(symops.find("loop_"), "loop_\n_symmetry_equiv_pos_as_xyz\n'x, y, z'\n'-x, -y, -z'\n");
    CHECK(cif_error(symops).find("unsupported") != std::string::npos);

    std::string occ = kCubicBa;
    occ.replace(occ.find("_atom_site_fract_z"), 18, "_atom_site_fract_z\n_atom_site_occupancy");
    occ.replace(occ.find("Ba1 Ba 0 0 0"), 12, "Ba1 Ba 0 0 0 0.5");
    CHECK(cif_error(occ).find("unsupported") != std::string::npos);

    std::string two = std::string(kCubicBa) + "data_second\n";
    CHECK(cif_error(two).find("unsupported") != std::string::npos);

    std::string nocell = kCubicBa;
    nocell.erase(nocell.find("_cell_length_c"), 17);
    CHECK(cif_error(nocell).find("_cell_length_c") != std::string::npos);

    std::string unknown = kCubicBa;
    unknown.replace(unknown.find("Ba1 Ba"), 6, "Q1 Qq");
    CHECK(cif_error(unknown).find("unknown element") != std::string::npos);
  }
}
