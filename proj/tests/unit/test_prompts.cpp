#include "xtalgen/error.hpp"
#include "xtalgen/prompts.hpp"
#include "xtalgen/toy_data.hpp"

#include <doctest.h>
#include <json.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

using namespace xtalgen;

namespace {

const std::string kPre = "Below is a description of a bulk material.";

CrystalMeta la_ni_ge() {
  CrystalMeta m;
  m.formula = "La(NiGe)2";
  m.formation_energy = -0.8;
  m.band_gap = 0.0;
  m.e_above_hull = 0.0;
  m.spacegroup = 138;
  m.crystal_system = "tetragonal";
  return m;
}

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  return ab / std::sqrt(aa * bb);
}

std::filesystem::path write_temp(const std::string& name, const std::string& body) {
  const auto p = std::filesystem::temp_directory_path() / name;
  std::ofstream(p) << body;
  return p;
}

}  // namespace

TEST_SUITE("prompts") {
  TEST_CASE("template text") {
    CHECK(make_short_prompt(la_ni_ge()) ==
          kPre +
              " The chemical formula is La(NiGe)2. The elements are La, Ni, Ge. The formation energy is negative. "
              "The band gap is zero. The energy above the convex hull is zero. The spacegroup number is 138. The "
              "crystal system is tetragonal. Generate the material.");

    CrystalMeta hg;
    hg.formula = "HgScNOF";
    hg.elements = {"Sc", "Hg", "N", "O", "F"};
    hg.formation_energy = 0.4;
    hg.spacegroup = 46;
    hg.crystal_system = "orthorhombic";
    CHECK(make_short_prompt(hg) == kPre +
                                       " The chemical formula is HgScNOF. The elements are Sc, Hg, N, O, F. The "
                                       "formation energy is positive. The spacegroup number is 46. The crystal "
                                       "system is orthorhombic. Generate the material.");

    CrystalMeta bare;
    bare.formula = "NaCl";
    CHECK(make_short_prompt(bare) == kPre + " The chemical formula is NaCl. The elements are Na, Cl. Generate the material.");
    CHECK_THROWS_AS(make_short_prompt(CrystalMeta{}), DataError);
  }

  TEST_CASE("parse inverts the template on every toy record") {
    for (const auto& c : make_toy_perovskites(200, 11)) {
      const auto expect = constraints_from_meta(c.meta());
      CHECK(parse_prompt(make_short_prompt(c.meta())) == expect);
    }
    const auto m = la_ni_ge();
    CHECK(parse_prompt(make_short_prompt(m)) == constraints_from_meta(m));
  }

  TEST_CASE("liberal parsing") {
    const std::string base = make_short_prompt(la_ni_ge());
    const auto expect = parse_prompt(base);
    CHECK(parse_prompt("Some preamble. " + base + " The sky is blue.") == expect);
    CHECK(parse_prompt("The formation energy is negative. The chemical formula is Xe2.").formation_energy_sign ==
          EnergySign::Negative);
    const auto compact = parse_prompt("The chemical formula is HgScNOF. The elements are Sc,Hg,N,O,F.");
    CHECK(compact.elements == std::vector<std::string>{"Sc", "Hg", "N", "O", "F"});
    const auto numeric = parse_prompt(
        "The chemical formula is Fe2O3. The formation energy per atom is -1.7. The band gap is 2.1. "
        "The energy above the convex hull is 0.");
    CHECK(numeric.formation_energy_sign == EnergySign::Negative);
    CHECK(numeric.band_gap_sign == GapSign::Nonzero);
    CHECK(numeric.e_above_hull_sign == GapSign::Zero);
    CHECK(numeric.elements == std::vector<std::string>{"Fe", "O"});
    CHECK_FALSE(numeric.spacegroup);
    CHECK_THROWS_AS(parse_prompt("A material with no formula."), DataError);
  }

  TEST_CASE("hash encoder") {
    const std::string t = make_short_prompt(la_ni_ge());
    const auto a = encode_text_hash(t, 64, 3);
    CHECK(a == encode_text_hash(t, 64, 3));
    CHECK(a != encode_text_hash(t, 64, 4));
    double norm = 0;
    for (double x : a) norm += x * x;
    CHECK(norm == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(encode_text_hash("", 64) == std::vector<double>(64, 0.0));
    CHECK(encode_text_hash("  ...  ", 16) == std::vector<double>(16, 0.0));
    // normalisation: case and punctuation
    CHECK(encode_text_hash("The Band-gap IS zero", 32) == encode_text_hash("the band gap is zero.", 32));
    CHECK_THROWS_AS(encode_text_hash(t, 4), ConfigError);
  }

  TEST_CASE("hash encoder collision audit") {
    const auto toys = make_toy_perovskites(390, 5);
    std::mt19937_64 rng(9);
    std::uniform_int_distribution<std::size_t> pick(0, toys.size() - 1);
    int audited = 0;
    double worst = -1;
    while (audited < 1000) {
      const auto i = pick(rng), j = pick(rng);
      if (i == j) continue;
      const auto a = encode_text_hash(make_short_prompt(toys[i].meta()));
      const auto b = encode_text_hash(make_short_prompt(toys[j].meta()));
      worst = std::max(worst, cosine(a, b));
      ++audited;
    }
    CHECK(worst < 0.999);
  }

  TEST_CASE("external embeddings") {
    std::string body;
    for (int r = 0; r < 3; ++r) {
      nlohmann::json j{{"id", "p" + std::to_string(r)}, {"vector", std::vector<double>(768, 0.1 * r)}};
      body += j.dump() + "\n";
    }
    const auto path = write_temp("xtalgen_emb.jsonl", body);
    const EmbeddingTable t = load_external_embeddings(path);
    CHECK(t.dim() == 768);
    CHECK(t.size() == 3);
    CHECK(t.at("p2")[5] == doctest::Approx(0.2));
    CHECK_THROWS_AS(t.at("p9"), DataError);
    std::filesystem::remove(path);

    CHECK_THROWS_AS(parse_external_embeddings("{\"id\":\"a\",\"vector\":[1,2]}\n{\"id\":\"b\",\"vector\":[1]}\n"),
                    DataError);
    CHECK_THROWS_AS(parse_external_embeddings("{\"id\":\"a\",\"vector\":[1,2]}\n{\"id\":\"a\",\"vector\":[3,4]}\n"),
                    DataError);
    CHECK_THROWS_AS(parse_external_embeddings("{\"id\":\"a\"}\n"), DataError);
  }

  TEST_CASE("prompt files") {
    const auto entries =
        parse_prompts("{\"id\":\"a\",\"text\":\"x\"}\n\n{\"id\":\"b\",\"text\":\"y\",\"types\":[0,7,7]}\n");
    REQUIRE(entries.size() == 2);
    CHECK_FALSE(entries[0].types);
    CHECK(entries[1].types == std::vector<int>{0, 7, 7});
    CHECK_THROWS_AS(parse_prompts("{\"id\":\"a\"}\n"), DataError);
    CHECK_THROWS_AS(read_prompts("/nonexistent/prompts.jsonl"), DataError);
  }
}
