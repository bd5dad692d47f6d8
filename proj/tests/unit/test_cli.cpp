#include "xtalgen/cli.hpp"
#include "xtalgen/dataset_io.hpp"
#include "xtalgen/engine.hpp"
#include "xtalgen/prompts.hpp"
#include "xtalgen/schema.hpp"

#include <doctest.h>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace xtalgen;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

std::vector<json> jsonl(const fs::path& p) {
  std::vector<json> rows;
  std::istringstream in(slurp(p));
  for (std::string line; std::getline(in, line);)
    if (!line.empty()) rows.push_back(json::parse(line));
  return rows;
}

// A scratch directory holding a toy dataset, its prompts and a small run config.
struct Workspace {
  fs::path dir;
  Workspace() {
    dir = fs::temp_directory_path() / "xtalgen_cli_test";
    fs::remove_all(dir);
    fs::create_directories(dir);
    const json cfg = {{"train",
                       {{"epochs", 2},
                        {"T", 10},
                        {"batch_size", 4},
                        {"model", {{"hidden_dim", 16}, {"num_layers", 2}, {"fourier_freqs", 3}}},
                        {"text_encoder", {{"dim", 16}}}}},
                      {"sample", {{"steps", 4}}}};
    std::ofstream(dir / "run.json") << cfg.dump();
    REQUIRE(cli({"make-toy", "--count", "8", "--seed", "3", "--out", p("toy.jsonl")}).code == 0);
    REQUIRE(cli({"gen-prompts", "--dataset", p("toy.jsonl"), "--out", p("prompts.jsonl")}).code == 0);
  }
  ~Workspace() { fs::remove_all(dir); }
  std::string p(const std::string& name) const { return (dir / name).string(); }
};

Workspace& workspace() {
  static Workspace w;
  return w;
}

std::string trained(Workspace& w) {
  const std::string ck = w.p("model.ckpt");
  if (!fs::exists(ck))
    REQUIRE(cli({"train", "--config", w.p("run.json"), "--dataset", w.p("toy.jsonl"), "--out", ck, "--seed", "5"})
                .code == 0);
  return ck;
}

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("make-toy and gen-prompts") {
    Workspace& w = workspace();
    const auto toys = read_jsonl_dataset(w.p("toy.jsonl"));
    REQUIRE(toys.size() == 8);
    const auto rows = jsonl(w.p("prompts.jsonl"));
    REQUIRE(rows.size() == 9);
    CHECK(rows[0]["provenance"]["command"] == "gen-prompts");
    CHECK(rows[0]["provenance"]["config_hash"].get<std::string>().size() == 16);
    const auto prompts = read_prompts(w.p("prompts.jsonl"));
    REQUIRE(prompts.size() == 8);
    for (std::size_t i = 0; i < 8; ++i) {
      CHECK(prompts[i].id == toys[i].id());
      CHECK(parse_prompt(prompts[i].text) == constraints_from_meta(toys[i].meta()));
      CHECK(prompts[i].types == toys[i].atom_types());
    }
  }

  TEST_CASE("gen-prompts tolerates missing metadata") {
    Workspace& w = workspace();
    auto toys = read_jsonl_dataset(w.p("toy.jsonl"));
    std::vector<Crystal> bare;
    for (const auto& c : toys) bare.push_back(c.with_meta({}));
    write_jsonl_dataset(w.p("bare.jsonl"), bare);
    const Run r = cli({"gen-prompts", "--dataset", w.p("bare.jsonl"), "--out", w.p("bare_prompts.jsonl")});
    CHECK(r.code == 0);
    CHECK(r.err.find("8 records lack some metadata") != std::string::npos);
    const auto prompts = read_prompts(w.p("bare_prompts.jsonl"));
    REQUIRE(prompts.size() == 8);
    CHECK(prompts[0].text.find("formation energy") == std::string::npos);
    CHECK_FALSE(parse_prompt(prompts[0].text).formula.empty());
  }

  TEST_CASE("train writes a checkpoint and a history row per epoch") {
    Workspace& w = workspace();
    const std::string ck = trained(w);
    const Checkpoint c = load_checkpoint(ck);
    CHECK(c.history.size() == 2);
    CHECK(c.model.config().hidden_dim == 16);
    CHECK(c.train.seed == 5);
    CHECK(c.provenance["command"] == "train");
    std::istringstream csv(slurp(ck + ".history.csv"));
    std::string line;
    std::getline(csv, line);
    CHECK(line.rfind("# provenance", 0) == 0);
    std::getline(csv, line);
    CHECK(line == "epoch,total,lattice,coord,type_vb,type_ce,lr");
    int rows = 0;
    while (std::getline(csv, line)) ++rows;
    CHECK(rows == 2);
    CHECK(fs::exists(ck + ".timings.json"));

    // deterministic reruns give identical bytes
    const std::string again = w.p("again.ckpt");
    const std::vector<std::string> args{"train", "--config", w.p("run.json"), "--dataset", w.p("toy.jsonl"),
                                        "--out", again, "--seed", "5", "--deterministic"};
    REQUIRE(cli(args).code == 0);
    const std::string first = slurp(again);
    REQUIRE(cli(args).code == 0);
    CHECK(slurp(again) == first);
    CHECK(load_checkpoint(again).model.params() == c.model.params());
  }

  TEST_CASE("flags override the config file") {
    Workspace& w = workspace();
    const std::string ck = w.p("override.ckpt");
    REQUIRE(cli({"train", "--config", w.p("run.json"), "--dataset", w.p("toy.jsonl"), "--out", ck, "--epochs", "1"})
                .code == 0);
    CHECK(load_checkpoint(ck).history.size() == 1);
  }

  TEST_CASE("sample output shape, seeds and parallel ordering") {
    Workspace& w = workspace();
    const std::string ck = trained(w);
    // keep five prompts
    std::ofstream five(w.p("five.jsonl"));
    const auto all = read_prompts(w.p("prompts.jsonl"));
    for (std::size_t i = 0; i < 5; ++i)
      five << json{{"id", all[i].id}, {"text", all[i].text}, {"types", *all[i].types}}.dump() << '\n';
    five.close();
    const auto prompts = read_prompts(w.p("five.jsonl"));
    REQUIRE(prompts.size() == 5);

    const Run a = cli({"sample", "--config", w.p("run.json"), "--checkpoint", ck, "--prompts", w.p("five.jsonl"),
                       "--num-samples", "2", "--seed", "9", "--out", w.p("a.jsonl")});
    REQUIRE(a.code == 0);
    const auto rows = jsonl(w.p("a.jsonl"));
    CHECK(rows.size() == 1 + 2 * prompts.size());
    CHECK(rows[1]["id"] == prompts[0].id + "#0");
    CHECK(rows[2]["prompt_id"] == prompts[0].id);
    CHECK(jsonl(w.p("a.jsonl.timings.jsonl")).size() == 2 * prompts.size());
    CHECK(jsonl(w.p("a.jsonl.timings.jsonl"))[0]["steps"] == 4);

    const std::string serial = slurp(w.p("a.jsonl"));
    REQUIRE(cli({"sample", "--config", w.p("run.json"), "--checkpoint", ck, "--prompts", w.p("five.jsonl"),
                 "--num-samples", "2", "--seed", "9", "--jobs", "3", "--out", w.p("a.jsonl")})
                .code == 0);
    CHECK(slurp(w.p("a.jsonl")) == serial);
    REQUIRE(cli({"sample", "--config", w.p("run.json"), "--checkpoint", ck, "--prompts", w.p("five.jsonl"),
                 "--num-samples", "2", "--seed", "10", "--out", w.p("c.jsonl")})
                .code == 0);
    const auto other = jsonl(w.p("c.jsonl"));
    CHECK(other[1]["frac_coords"] != rows[1]["frac_coords"]);
  }

  TEST_CASE("csp sampling needs types") {
    Workspace& w = workspace();
    const std::string ck = trained(w);
    std::ofstream(w.p("untyped.jsonl")) << json{{"id", "q"}, {"text", "The chemical formula is SrTiO3."}}.dump() << '\n';
    const Run r = cli({"sample", "--checkpoint", ck, "--prompts", w.p("untyped.jsonl"), "--mode", "csp", "--out",
                       w.p("never.jsonl")});
    CHECK(r.code == 3);
    CHECK(r.err.find("has no types") != std::string::npos);
    CHECK(cli({"sample", "--checkpoint", ck, "--prompts", w.p("untyped.jsonl"), "--out", w.p("g.jsonl"), "--steps",
               "3"})
              .code == 0);

    const Run csp = cli({"sample", "--config", w.p("run.json"), "--checkpoint", ck, "--prompts",
                         w.p("prompts.jsonl"), "--mode", "csp", "--out", w.p("csp.jsonl")});
    REQUIRE(csp.code == 0);
    const auto prompts = read_prompts(w.p("prompts.jsonl"));
    const auto rows = jsonl(w.p("csp.jsonl"));
    for (std::size_t i = 0; i < prompts.size(); ++i)
      if (!rows[i + 1].value("failed", false)) CHECK(rows[i + 1]["atom_types"] == json(*prompts[i].types));
  }

  TEST_CASE("evaluate identical sets") {
    Workspace& w = workspace();
    // the references themselves, labelled as csp samples of their own prompts
    std::ofstream g(w.p("self.jsonl"));
    for (const auto& c : read_jsonl_dataset(w.p("toy.jsonl"))) {
      auto j = crystal_to_json(c);
      j["prompt_id"] = c.id();
      g << j.dump() << '\n';
    }
    g.close();
    const Run r = cli({"evaluate", "--gens", w.p("self.jsonl"), "--refs", w.p("toy.jsonl"), "--prompts",
                       w.p("prompts.jsonl"), "--mode", "csp", "--out", w.p("report.json"), "--csv",
                       w.p("report.csv")});
    REQUIRE(r.code == 0);
    const json doc = json::parse(slurp(w.p("report.json")));
    CHECK(schema_errors(report_schema(), doc).empty());
    const json& rep = doc["report"];
    CHECK(rep["match_rate"] == 100.0);
    CHECK(rep["mean_rmse"].get<double>() < 1e-8);
    CHECK(rep["struct_validity"] == 100.0);
    CHECK(rep["emd"]["density"] == 0.0);
    CHECK(rep["emd"]["num_elements"] == 0.0);
    CHECK(rep["emd"]["formation_energy"].is_null());
    CHECK(rep["correctness"]["formula"] == 100.0);
    CHECK(rep["correctness"]["crystal_system"] == 100.0);
    CHECK(rep["cov_r"] == 100.0);
    CHECK(slurp(w.p("report.csv")).rfind("name,value,count\n", 0) == 0);

    const Run bare = cli({"evaluate", "--gens", w.p("self.jsonl"), "--refs", w.p("toy.jsonl"), "--out",
                          w.p("report2.json")});
    REQUIRE(bare.code == 0);
    const json doc2 = json::parse(slurp(w.p("report2.json")));
    CHECK(doc2["report"]["correctness"].empty());
    CHECK(doc2["report"]["match_rate"].is_null());
    json a = doc["report"], b = json::parse(slurp(w.p("report.json")))["report"];
    CHECK(a == b);
  }

  TEST_CASE("exit codes") {
    Workspace& w = workspace();
    CHECK(cli({}).code == 2);
    CHECK(cli({"frobnicate"}).code == 2);
    CHECK(cli({"train", "--dataset", w.p("toy.jsonl")}).code == 2);  // no --out
    std::ofstream(w.p("bad.json")) << R"({"train": {"epoch": 3}})";
    const Run bad = cli({"train", "--config", w.p("bad.json"), "--dataset", w.p("toy.jsonl"), "--out", w.p("x")});
    CHECK(bad.code == 2);
    CHECK(bad.err.find("unknown key 'epoch'") != std::string::npos);
    std::ofstream(w.p("notjson.json")) << "{";
    CHECK(cli({"train", "--config", w.p("notjson.json")}).code == 2);
    CHECK(cli({"sample", "--mode", "both", "--out", w.p("x")}).code == 2);
    CHECK(cli({"gen-prompts", "--dataset", w.p("missing.jsonl"), "--out", w.p("x")}).code == 3);
    std::ofstream(w.p("broken.jsonl")) << "{\"id\": 1\n";
    CHECK(cli({"evaluate", "--gens", w.p("broken.jsonl"), "--refs", w.p("toy.jsonl"), "--out", w.p("x")}).code == 3);
    CHECK(cli({"--version"}).out.find(kToolVersion) != std::string::npos);
    CHECK(cli({"train", "--help"}).code == 0);
  }

  TEST_CASE("config hash") {
    CHECK(fnv1a_hex("") == "cbf29ce484222325");
    CHECK(fnv1a_hex("a") == "af63dc4c8601ec8c");
  }
}
