#include "xtalgen/cli.hpp"

#include "xtalgen/dataset_io.hpp"
#include "xtalgen/elements.hpp"
#include "xtalgen/engine.hpp"
#include "xtalgen/error.hpp"
#include "xtalgen/evaluation.hpp"
#include "xtalgen/prompts.hpp"
#include "xtalgen/schema.hpp"
#include "xtalgen/toy_data.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <atomic>
#include <chrono>
#include <cstdio>
#include <exception>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <sstream>
#include <thread>

namespace xtalgen {

using nlohmann::json;
using nlohmann::ordered_json;

std::string fnv1a_hex(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

// Values given on the command line; unset ones leave the config file alone.
struct Flags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<int> jobs;
  bool deterministic = false;
  std::optional<std::string> out;
  json section = json::object();  // command-specific overrides keyed like the config section
};

struct Context {
  std::string command;
  std::string section;  // config key of the command
  json config;          // effective configuration after overrides
  std::uint64_t seed = 0;
  int jobs = 1;
  bool deterministic = false;
  std::ostream* log = nullptr;

  const json& sec() const { return config.at(section); }

  template <class T>
  T get(const std::string& key, T fallback) const {
    return sec().contains(key) ? sec().at(key).get<T>() : fallback;
  }

  std::optional<std::string> path(const std::string& key) const {
    if (!sec().contains(key)) return std::nullopt;
    return sec().at(key).get<std::string>();
  }

  std::string required_path(const std::string& key, const std::string& flag) const {
    auto p = path(key);
    if (!p) throw ConfigError(command + ": no " + key + " given (set " + section + "." + key + " or " + flag + ")");
    return *p;
  }

  // The worker count never changes results, so it stays out of the echo.
  ordered_json provenance() const {
    json echoed = config;
    echoed.erase("jobs");
    return {{"tool", "xtalgen"},
            {"version", kToolVersion},
            {"command", command},
            {"config_hash", fnv1a_hex(echoed.dump())},
            {"seed", seed},
            {"config", echoed}};
  }
};

json read_json_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config file: " + path);
  try {
    return json::parse(f);
  } catch (const json::exception& e) {
    throw ConfigError("config file " + path + " is not valid JSON: " + e.what());
  }
}

Context make_context(const std::string& command, const std::string& section, const Flags& flags, std::ostream& err) {
  Context ctx;
  ctx.command = command;
  ctx.section = section;
  ctx.log = &err;
  json cfg = flags.config.empty() ? json::object() : read_json_file(flags.config);
  require_valid(run_config_schema(), cfg, "config file");
  if (!cfg.contains(section)) cfg[section] = json::object();
  for (const auto& [k, v] : flags.section.items()) cfg[section][k] = v;
  if (flags.out) cfg[section]["out"] = *flags.out;
  if (flags.seed) cfg["seed"] = *flags.seed;
  if (flags.jobs) cfg["jobs"] = *flags.jobs;
  if (flags.deterministic) cfg["deterministic"] = true;
  require_valid(run_config_schema(), cfg, "effective configuration");

  // command-line seed, then the top-level seed, then a seed inside the section
  if (cfg.contains("seed")) ctx.seed = cfg.at("seed").get<std::uint64_t>();
  else if (cfg[section].contains("seed")) ctx.seed = cfg[section].at("seed").get<std::uint64_t>();
  ctx.jobs = cfg.value("jobs", 1);
  ctx.deterministic = cfg.value("deterministic", false);
  if (ctx.deterministic) ctx.jobs = 1;
  ctx.config = std::move(cfg);
  return ctx;
}

void write_text(const std::string& path, const std::string& body) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot write " + path);
  f << body;
  if (!f) throw DataError("failed writing " + path);
}

std::string num(double x) {
  std::ostringstream os;
  os << std::setprecision(10) << x;
  return os.str();
}

// ---- make-toy -------------------------------------------------------------

void cmd_make_toy(const Context& ctx) {
  const std::string out = ctx.required_path("out", "--out");
  const int count = ctx.get("count", 200);
  const auto toys = make_toy_perovskites(count, ctx.seed);
  write_jsonl_dataset(out, toys, ctx.provenance());
  *ctx.log << "wrote " << toys.size() << " structures to " << out << "\n";
}

// ---- gen-prompts ----------------------------------------------------------

void cmd_gen_prompts(const Context& ctx) {
  const auto crystals = read_jsonl_dataset(ctx.required_path("dataset", "--dataset"));
  const std::string out = ctx.required_path("out", "--out");
  std::ostringstream os;
  os << ordered_json{{"provenance", ctx.provenance()}}.dump() << '\n';
  int lacking = 0;
  for (std::size_t i = 0; i < crystals.size(); ++i) {
    const Crystal& c = crystals[i];
    CrystalMeta meta = c.meta();
    if (!meta.formula) meta.formula = canonical_formula(composition_of(c.atom_types()));
    if (!c.meta().formula || !meta.formation_energy || !meta.band_gap || !meta.e_above_hull || !meta.spacegroup ||
        !meta.crystal_system)
      ++lacking;
    const std::string id = c.id().empty() ? "record-" + std::to_string(i) : c.id();
    os << ordered_json{{"id", id}, {"text", make_short_prompt(meta)}, {"types", c.atom_types()}}.dump() << '\n';
  }
  write_text(out, os.str());
  *ctx.log << "wrote " << crystals.size() << " prompts to " << out;
  if (lacking) *ctx.log << " (warning: " << lacking << " records lack some metadata; those clauses are omitted)";
  *ctx.log << "\n";
}

// ---- train ----------------------------------------------------------------

const char* const kTrainConfigKeys[] = {
    "epochs",      "batch_size",  "lambda_lattice", "lambda_type",     "lambda_coord",  "lambda_ce",
    "optimizer",   "lr",          "lr_schedule",    "plateau_factor",  "plateau_patience", "min_lr",
    "grad_clip",   "T",           "deterministic",  "task",            "coord_weighting", "text_dropout",
    "ddpm_kind",   "ddpm_beta_max", "sigma_min",    "sigma_max",       "mask_schedule", "k_max"};

void cmd_train(const Context& ctx) {
  const auto crystals = read_jsonl_dataset(ctx.required_path("dataset", "--dataset"));
  const std::string out = ctx.required_path("out", "--out");
  const std::string history = ctx.path("history").value_or(out + ".history.csv");

  json tj = json::object();
  for (const char* k : kTrainConfigKeys)
    if (ctx.sec().contains(k)) tj[k] = ctx.sec().at(k);
  TrainConfig tc = train_config_from_json(tj);
  tc.seed = ctx.seed;
  tc.deterministic = tc.deterministic || ctx.deterministic;

  TextEncoderSpec text;
  const json te = ctx.get("text_encoder", json::object());
  text.kind = te.value("kind", text.kind);
  text.dim = te.value("dim", text.dim);
  text.seed = te.value("seed", text.seed);

  std::vector<TrainingExample> data;
  if (text.kind == "external") {
    const EmbeddingTable table = load_external_embeddings(ctx.required_path("embeddings", "--embeddings"));
    text.dim = table.dim();
    for (const auto& c : crystals) {
      const auto& v = table.at(c.id());
      data.push_back({c, Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()))});
    }
  } else {
    for (const auto& c : crystals) {
      CrystalMeta meta = c.meta();
      if (!meta.formula) meta.formula = canonical_formula(composition_of(c.atom_types()));
      data.push_back({c, embed_prompt(text, make_short_prompt(meta))});
    }
  }

  json mj = ctx.get("model", json::object());
  if (mj.contains("text_raw_dim") && mj.at("text_raw_dim").get<int>() != text.dim)
    throw ConfigError("train.model.text_raw_dim disagrees with the text encoder dimension");
  mj["text_raw_dim"] = text.dim;
  if (!mj.contains("seed")) mj["seed"] = ctx.seed;
  const DenoiserConfig dc = denoiser_config_from_json(mj);

  const int every = std::max(1, tc.epochs / 10);
  const auto t0 = Clock::now();
  Checkpoint ck = train(data, tc, dc, text, [&](const EpochRecord& r) {
    if (r.epoch == 1 || r.epoch % every == 0)
      *ctx.log << "epoch " << r.epoch << "/" << tc.epochs << " loss " << num(r.loss.total) << "\n";
  });
  const double secs = seconds_since(t0);
  ck.provenance = ctx.provenance();
  save_checkpoint(ck, out);

  std::ostringstream csv;
  csv << "# provenance " << ordered_json(ctx.provenance()).dump() << "\n";
  csv << "epoch,total,lattice,coord,type_vb,type_ce,lr\n";
  for (const auto& r : ck.history)
    csv << r.epoch << ',' << num(r.loss.total) << ',' << num(r.loss.lattice_loss) << ',' << num(r.loss.coord_loss)
        << ',' << num(r.loss.type_vb_loss) << ',' << num(r.loss.type_ce_loss) << ',' << num(r.lr) << '\n';
  write_text(history, csv.str());
  write_text(out + ".timings.json",
             ordered_json{{"train_seconds", secs}, {"seconds_per_epoch", secs / tc.epochs}}.dump() + "\n");
  *ctx.log << "wrote " << out << " and " << history << " (" << num(secs) << " s)\n";
}

// ---- sample ---------------------------------------------------------------

void cmd_sample(const Context& ctx) {
  const Checkpoint ck = load_checkpoint(ctx.required_path("checkpoint", "--checkpoint"));
  const auto prompts = read_prompts(ctx.required_path("prompts", "--prompts"));
  const std::string out = ctx.required_path("out", "--out");
  const Task mode = parse_task(ctx.get<std::string>("mode", "gen"));
  const int k = ctx.get("num_samples", 1);
  const int steps = ctx.get("steps", 0);
  const TypeStrategy strategy = parse_type_strategy(ctx.get<std::string>("strategy", "d3pm_ancestral"));
  const double step_size = ctx.get("step_size", 1e-5);
  const int fixed_atoms = ctx.get("num_atoms", 0);
  time_grid(ck.schedules.ddpm.T, steps);  // validates steps before any work

  std::optional<EmbeddingTable> table;
  if (ck.text.kind == "external") {
    table = load_external_embeddings(ctx.required_path("embeddings", "--embeddings"));
    if (table->dim() != ck.text.dim) throw DataError("embedding dimension does not match the checkpoint");
  }
  std::vector<Eigen::VectorXd> texts;
  for (const auto& p : prompts) {
    if (mode == Task::Csp && !p.types) throw DataError("prompt '" + p.id + "' has no types; csp sampling needs them");
    if (table) {
      const auto& v = table->at(p.id);
      texts.emplace_back(Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size())));
    } else {
      texts.push_back(embed_prompt(ck.text, p.text));
    }
  }

  const std::size_t total = prompts.size() * static_cast<std::size_t>(k);
  std::vector<SampleResult> results(total);
  std::vector<std::exception_ptr> failures(total);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t idx; (idx = next++) < total;) {
      try {
        const std::size_t i = idx / static_cast<std::size_t>(k);
        SampleOptions o;
        o.mode = mode;
        o.steps = steps;
        o.strategy = strategy;
        o.step_size = step_size;
        o.seed = derive_seed(ctx.seed, idx);
        o.text = texts[i];
        if (mode == Task::Csp) {
          o.fixed_types = prompts[i].types;
        } else if (fixed_atoms > 0) {
          o.num_atoms = fixed_atoms;
        } else {
          std::mt19937_64 rng(derive_seed(o.seed, 1));
          o.num_atoms = choose_num_atoms(ck, prompts[i].text, rng);
        }
        results[idx] = sample(ck, o);
      } catch (...) {
        failures[idx] = std::current_exception();
      }
    }
  };
  const auto t0 = Clock::now();
  const int jobs = std::max(1, std::min<int>(ctx.jobs, static_cast<int>(std::max<std::size_t>(total, 1))));
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int j = 0; j < jobs; ++j) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  const double secs = seconds_since(t0);
  for (const auto& f : failures)
    if (f) std::rethrow_exception(f);

  std::ostringstream os, timing;
  os << ordered_json{{"provenance", ctx.provenance()}}.dump() << '\n';
  int failed = 0;
  for (std::size_t idx = 0; idx < total; ++idx) {
    const auto& p = prompts[idx / static_cast<std::size_t>(k)];
    const int j = static_cast<int>(idx % static_cast<std::size_t>(k));
    const std::string id = p.id + "#" + std::to_string(j);
    const SampleResult& r = results[idx];
    ordered_json rec;
    if (r.crystal) {
      rec = crystal_to_json(r.crystal->with_id(id));
    } else {
      rec = {{"id", id}, {"failed", true}};
      ++failed;
    }
    rec["prompt_id"] = p.id;
    rec["sample"] = j;
    os << rec.dump() << '\n';
    const double mean_step = r.step_seconds.empty() ? 0.0 : r.total_seconds / r.step_seconds.size();
    timing << ordered_json{{"id", id},
                           {"steps", r.step_seconds.size()},
                           {"total_seconds", r.total_seconds},
                           {"mean_step_seconds", mean_step}}
                  .dump()
           << '\n';
  }
  write_text(out, os.str());
  write_text(out + ".timings.jsonl", timing.str());
  *ctx.log << "wrote " << total << " samples to " << out << " (" << failed << " failed, " << num(secs) << " s)\n";
}

// ---- evaluate -------------------------------------------------------------

struct GeneratedRecord {
  std::string prompt_id;
  std::optional<Crystal> crystal;
};

std::vector<GeneratedRecord> read_generated(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot open " + path);
  std::vector<GeneratedRecord> out;
  std::string line;
  for (int lineno = 1; std::getline(f, line); ++lineno) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const json j = json::parse(line);
      if (is_provenance_line(j)) continue;
      GeneratedRecord g;
      g.prompt_id = j.value("prompt_id", j.value("id", std::string()));
      if (!j.value("failed", false)) g.crystal = crystal_from_json(j);
      out.push_back(std::move(g));
    } catch (const json::exception& e) {
      throw DataError(path + " line " + std::to_string(lineno) + ": " + e.what());
    } catch (const DataError& e) {
      throw DataError(path + " line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

void cmd_evaluate(const Context& ctx) {
  const auto t0 = Clock::now();
  const auto gens = read_generated(ctx.required_path("gens", "--gens"));
  const auto refs = read_jsonl_dataset(ctx.required_path("refs", "--refs"));
  const std::string out = ctx.required_path("out", "--out");
  const bool csp = ctx.get<std::string>("mode", "gen") == "csp";

  std::map<std::string, PromptConstraints> constraints;
  if (auto pp = ctx.path("prompts"))
    for (const auto& p : read_prompts(*pp)) constraints[p.id] = parse_prompt(p.text);

  EvalInputs in;
  in.csp = csp;
  in.refs = refs;
  std::vector<std::string> group_ids;
  std::map<std::string, std::size_t> group_of;
  if (csp) {
    for (const auto& r : refs) {
      if (r.id().empty()) throw DataError("csp evaluation needs an id on every reference");
      group_of[r.id()] = group_ids.size();
      group_ids.push_back(r.id());
    }
    in.gens.resize(refs.size());
  }
  int orphans = 0;
  for (const auto& g : gens) {
    auto it = group_of.find(g.prompt_id);
    if (it == group_of.end()) {
      if (csp) {
        ++orphans;
        continue;
      }
      it = group_of.emplace(g.prompt_id, group_ids.size()).first;
      group_ids.push_back(g.prompt_id);
      in.gens.emplace_back();
    }
    in.gens[it->second].push_back(g.crystal);
  }
  if (!constraints.empty())
    for (const auto& id : group_ids) {
      auto c = constraints.find(id);
      in.prompts.push_back(c == constraints.end() ? std::nullopt : std::optional<PromptConstraints>(c->second));
    }
  const double load_secs = seconds_since(t0);

  MatcherConfig mc;
  const json mj = ctx.get("matcher", json::object());
  mc.ltol = mj.value("ltol", mc.ltol);
  mc.stol = mj.value("stol", mc.stol);
  mc.angle_tol = mj.value("angle_tol", mc.angle_tol);
  mc.validate();
  CoverageConfig cc;
  const json cj = ctx.get("coverage", json::object());
  cc.struct_thresh = cj.value("struct_thresh", cc.struct_thresh);
  cc.comp_thresh = cj.value("comp_thresh", cc.comp_thresh);
  cc.cutoff = cj.value("cutoff", cc.cutoff);
  cc.bins = cj.value("bins", cc.bins);

  const auto t1 = Clock::now();
  EvalReport report = evaluate(in, mc, cc);
  report.timings["load_seconds"] = load_secs;
  report.timings["evaluate_seconds"] = seconds_since(t1);

  const json doc = {{"provenance", ctx.provenance()}, {"report", to_json(report)}};
  require_valid(report_schema(), doc, "evaluation report");
  write_text(out, doc.dump(2) + "\n");
  if (auto csv = ctx.path("csv")) write_text(*csv, to_csv(report));
  if (orphans) *ctx.log << "warning: " << orphans << " generated records name no reference and were skipped\n";
  *ctx.log << "wrote " << out << "\n";
}

// ---- wiring ---------------------------------------------------------------

struct Command {
  const char* name;
  const char* section;
  const char* help;
  void (*run)(const Context&);
};

const Command kCommands[] = {
    {"make-toy", "make_toy", "Write the synthetic perovskite dataset", cmd_make_toy},
    {"gen-prompts", "gen_prompts", "Render a short text prompt for every dataset record", cmd_gen_prompts},
    {"train", "train", "Train a denoiser and write a checkpoint plus loss history", cmd_train},
    {"sample", "sample", "Generate structures from prompts", cmd_sample},
    {"evaluate", "evaluate", "Score generated structures against references", cmd_evaluate},
};

// Registers an option whose value, when given, lands in flags.section[key].
template <class T>
void section_option(CLI::App* app, std::map<std::string, std::optional<T>>& store, const std::string& flag,
                    const std::string& key, const std::string& help) {
  store[key];
  app->add_option(flag, store[key], help);
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Text-conditioned crystal structure generation by joint diffusion"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kToolVersion);

  Flags flags;
  std::map<std::string, std::optional<std::string>> strs;
  std::map<std::string, std::optional<long long>> ints;
  std::map<std::string, std::optional<double>> reals;
  std::map<CLI::App*, const Command*> by_app;

  for (const Command& c : kCommands) {
    CLI::App* sub = app.add_subcommand(c.name, c.help);
    by_app[sub] = &c;
    sub->add_option("--config", flags.config, "JSON run configuration")->check(CLI::ExistingFile);
    sub->add_option("--seed", flags.seed, "Base seed (overrides the config)");
    sub->add_option("--jobs", flags.jobs, "Worker threads")->check(CLI::PositiveNumber);
    sub->add_flag("--deterministic", flags.deterministic, "Single-threaded, repeatable execution");
    sub->add_option("--out", flags.out, "Primary output path");
    const std::string n = c.name;
    if (n == "make-toy") {
      section_option(sub, ints, "--count", "count", "Number of structures (at most 390)");
    } else if (n == "gen-prompts") {
      section_option(sub, strs, "--dataset", "dataset", "Input dataset JSONL");
    } else if (n == "train") {
      section_option(sub, strs, "--dataset", "dataset", "Training dataset JSONL");
      section_option(sub, strs, "--embeddings", "embeddings", "External prompt embeddings JSONL");
      section_option(sub, strs, "--history", "history", "Loss-history CSV path");
      section_option(sub, ints, "--epochs", "epochs", "Training epochs");
      section_option(sub, ints, "--batch-size", "batch_size", "Batch size");
      section_option(sub, reals, "--lr", "lr", "Learning rate");
      section_option(sub, strs, "--lr-schedule", "lr_schedule", "plateau, constant or cosine");
      section_option(sub, ints, "--T", "T", "Diffusion steps");
      section_option(sub, strs, "--task", "task", "gen or csp");
      section_option(sub, reals, "--lambda-ce", "lambda_ce", "Weight of the auxiliary cross-entropy");
    } else if (n == "sample") {
      section_option(sub, strs, "--checkpoint", "checkpoint", "Checkpoint file");
      section_option(sub, strs, "--prompts", "prompts", "Prompt JSONL");
      section_option(sub, strs, "--embeddings", "embeddings", "External prompt embeddings JSONL");
      section_option(sub, strs, "--mode", "mode", "gen or csp");
      section_option(sub, ints, "--num-samples", "num_samples", "Samples per prompt");
      section_option(sub, ints, "--steps", "steps", "Reverse steps (0 = all)");
      section_option(sub, strs, "--strategy", "strategy", "d3pm_ancestral or alg2_softmax");
      section_option(sub, reals, "--step-size", "step_size", "Corrector step size");
      section_option(sub, ints, "--num-atoms", "num_atoms", "Atom count for gen mode (0 = from prompt)");
    } else if (n == "evaluate") {
      section_option(sub, strs, "--gens", "gens", "Generated structures JSONL");
      section_option(sub, strs, "--refs", "refs", "Reference structures JSONL");
      section_option(sub, strs, "--prompts", "prompts", "Prompt JSONL for correctness checks");
      section_option(sub, strs, "--mode", "mode", "gen or csp");
      section_option(sub, strs, "--csv", "csv", "Optional CSV flattening of the report");
    }
  }

  std::vector<std::string> argv{"xtalgen"};
  argv.insert(argv.end(), args.begin(), args.end());
  std::vector<const char*> cargs;
  for (const auto& a : argv) cargs.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(cargs.size()), cargs.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForVersion&) {
    out << kToolVersion << "\n";
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    if (auto* sub = app.get_subcommands().empty() ? nullptr : app.get_subcommands().front())
      err << sub->help();
    else
      err << app.help();
    return exit_code_for(ErrorKind::Config);
  }

  const Command& cmd = *by_app.at(app.get_subcommands().front());
  for (auto& [k, v] : strs)
    if (v) flags.section[k] = *v;
  for (auto& [k, v] : ints)
    if (v) flags.section[k] = *v;
  for (auto& [k, v] : reals)
    if (v) flags.section[k] = *v;

  try {
    const Context ctx = make_context(cmd.name, cmd.section, flags, err);
    cmd.run(ctx);
    return 0;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return exit_code_for(e.kind());
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace xtalgen
