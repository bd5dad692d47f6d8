#include "xtalgen/evaluation.hpp"

#include "xtalgen/elements.hpp"
#include "xtalgen/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>

namespace xtalgen {

using nlohmann::json;

void MatcherConfig::validate() const {
  if (!(ltol > 0) || !(stol > 0) || !(angle_tol > 0)) throw ConfigError("matcher tolerances must be positive");
}

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Minimum-cost perfect assignment on a square cost matrix (row -> column).
std::vector<int> hungarian(const Eigen::MatrixXd& cost) {
  const int n = static_cast<int>(cost.rows());
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0), minv(n + 1);
  std::vector<int> p(n + 1, 0), way(n + 1, 0);
  std::vector<char> used(n + 1);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::fill(minv.begin(), minv.end(), kInf);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      double delta = kInf;
      int j1 = 0;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }
  std::vector<int> assign(n);
  for (int j = 1; j <= n; ++j) assign[p[j] - 1] = j - 1;
  return assign;
}

// Shortest image of a fractional difference under the metric g; returns the
// chosen fractional vector.
constexpr int kTauGrid = 4;

RowVec3 min_image_frac(const RowVec3& d, const Mat3& g) {
  RowVec3 base;
  for (int k = 0; k < 3; ++k) base(k) = d(k) - std::floor(d(k) + 0.5);
  RowVec3 best = base;
  double best_d2 = base * g * base.transpose();
  for (int a = -1; a <= 1; ++a)
    for (int b = -1; b <= 1; ++b)
      for (int c = -1; c <= 1; ++c) {
        if (!a && !b && !c) continue;
        const RowVec3 cand = base + RowVec3(a, b, c);
        const double d2 = cand * g * cand.transpose();
        if (d2 < best_d2) {
          best_d2 = d2;
          best = cand;
        }
      }
  return best;
}

struct SiteProblem {
  Coords gen, ref;  // fractional, in a shared basis
  Mat3 metric;
  std::vector<std::vector<int>> gen_species, ref_species;  // atom indices per species, same order
};

struct Alignment {
  double sum_sq = kInf;
  double max_d2 = kInf;
};

// Alternates optimal per-species assignment and least-squares translation.
Alignment refine(const SiteProblem& sp, RowVec3 tau) {
  const int n = static_cast<int>(sp.gen.rows());
  std::vector<int> perm(n, -1), prev;
  std::vector<RowVec3> delta(static_cast<std::size_t>(n));
  for (int iter = 0; iter < 100; ++iter) {
    for (std::size_t s = 0; s < sp.gen_species.size(); ++s) {
      const auto& gi = sp.gen_species[s];
      const auto& ri = sp.ref_species[s];
      const int m = static_cast<int>(gi.size());
      Eigen::MatrixXd cost(m, m);
      for (int a = 0; a < m; ++a)
        for (int b = 0; b < m; ++b) {
          const RowVec3 d = min_image_frac(sp.gen.row(gi[a]) + tau - sp.ref.row(ri[b]), sp.metric);
          cost(a, b) = d * sp.metric * d.transpose();
        }
      const auto as = hungarian(cost);
      for (int a = 0; a < m; ++a) perm[gi[a]] = ri[as[a]];
    }
    RowVec3 mean = RowVec3::Zero();
    for (int i = 0; i < n; ++i) {
      delta[i] = min_image_frac(sp.gen.row(i) + tau - sp.ref.row(perm[i]), sp.metric);
      mean += delta[i];
    }
    mean /= n;
    tau -= mean;
    const bool settled = perm == prev && mean.cwiseAbs().maxCoeff() < 1e-14;
    prev = perm;
    if (settled) break;
  }
  Alignment out;
  out.sum_sq = 0;
  out.max_d2 = 0;
  for (int i = 0; i < n; ++i) {
    const RowVec3 d = min_image_frac(sp.gen.row(i) + tau - sp.ref.row(perm[i]), sp.metric);
    const double d2 = d * sp.metric * d.transpose();
    out.sum_sq += d2;
    out.max_d2 = std::max(out.max_d2, d2);
  }
  return out;
}

Coords to_basis(const Coords& frac, const Mat3& inverse_transform) { return wrap_frac(Coords(frac * inverse_transform)); }

}  // namespace

const std::vector<IMat3>& small_unimodular_matrices() {
  static const std::vector<IMat3> all = [] {
    std::vector<IMat3> out;
    IMat3 m;
    for (int code = 0; code < 19683; ++code) {
      int c = code;
      for (int k = 0; k < 9; ++k) {
        m(k / 3, k % 3) = c % 3 - 1;
        c /= 3;
      }
      if (m.cast<double>().determinant() > 0.5 && m.cast<double>().determinant() < 1.5) out.push_back(m);
    }
    // identity first so exact matches are found without searching
    auto it = std::find(out.begin(), out.end(), IMat3::Identity());
    std::rotate(out.begin(), it, it + 1);
    return out;
  }();
  return all;
}

bool lattices_compatible(const Mat3& a, const Mat3& b, const MatcherConfig& cfg) {
  const LatticeParams pa = params_from_lattice(a), pb = params_from_lattice(b);
  const double la[3] = {pa.a, pa.b, pa.c}, lb[3] = {pb.a, pb.b, pb.c};
  const double aa[3] = {pa.alpha, pa.beta, pa.gamma}, ab[3] = {pb.alpha, pb.beta, pb.gamma};
  for (int k = 0; k < 3; ++k) {
    if (std::abs(la[k] - lb[k]) > cfg.ltol * 0.5 * (la[k] + lb[k])) return false;
    if (std::abs(aa[k] - ab[k]) > cfg.angle_tol) return false;
  }
  return true;
}

std::optional<MatchResult> match_structures(const Crystal& gen, const Crystal& ref, const MatcherConfig& cfg) {
  cfg.validate();
  const int n = ref.num_atoms();
  if (gen.num_atoms() != n) return std::nullopt;
  {
    auto tg = gen.atom_types(), tr = ref.atom_types();
    std::sort(tg.begin(), tg.end());
    std::sort(tr.begin(), tr.end());
    if (tg != tr) return std::nullopt;
  }

  SiteProblem sp;
  std::map<int, int> counts;
  for (int a : ref.atom_types()) ++counts[a];
  for (const auto& [species, _] : counts) {
    sp.gen_species.emplace_back();
    sp.ref_species.emplace_back();
    for (int i = 0; i < n; ++i) {
      if (gen.atom_types()[i] == species) sp.gen_species.back().push_back(i);
      if (ref.atom_types()[i] == species) sp.ref_species.back().push_back(i);
    }
  }
  // anchor on the rarest species (lowest label on ties)
  std::size_t anchor = 0;
  for (std::size_t s = 1; s < sp.ref_species.size(); ++s)
    if (sp.ref_species[s].size() < sp.ref_species[anchor].size()) anchor = s;

  const ReducedCell rr = reduce_lattice(ref.lattice());
  const ReducedCell rg = reduce_lattice(gen.lattice());
  sp.ref = to_basis(ref.frac_coords(), rr.transform.cast<double>().inverse());
  const Coords gen_reduced = to_basis(gen.frac_coords(), rg.transform.cast<double>().inverse());
  const Mat3 g_ref = rr.lattice * rr.lattice.transpose();

  std::optional<MatchResult> best;
  for (const IMat3& m : small_unimodular_matrices()) {
    const Mat3 md = m.cast<double>();
    const Mat3 lg = md * rg.lattice;
    if (!lattices_compatible(lg, rr.lattice, cfg)) continue;
    sp.gen = to_basis(gen_reduced, md.inverse());
    sp.metric = 0.5 * (g_ref + lg * lg.transpose());
    const double scale = std::cbrt(std::sqrt(sp.metric.determinant()) / n);
    const double tol2 = std::pow(cfg.stol * scale, 2);
    auto consider = [&](const RowVec3& tau0) {
      const Alignment al = refine(sp, tau0);
      if (al.max_d2 > tol2) return;
      const double rmse = std::sqrt(al.sum_sq / n) / scale;
      if (!best || rmse < best->rmse) best = MatchResult{rmse, std::sqrt(al.max_d2) / scale};
    };
    for (int a : sp.gen_species[anchor])
      for (int b : sp.ref_species[anchor]) consider(sp.ref.row(b) - sp.gen.row(a));
    // the least-squares optimum need not put any atom on its partner
    for (int a = 0; a < kTauGrid; ++a)
      for (int b = 0; b < kTauGrid; ++b)
        for (int c = 0; c < kTauGrid; ++c)
          consider(RowVec3(a, b, c) / kTauGrid + sp.ref.row(sp.ref_species[anchor][0]) - sp.gen.row(sp.gen_species[anchor][0]));
  }
  return best;
}

MatchRate match_rate(const std::vector<std::vector<std::optional<Crystal>>>& gens, const std::vector<Crystal>& refs,
                     const MatcherConfig& cfg) {
  if (gens.size() != refs.size()) throw DataError("match rate needs one candidate group per reference");
  MatchRate out;
  out.total = static_cast<int>(refs.size());
  double rmse_sum = 0;
  for (std::size_t i = 0; i < refs.size(); ++i) {
    std::optional<double> best;
    for (const auto& g : gens[i]) {
      if (!g) continue;
      if (const auto m = match_structures(*g, refs[i], cfg); m && (!best || m->rmse < *best)) best = m->rmse;
    }
    if (best) {
      ++out.matched;
      rmse_sum += *best;
    }
  }
  if (out.total > 0) out.match_rate = 100.0 * out.matched / out.total;
  if (out.matched > 0) out.mean_rmse = rmse_sum / out.matched;
  return out;
}

bool structural_validity(const Crystal& c, double cutoff) {
  const PeriodicGeometry geo(c.lattice());
  const Coords& x = c.frac_coords();
  const int n = c.num_atoms();
  if (!(geo.min_image(RowVec3::Zero(), true).norm() > cutoff)) return false;
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j)
      if (!(geo.distance(x.row(i), x.row(j)) > cutoff)) return false;
  return true;
}

std::string to_string(CompValidity v) {
  switch (v) {
    case CompValidity::Valid: return "valid";
    case CompValidity::Invalid: return "invalid";
    case CompValidity::Indeterminate: return "indeterminate";
    case CompValidity::NotApplicable: break;
  }
  return "not_applicable";
}

CompValidity compositional_validity(const Crystal& c) {
  const Composition comp = composition_of(c.atom_types());
  if (comp.size() < 2) return CompValidity::NotApplicable;
  std::set<long> reachable{0};
  for (const auto& [label, count] : comp) {
    const auto states = oxidation_states(label);
    if (states.empty()) return CompValidity::Indeterminate;
    std::set<long> next;
    for (long s : reachable)
      for (int q : states) next.insert(s + static_cast<long>(count) * q);
    reachable = std::move(next);
  }
  return reachable.count(0) ? CompValidity::Valid : CompValidity::Invalid;
}

Fingerprint fingerprint(const Crystal& c, const CoverageConfig& cfg) {
  if (!(cfg.cutoff > 0) || cfg.bins < 1) throw ConfigError("fingerprint needs a positive cutoff and bin count");
  Fingerprint f;
  const int n = c.num_atoms();
  f.composition = Eigen::VectorXd::Zero(kNumTypes);
  for (int a : c.atom_types()) f.composition(a) += 1.0 / n;

  f.structure = Eigen::VectorXd::Zero(cfg.bins);
  const ReducedCell red = reduce_lattice(c.lattice());
  const Mat3& lat = red.lattice;
  const Coords x = to_basis(c.frac_coords(), red.transform.cast<double>().inverse());
  const Mat3 inv = lat.inverse();
  int reach[3];
  for (int k = 0; k < 3; ++k) reach[k] = static_cast<int>(std::ceil(cfg.cutoff * inv.col(k).norm() + 0.5));
  const double width = cfg.cutoff / cfg.bins;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      RowVec3 d = x.row(j) - x.row(i);
      for (int k = 0; k < 3; ++k) d(k) -= std::floor(d(k) + 0.5);
      for (int a = -reach[0]; a <= reach[0]; ++a)
        for (int b = -reach[1]; b <= reach[1]; ++b)
          for (int e = -reach[2]; e <= reach[2]; ++e) {
            const double r = ((d + RowVec3(a, b, e)) * lat).norm();
            if (r <= 1e-8 || r > cfg.cutoff) continue;
            f.structure(std::min(cfg.bins - 1, static_cast<int>(r / width))) += 1.0;
          }
    }
  const double norm = f.structure.norm();
  if (norm > 0) f.structure /= norm;
  return f;
}

Coverage coverage(const std::vector<Crystal>& gens, const std::vector<Crystal>& refs, const CoverageConfig& cfg) {
  if (gens.empty() || refs.empty()) throw DataError("coverage needs non-empty generated and reference sets");
  std::vector<Fingerprint> fg, fr;
  for (const auto& c : gens) fg.push_back(fingerprint(c, cfg));
  for (const auto& c : refs) fr.push_back(fingerprint(c, cfg));
  auto close = [&](const Fingerprint& a, const Fingerprint& b) {
    return (a.composition - b.composition).norm() <= cfg.comp_thresh &&
           (a.structure - b.structure).norm() <= cfg.struct_thresh;
  };
  auto covered = [&](const std::vector<Fingerprint>& targets, const std::vector<Fingerprint>& pool) {
    int hit = 0;
    for (const auto& t : targets)
      hit += std::any_of(pool.begin(), pool.end(), [&](const Fingerprint& p) { return close(t, p); });
    return 100.0 * hit / static_cast<double>(targets.size());
  };
  return {covered(fr, fg), covered(fg, fr)};
}

double emd_1d(std::vector<double> a, std::vector<double> b) {
  if (a.empty() || b.empty()) throw DataError("EMD needs two non-empty samples");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  std::vector<double> pts;
  pts.reserve(a.size() + b.size());
  std::merge(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(pts));
  // integrate |F_a - F_b| between consecutive support points
  double total = 0;
  std::size_t ia = 0, ib = 0;
  for (std::size_t k = 0; k + 1 < pts.size(); ++k) {
    while (ia < a.size() && a[ia] <= pts[k]) ++ia;
    while (ib < b.size() && b[ib] <= pts[k]) ++ib;
    total += std::abs(ia / na - ib / nb) * (pts[k + 1] - pts[k]);
  }
  return total;
}

double density(const Crystal& c) {
  double mass = 0;
  for (int a : c.atom_types()) mass += atomic_mass(a);
  // 1 u / 1 A^3 = 1.66053907 g/cm^3
  return mass * 1.66053907 / std::abs(c.volume());
}

int num_elements(const Crystal& c) { return static_cast<int>(composition_of(c.atom_types()).size()); }

std::map<std::string, std::optional<double>> property_stats(const std::vector<Crystal>& gens,
                                                            const std::vector<Crystal>& refs,
                                                            const PropertyPredictor& predictor) {
  std::map<std::string, std::optional<double>> out{
      {"density", std::nullopt}, {"num_elements", std::nullopt}, {"formation_energy", std::nullopt}};
  if (gens.empty() || refs.empty()) return out;
  auto column = [](const std::vector<Crystal>& cs, auto f) {
    std::vector<double> v;
    for (const auto& c : cs) v.push_back(f(c));
    return v;
  };
  out["density"] = emd_1d(column(gens, density), column(refs, density));
  auto nelem = [](const Crystal& c) { return static_cast<double>(num_elements(c)); };
  out["num_elements"] = emd_1d(column(gens, nelem), column(refs, nelem));
  if (predictor) {
    std::vector<double> pg, pr;
    bool ok = true;
    for (const auto& c : gens)
      if (auto v = predictor(c, "formation_energy")) pg.push_back(*v); else ok = false;
    for (const auto& c : refs)
      if (auto v = predictor(c, "formation_energy")) pr.push_back(*v); else ok = false;
    if (ok) out["formation_energy"] = emd_1d(pg, pr);
  }
  return out;
}

std::string to_string(FieldCheck f) {
  switch (f) {
    case FieldCheck::Match: return "match";
    case FieldCheck::Mismatch: return "mismatch";
    case FieldCheck::Unsupported: return "unsupported";
    case FieldCheck::Skipped: break;
  }
  return "skipped";
}

std::map<std::string, FieldCheck> prompt_correctness(const Crystal& gen, const PromptConstraints& constraints,
                                                     const PropertyPredictor& predictor) {
  std::map<std::string, FieldCheck> out;
  auto verdict = [](bool ok) { return ok ? FieldCheck::Match : FieldCheck::Mismatch; };
  if (!constraints.formula.empty()) {
    bool ok = false;
    try {
      ok = canonical_formula(composition_of(gen.atom_types())) == canonical_formula(parse_formula(constraints.formula));
    } catch (const DataError&) {
    }
    out["formula"] = verdict(ok);
  }
  if (constraints.crystal_system) {
    const auto want = parse_crystal_system(*constraints.crystal_system);
    out["crystal_system"] = verdict(want && *want == classify_crystal_system(gen.lattice()));
  }
  if (constraints.spacegroup) out["spacegroup"] = FieldCheck::Unsupported;

  auto property = [&](const char* name, auto check) {
    if (!predictor) {
      out[name] = FieldCheck::Skipped;
      return;
    }
    const auto v = predictor(gen, name);
    out[name] = v ? verdict(check(*v)) : FieldCheck::Skipped;
  };
  if (constraints.formation_energy_sign != EnergySign::Unspecified)
    property("formation_energy", [&](double v) { return energy_sign_of(v) == constraints.formation_energy_sign; });
  if (constraints.band_gap_sign != GapSign::Unspecified)
    property("band_gap", [&](double v) { return gap_sign_of(v) == constraints.band_gap_sign; });
  if (constraints.e_above_hull_sign != GapSign::Unspecified)
    property("e_above_hull", [&](double v) { return gap_sign_of(v) == constraints.e_above_hull_sign; });
  return out;
}

namespace {

json optional_number(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

}  // namespace

json to_json(const EvalReport& r) {
  json emd = json::object();
  for (const auto& [k, v] : r.emd) emd[k] = optional_number(v);
  return {{"match_rate", optional_number(r.match_rate)},
          {"mean_rmse", optional_number(r.mean_rmse)},
          {"struct_validity", r.struct_validity},
          {"comp_validity", optional_number(r.comp_validity)},
          {"comp_indeterminate", r.comp_indeterminate},
          {"cov_r", optional_number(r.cov_r)},
          {"cov_p", optional_number(r.cov_p)},
          {"emd", emd},
          {"correctness", r.correctness},
          {"unchecked", r.unchecked},
          {"timings", r.timings},
          {"num_generated", r.num_generated},
          {"num_failed", r.num_failed},
          {"num_references", r.num_references}};
}

std::string to_csv(const EvalReport& r) {
  std::ostringstream os;
  os.precision(10);
  os << "name,value,count\n";
  auto row = [&](const std::string& name, const std::optional<double>& v, int count) {
    os << name << ',';
    if (v) os << *v;
    os << ',' << count << '\n';
  };
  row("match_rate", r.match_rate, r.num_references);
  row("mean_rmse", r.mean_rmse, r.num_references);
  row("struct_validity", r.struct_validity, r.num_generated);
  row("comp_validity", r.comp_validity, r.num_generated);
  row("comp_indeterminate", r.comp_indeterminate, r.num_generated);
  row("cov_r", r.cov_r, r.num_references);
  row("cov_p", r.cov_p, r.num_generated);
  for (const auto& [k, v] : r.emd) row("emd." + k, v, r.num_generated);
  for (const auto& [k, v] : r.correctness) row("correctness." + k, v, r.num_generated);
  for (const auto& [k, v] : r.timings) row("timing." + k, v, 1);
  return os.str();
}

EvalReport evaluate(const EvalInputs& in, const MatcherConfig& mcfg, const CoverageConfig& ccfg,
                    const PropertyPredictor& predictor) {
  EvalReport r;
  r.num_references = static_cast<int>(in.refs.size());
  std::vector<Crystal> present;
  for (const auto& group : in.gens)
    for (const auto& g : group) {
      ++r.num_generated;
      if (g) present.push_back(*g); else ++r.num_failed;
    }
  if (r.num_generated == 0) throw DataError("nothing to evaluate: no generated samples");

  int valid = 0;
  for (const auto& c : present) valid += structural_validity(c);
  r.struct_validity = 100.0 * valid / r.num_generated;

  int applicable = 0, comp_ok = 0;
  for (const auto& c : present) {
    const CompValidity v = compositional_validity(c);
    if (v == CompValidity::NotApplicable) continue;
    ++applicable;
    comp_ok += v == CompValidity::Valid;
    r.comp_indeterminate += v == CompValidity::Indeterminate;
  }
  applicable += r.num_failed;
  if (applicable > r.num_failed) r.comp_validity = 100.0 * comp_ok / applicable;

  if (!present.empty() && !in.refs.empty()) {
    const Coverage cov = coverage(present, in.refs, ccfg);
    r.cov_r = cov.recall;
    r.cov_p = cov.precision;
  }
  r.emd = property_stats(present, in.refs, predictor);

  if (in.csp) {
    const MatchRate mr = match_rate(in.gens, in.refs, mcfg);
    r.match_rate = mr.match_rate;
    if (mr.matched > 0) r.mean_rmse = mr.mean_rmse;
  }

  if (!in.prompts.empty()) {
    if (in.prompts.size() != in.gens.size()) throw DataError("prompt list must parallel the generated groups");
    std::map<std::string, std::pair<int, int>> tally;  // field -> (matched, checked)
    for (std::size_t i = 0; i < in.gens.size(); ++i) {
      if (!in.prompts[i]) continue;
      for (const auto& g : in.gens[i]) {
        if (!g) continue;
        for (const auto& [field, check] : prompt_correctness(*g, *in.prompts[i], predictor)) {
          if (check == FieldCheck::Unsupported || check == FieldCheck::Skipped) {
            r.unchecked[field] = to_string(check);
            continue;
          }
          auto& t = tally[field];
          t.first += check == FieldCheck::Match;
          ++t.second;
        }
      }
    }
    for (const auto& [field, t] : tally) r.correctness[field] = 100.0 * t.first / t.second;
  }
  return r;
}

}  // namespace xtalgen
