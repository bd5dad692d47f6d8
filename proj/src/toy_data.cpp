#include "xtalgen/toy_data.hpp"

#include "xtalgen/elements.hpp"
#include "xtalgen/error.hpp"

#include <algorithm>
#include <random>
#include <sstream>

namespace xtalgen {

namespace {

struct Species {
  const char* symbol;
  double radius;  // rough ionic radius, Angstrom
  int charge;
};

constexpr Species kSiteA[] = {{"Na", 1.39, 1}, {"K", 1.64, 1},  {"Rb", 1.72, 1}, {"Cs", 1.88, 1}, {"Ca", 1.34, 2},
                              {"Sr", 1.44, 2}, {"Ba", 1.61, 2}, {"La", 1.36, 3}, {"Y", 1.25, 3},  {"Pb", 1.49, 2}};
constexpr Species kSiteB[] = {{"Ti", 0.61, 4}, {"Zr", 0.72, 4}, {"Hf", 0.71, 4}, {"Nb", 0.64, 5}, {"Ta", 0.64, 5},
                              {"V", 0.54, 5},  {"Mn", 0.53, 4}, {"Fe", 0.65, 3}, {"Co", 0.61, 3}, {"Ni", 0.60, 2},
                              {"Al", 0.54, 3}, {"Ga", 0.62, 3}, {"Sn", 0.69, 4}};
constexpr Species kSiteX[] = {{"O", 1.40, -2}, {"F", 1.33, -1}, {"N", 1.46, -3}};

}  // namespace

std::vector<Crystal> make_toy_perovskites(int count, std::uint64_t seed) {
  constexpr int na = std::size(kSiteA), nb = std::size(kSiteB), nx = std::size(kSiteX);
  if (count < 1 || count > na * nb * nx) throw DataError("toy dataset size out of range");
  std::mt19937_64 rng(seed);
  std::vector<int> combos(na * nb * nx);
  for (int i = 0; i < static_cast<int>(combos.size()); ++i) combos[i] = i;
  std::shuffle(combos.begin(), combos.end(), rng);
  std::uniform_real_distribution<double> jitter(-0.02, 0.02);

  Coords sites(5, 3);
  sites << 0.0, 0.0, 0.0,  //
      0.5, 0.5, 0.5,       //
      0.5, 0.5, 0.0,       //
      0.5, 0.0, 0.5,       //
      0.0, 0.5, 0.5;

  std::vector<Crystal> out;
  out.reserve(count);
  for (int n = 0; n < count; ++n) {
    const int code = combos[n];
    const Species& a = kSiteA[code / (nb * nx)];
    const Species& b = kSiteB[(code / nx) % nb];
    const Species& x = kSiteX[code % nx];
    const double lat = 2.0 * (b.radius + x.radius) * (1.0 + jitter(rng));
    const int charge = a.charge + b.charge + 3 * x.charge;

    CrystalMeta meta;
    meta.formula = std::string(a.symbol) + b.symbol + x.symbol + "3";
    meta.elements = {a.symbol, b.symbol, x.symbol};
    meta.spacegroup = 221;
    meta.crystal_system = "cubic";
    meta.formation_energy = charge == 0 ? -1.0 - 0.1 * b.charge : 0.3 + 0.1 * std::abs(charge);
    meta.band_gap = (charge == 0 && x.charge == -2) ? 1.5 + b.radius : 0.0;
    meta.e_above_hull = charge == 0 ? 0.0 : 0.05 * std::abs(charge);

    std::vector<int> types = {*element_label(a.symbol), *element_label(b.symbol), *element_label(x.symbol),
                              *element_label(x.symbol), *element_label(x.symbol)};
    std::ostringstream id;
    id << "toy-" << n;
    out.emplace_back(std::move(types), sites, Mat3::Identity() * lat, std::move(meta), id.str());
  }
  return out;
}

}  // namespace xtalgen
