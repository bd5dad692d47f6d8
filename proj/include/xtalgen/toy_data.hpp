#pragma once

#include "xtalgen/crystal.hpp"

#include <cstdint>
#include <vector>

namespace xtalgen {

// Synthetic cubic ABX3 perovskites (N = 5) with distinct compositions, a
// composition-dependent lattice constant and prompt metadata. Used by the
// tests, the acceptance suite and `xtalgen make-toy`.
std::vector<Crystal> make_toy_perovskites(int count, std::uint64_t seed);

}  // namespace xtalgen
