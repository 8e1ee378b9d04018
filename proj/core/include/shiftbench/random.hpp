#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace shiftbench {

using Rng = std::mt19937_64;

/// Counter-based seed expansion: every stream is a pure function of
/// (root seed, purpose, index), so replications can run in any order.
std::uint64_t derive_seed(std::uint64_t root, std::string_view purpose, std::uint64_t index = 0);

inline Rng make_rng(std::uint64_t root, std::string_view purpose, std::uint64_t index = 0)
{
  return Rng(derive_seed(root, purpose, index));
}

std::uint64_t fnv1a64(std::string_view bytes);

} // namespace shiftbench
