#pragma once

#include <cstdint>
#include <random>

#include "surfreg/real.hpp"

namespace SURFREG_NAMESPACE::detail {

// Independent stream `stream` of a user seed.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
  std::uint32_t words[2];
  seq.generate(words, words + 2);
  return (static_cast<std::uint64_t>(words[0]) << 32) | words[1];
}

}  // namespace SURFREG_NAMESPACE::detail
