#pragma once

#include <cstdint>
#include <random>

namespace treemaml {

using Rng = std::mt19937_64;

/// Named sub-streams so that independent consumers of one seed never share draws.
enum class Stream : std::uint64_t {
  centers = 1,
  train_tasks = 2,
  init = 3,
  test_tasks = 4,
  support_tasks = 5,
};

inline Rng make_rng(std::uint64_t seed, Stream stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream)};
  return Rng(seq);
}

}  // namespace treemaml
