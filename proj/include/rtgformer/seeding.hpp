#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <vector>

namespace rtgf {

/// Mixes a base seed with stream identifiers into an independent 64-bit seed,
/// so that e.g. episode i of a dataset does not depend on how many episodes
/// were generated before it.
inline std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> stream) {
  std::vector<std::uint32_t> words;
  words.reserve(2 + 2 * stream.size());
  words.push_back(static_cast<std::uint32_t>(base));
  words.push_back(static_cast<std::uint32_t>(base >> 32));
  for (auto s : stream) {
    words.push_back(static_cast<std::uint32_t>(s));
    words.push_back(static_cast<std::uint32_t>(s >> 32));
  }
  std::seed_seq seq(words.begin(), words.end());
  std::uint32_t out[2];
  seq.generate(out, out + 2);
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

// Stream tags for derive_seed.
namespace stream {
inline constexpr std::uint64_t episode_reset = 1;
inline constexpr std::uint64_t episode_policy = 2;
inline constexpr std::uint64_t random_reference = 3;
inline constexpr std::uint64_t expert_reference = 4;
inline constexpr std::uint64_t tier_mixture = 5;
inline constexpr std::uint64_t encoder = 6;
inline constexpr std::uint64_t model_init = 7;
inline constexpr std::uint64_t batches = 8;
inline constexpr std::uint64_t dropout = 9;
inline constexpr std::uint64_t evaluation = 10;
}  // namespace stream

}  // namespace rtgf
