#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace jmcal::rng {

// Stream purposes; part of every stream key so unrelated draws never share
// a generator.
enum class Purpose : std::uint64_t {
  Generate = 1,
  Pseudo = 2,
  Resample = 3,
  Replicate = 4,
  Test = 5,
};

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

// Key derived from (seed, purpose, counters); a pure function, so a stream
// depends only on its coordinates and never on scheduling.
inline std::uint64_t derive(std::uint64_t seed, Purpose purpose, std::initializer_list<std::uint64_t> counters) {
  std::uint64_t h = splitmix64(seed ^ 0x6A09E667F3BCC909ULL);
  h = splitmix64(h ^ static_cast<std::uint64_t>(purpose));
  for (std::uint64_t c : counters) h = splitmix64(h ^ splitmix64(c + 0x243F6A8885A308D3ULL));
  return h;
}

using Engine = std::mt19937_64;

inline Engine stream(std::uint64_t seed, Purpose purpose, std::initializer_list<std::uint64_t> counters) {
  return Engine(derive(seed, purpose, counters));
}

}  // namespace jmcal::rng
