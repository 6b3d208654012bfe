#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace difflearn {

using Rng = std::mt19937_64;

/// Stream tags keep the derived seeds of different consumers disjoint.
enum class Stream : std::uint64_t {
  pattern = 1,
  sample = 2,
  data = 3,
  topology = 4,
  activation = 5,
  theory = 6,
  oracle = 7,
};

// splitmix64 finalizer
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Seed for the stream addressed by (master, tag, path...). Pure function of
/// its arguments, so any block or repetition can be replayed in isolation.
inline std::uint64_t derive_seed(std::uint64_t master, Stream tag,
                                 std::initializer_list<std::uint64_t> path = {}) noexcept {
  std::uint64_t h = mix64(master ^ mix64(static_cast<std::uint64_t>(tag)));
  for (std::uint64_t p : path) h = mix64(h ^ mix64(p));
  return h;
}

inline Rng make_stream(std::uint64_t master, Stream tag,
                       std::initializer_list<std::uint64_t> path = {}) {
  return Rng(derive_seed(master, tag, path));
}

/// Uniform double in [0, 1) from the top 53 bits; identical on every platform.
inline double uniform01(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

}  // namespace difflearn
