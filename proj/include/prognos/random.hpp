#pragma once

#include <cstdint>
#include <random>

namespace prognos {

using Engine = std::mt19937_64;

/// SplitMix64 finalizer. Used to derive statistically independent stream
/// seeds from (master seed, index) pairs.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Seed of stream `index` under `master`. Depends only on the pair, so
/// work can be split over any number of threads.
constexpr std::uint64_t stream_seed(std::uint64_t master, std::uint64_t index) noexcept {
  return mix64(mix64(master) ^ mix64(index + 0x5851f42d4c957f2dULL));
}

inline Engine make_engine(std::uint64_t master, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(stream_seed(master, index)),
                    static_cast<std::uint32_t>(stream_seed(master, index) >> 32)};
  return Engine(seq);
}

inline Engine make_engine(std::uint64_t seed) { return make_engine(seed, 0); }

}  // namespace prognos
