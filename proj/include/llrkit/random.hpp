#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <span>

namespace llrkit {

using Rng = std::mt19937_64;

/// splitmix64 finalizer; used to decorrelate derived seeds.
constexpr std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Deterministic child seed from a master seed and cell coordinates.
/// Independent of evaluation order, so parallel sweeps reproduce serial ones.
inline std::uint64_t derive_seed(std::uint64_t master, std::initializer_list<std::uint64_t> coords) {
  std::uint64_t h = mix64(master);
  for (std::uint64_t c : coords) h = mix64(h ^ mix64(c + 0x632be59bd9b4e019ULL));
  return h;
}

inline void fill_normal(Rng& rng, std::span<double> out, double stddev = 1.0) {
  std::normal_distribution<double> dist(0.0, stddev);
  for (double& v : out) v = dist(rng);
}

}  // namespace llrkit
