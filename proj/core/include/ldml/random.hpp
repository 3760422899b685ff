#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace ldml {

/// Mixes a master seed with a path of indices (split, fold, task, ...) into an
/// independent stream seed. Order-sensitive and platform independent.
std::uint64_t derive_seed(std::uint64_t master, std::initializer_list<std::uint64_t> path);

/// Seeded generator whose draws are identical on every platform. The standard
/// <random> distributions are implementation-defined, so uniform, index and
/// normal draws are produced here from the raw mt19937_64 stream.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  /// Uniform on {0, ..., bound-1}; bound must be positive.
  std::uint64_t uniform_index(std::uint64_t bound);

  /// Standard normal via Box-Muller (one draw per call, no caching).
  double normal();

  bool bernoulli(double p) { return uniform() < p; }

 private:
  std::mt19937_64 engine_;
};

}  // namespace ldml
