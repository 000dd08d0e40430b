#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace bemtta {

// Stateless 64-bit mixer used to derive decorrelated stream seeds.
std::uint64_t splitmix64(std::uint64_t x);

// Deterministic RNG built on the raw mt19937_64 bit stream. The standard
// pins the engine output but not the library distributions, so the
// uniform/normal mappings live here: generated worlds are identical for a
// given seed on every toolchain.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // uniform in [0, 1) with 53-bit resolution
  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  // unbiased uniform integer in [0, n); n >= 1
  std::uint64_t uniform_below(std::uint64_t n);

  bool bernoulli(double p) { return uniform() < p; }

  // standard normal via Box-Muller, one spare cached
  double normal();

  std::vector<double> normal_vector(std::size_t n);

  // k distinct values from {0, ..., n-1}, ascending
  std::vector<int> sample_without_replacement(int n, int k);

  // index drawn proportionally to non-negative weights
  int sample_weighted(const std::vector<double>& weights);

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace bemtta
