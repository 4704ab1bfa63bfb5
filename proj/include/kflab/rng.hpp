#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace kflab {

// SplitMix64 step; used to derive independent seeds from (seed, stream ids).
uint64_t mix64(uint64_t x);
uint64_t derive_seed(uint64_t base, uint64_t a, uint64_t b = 0, uint64_t c = 0);

// Deterministic RNG. mt19937_64 is fully specified by the standard, and all
// distributions here are hand-rolled so streams are identical on every
// platform (std::*_distribution is implementation-defined).
class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(mix64(seed ^ 0x9e3779b97f4a7c15ull)) {}

  uint64_t next_u64() { return gen_(); }

  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n). Lemire's multiply-shift; slight bias < 2^-64.
  uint64_t bounded(uint64_t n);

  // Uniform integer in [lo, hi] inclusive.
  long long uniform_int(long long lo, long long hi) {
    return lo + static_cast<long long>(bounded(static_cast<uint64_t>(hi - lo + 1)));
  }

  // Standard normal via Box-Muller. Caches the second deviate.
  double normal();
  double normal(double mu, double sd) { return mu + sd * normal(); }

  // Fisher-Yates.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(bounded(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 gen_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace kflab
