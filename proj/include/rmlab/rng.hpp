#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace rmlab {

// Mixes two 64-bit words into a derived stream seed (splitmix64 finalizer).
// Used everywhere a sub-stream is split off a run seed so that per-item
// streams are independent of iteration order.
inline std::uint64_t mix64(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a + 0x9e3779b97f4a7c15ull * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

// Deterministic RNG wrapper. mt19937_64 output is fully specified by the
// standard and every derived draw below is defined arithmetic on it, so
// identical seeds give identical streams on any conforming platform.
// (std::normal_distribution and friends are implementation-defined, which
// would break the bit-reproducibility contract; hence the hand-rolled draws.)
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  std::uint64_t next_u64() { return eng_(); }

  // Uniform in [0, 1) with 53 random bits.
  double uniform01() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  // Basic Box-Muller; one value per call, pair partner discarded.
  double normal(double mu, double sigma) {
    double u1 = 1.0 - uniform01();  // (0, 1], keeps log finite
    double u2 = uniform01();
    double mag = std::sqrt(-2.0 * std::log(u1));
    return mu + sigma * mag * std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  // Uniform integer in [0, n). Modulo bias is ~n/2^64, irrelevant here.
  int uniform_int(int n) { return static_cast<int>(eng_() % static_cast<std::uint64_t>(n)); }

  bool bernoulli(double p) { return uniform01() < p; }

 private:
  std::mt19937_64 eng_;
};

}  // namespace rmlab
