#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace medssl {

/// Seeded generator with platform-independent derived distributions.
/// std::uniform_real_distribution and friends are implementation-defined,
/// so every draw used by the library goes through these helpers instead.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  bool bernoulli(double p) { return p > 0.0 && uniform() < p; }

  /// Uniform integer in [0, n). Rejection sampling keeps it unbiased.
  std::uint64_t below(std::uint64_t n) {
    if (n <= 1) return 0;
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t r;
    do {
      r = engine_();
    } while (r >= limit);
    return r % n;
  }

  double normal() {
    // Box-Muller; the second variate is discarded to keep the stream simple.
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  /// Normal(0, std) truncated to [-2 std, 2 std] by resampling.
  double truncated_normal(double std) {
    double v;
    do {
      v = normal();
    } while (std::abs(v) > 2.0);
    return v * std;
  }

  /// k distinct indices from [0, n), sorted ascending.
  std::vector<int> sample_sorted(int n, int k);

 private:
  std::mt19937_64 engine_;
};

}  // namespace medssl
