#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>

namespace mian {

// Deterministic random source. mt19937_64 output is fully specified by the
// standard; the variate transforms below are self-contained so that a given
// seed yields the same stream on every toolchain.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t bits() { return gen_(); }

  // Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Marsaglia polar method; no state beyond the generator (the spare draw is
  // discarded so that sequence position depends only on the number of calls).
  double normal() {
    for (;;) {
      double u = 2.0 * uniform() - 1.0;
      double v = 2.0 * uniform() - 1.0;
      double s = u * u + v * v;
      if (s > 0.0 && s < 1.0) {
        return u * std::sqrt(-2.0 * std::log(s) / s);
      }
    }
  }

  double normal(double mean, double sd) { return mean + sd * normal(); }

  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) {
    // Rejection sampling to avoid modulo bias.
    std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % n;
    for (;;) {
      std::uint64_t x = gen_();
      if (x < limit) return x % n;
    }
  }

  // Exponential(1), used for uniform draws from the probability simplex.
  double exponential() {
    double u;
    do { u = uniform(); } while (u <= 0.0);
    return -std::log1p(-u);
  }

 private:
  std::mt19937_64 gen_;
};

}  // namespace mian
