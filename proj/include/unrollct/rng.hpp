#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace unrollct {

/// SplitMix64 (Steele, Lea, Flood 2014). Portable: every stream is fully
/// determined by the 64-bit seed, independent of platform and std library.
/// `split(k)` derives an independent child stream for run/item k.
class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed = 0) : state_(seed) {}

  std::uint64_t next() {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  [[nodiscard]] SplitMix64 split(std::uint64_t k) const {
    SplitMix64 child(state_ ^ (0xD1B54A32D192ED03ULL * (k + 1)));
    child.next();
    return SplitMix64(child.next());
  }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  /// Uniform integer in [0, n), modulo with rejection.
  std::uint64_t below(std::uint64_t n) {
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t r;
    do r = next();
    while (r >= limit);
    return r % n;
  }

  /// Standard normal via Box-Muller; one pair is drawn per call, the sine
  /// branch is discarded so the stream position depends only on call count.
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  /// Poisson sample. Exact sequential inversion for mean < 50, otherwise
  /// round(mean + sqrt(mean) * z) clamped at 0.
  std::uint64_t poisson(double mean) {
    if (!(mean > 0.0)) return 0;
    if (mean < 50.0) {
      const double u = uniform();
      double p = std::exp(-mean);
      double cdf = p;
      std::uint64_t k = 0;
      while (u >= cdf && k < 1000) {
        ++k;
        p *= mean / static_cast<double>(k);
        cdf += p;
      }
      return k;
    }
    const double v = std::round(mean + std::sqrt(mean) * normal());
    return v < 0.0 ? 0 : static_cast<std::uint64_t>(v);
  }

 private:
  std::uint64_t state_;
};

}  // namespace unrollct
