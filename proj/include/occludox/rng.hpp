#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace occludox {

/// SplitMix64 stream. Every random draw in the library comes from here so
/// that seeded runs are reproducible independently of the standard library.
class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) noexcept : state_(seed) {}

  std::uint64_t next() noexcept {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() noexcept { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n). Multiply-shift reduction; n must be > 0.
  std::uint64_t below(std::uint64_t n) noexcept {
    __extension__ using U128 = unsigned __int128;
    return static_cast<std::uint64_t>((static_cast<U128>(next()) * n) >> 64);
  }

  /// Standard normal via Box-Muller, one variate per two uniforms.
  double normal() noexcept {
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

 private:
  std::uint64_t state_;
};

/// Seed for an independent sub-stream identified by `stream` and `index`.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream, std::uint64_t index = 0) noexcept {
  SplitMix64 g(seed ^ (stream * 0xD1B54A32D192ED03ULL));
  g.next();
  SplitMix64 h(g.next() + index * 0x9E3779B97F4A7C15ULL);
  return h.next();
}

}  // namespace occludox
