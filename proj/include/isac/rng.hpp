#pragma once

#include <cstdint>
#include <random>
#include <string_view>

#include "isac/common.hpp"

namespace isac {

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace detail

/// Seeded random stream. All draws go through explicit conversions from raw
/// 64-bit engine output so identical seeds give identical values on every
/// platform (std::*_distribution is implementation-defined, so none are used).
///
/// Streams split hierarchically: child("stage") derives an independent stream
/// whose sequence does not depend on how much the parent has been consumed.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed), eng_(detail::splitmix64(seed)) {}

  std::uint64_t seed() const { return seed_; }

  Rng child(std::uint64_t tag) const {
    return Rng(detail::splitmix64(seed_ ^ detail::splitmix64(tag + 0x517cc1b727220a95ULL)));
  }
  Rng child(std::string_view tag) const { return child(detail::fnv1a(tag)); }

  /// Uniform in [0, 1).
  double uniform() {
    return static_cast<double>(eng_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  int uniform_int(int lo, int hi) {  // inclusive bounds
    return lo + static_cast<int>(static_cast<std::uint64_t>(uniform() * (hi - lo + 1)));
  }

  /// Standard normal via Box-Muller (pairʼs second value cached).
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform(), u2 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    spare_ = r * std::sin(2.0 * pi * u2);
    have_spare_ = true;
    return r * std::cos(2.0 * pi * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  /// Circularly-symmetric complex Gaussian with E[|z|^2] = power.
  cplx cnormal(double power = 1.0) {
    double s = std::sqrt(power * 0.5);
    return {normal() * s, normal() * s};
  }

 private:
  std::uint64_t seed_;
  std::mt19937_64 eng_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace isac
