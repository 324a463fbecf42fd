#pragma once

#include "ccbench/hash.hpp"

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace ccbench {

/// Seeded RNG with pinned sampling algorithms. std::mt19937_64 output is
/// specified by the standard, but the distribution adaptors are not, so the
/// bounded/real/normal draws are implemented here to keep every run
/// reproducible across compilers.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed), gen_(mix64(seed)) {}

  std::uint64_t seed() const { return seed_; }

  std::uint64_t next_u64() { return gen_(); }

  /// Uniform integer in [0, bound), bound >= 1. Rejection sampling.
  std::uint64_t uniform_u64(std::uint64_t bound) {
    const std::uint64_t limit = bound * ((~std::uint64_t{0}) / bound);
    std::uint64_t x;
    do {
      x = gen_();
    } while (x >= limit);
    return x % bound;
  }

  Eigen::Index uniform_index(Eigen::Index bound) {
    return static_cast<Eigen::Index>(
        uniform_u64(static_cast<std::uint64_t>(bound)));
  }

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform_real() {
    return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
  }

  double uniform_real(double lo, double hi) {
    return lo + (hi - lo) * uniform_real();
  }

  /// Standard normal via Box-Muller.
  double normal() {
    double u1 = uniform_real();
    while (u1 <= 0.0) u1 = uniform_real();
    const double u2 = uniform_real();
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(uniform_u64(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  /// Independent child stream, a pure function of (seed, tag, index); does
  /// not consume state from this generator.
  Rng derive(std::string_view tag, std::uint64_t index = 0) const {
    std::uint64_t h = fnv1a64(tag);
    h = mix64(h ^ mix64(seed_));
    h = mix64(h ^ mix64(index));
    return Rng(h);
  }

  Rng derive(std::string_view tag, std::string_view key) const {
    return derive(tag, fnv1a64(key));
  }

 private:
  std::uint64_t seed_;
  std::mt19937_64 gen_;
};

}  // namespace ccbench
