#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

#include "pwseg/error.hpp"

namespace pwseg {

/// Deterministic SplitMix64 generator.
///
/// Stream: the state advances by the golden-ratio increment 0x9E3779B97F4A7C15
/// and each output is the SplitMix64 finalizer of the new state:
///
///     z = state += 0x9E3779B97F4A7C15
///     z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
///     z = (z ^ (z >> 27)) * 0x94D049BB133111EB
///     return z ^ (z >> 31)
///
/// uniform():  top 53 bits of next_u64() scaled by 2^-53, in [0, 1).
/// normal():   Box-Muller cosine branch with two fresh uniforms per draw,
///             u1 = 1 - uniform() in (0, 1], u2 = uniform():
///             sqrt(-2 ln u1) * cos(2 pi u2). The sine branch is discarded so
///             every normal consumes exactly two u64 outputs.
/// split(k):   an independent child stream keyed by (current state, k); the
///             parent is not advanced, so children can be created in any order.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    state_ += kGolden;
    return mix(state_);
  }

  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double normal() {
    const double u1 = 1.0 - uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  /// Unbiased integer in [0, n) by rejection.
  std::uint64_t uniform_index(std::uint64_t n) {
    require(n > 0, ErrorKind::parameter, "uniform_index over an empty range");
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t r = next_u64();
    while (r >= limit) r = next_u64();
    return r % n;
  }

  Rng split(std::uint64_t stream) const {
    return Rng(mix(state_ ^ mix(stream * kGolden + 0x632BE59BD9B4E019ULL)));
  }

  std::uint64_t state() const { return state_; }

 private:
  static constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

  static std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  std::uint64_t state_;
};

}  // namespace pwseg
