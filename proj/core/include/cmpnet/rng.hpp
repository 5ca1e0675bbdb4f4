#pragma once

#include <cstdint>

namespace cmpnet {

// splitmix64 (Steele, Lea, Flood 2014). Chosen over the platform engines so
// that a given seed produces the same stream on every compiler and OS; every
// random draw in the library goes through this class.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  /// Uniform in [0, 1) with 53 random bits.
  double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Uniform in [lo, hi); requires lo <= hi.
  double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

  /// Unbiased integer in [0, n); n must be positive.
  std::uint64_t next_below(std::uint64_t n) {
    // reject the partial bucket at the top of the 64-bit range
    const std::uint64_t threshold = (0 - n) % n;
    for (;;) {
      const std::uint64_t r = next_u64();
      if (r >= threshold) return r % n;
    }
  }

  /// Derive an independent stream without advancing this one.
  Rng fork(std::uint64_t tag) const {
    return Rng(mix(state_ + 0x9e3779b97f4a7c15ull) ^ mix(tag ^ 0x632be59bd9b4e019ull));
  }

 private:
  static std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  std::uint64_t state_;
};

}  // namespace cmpnet
