#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace segfool {

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t& state) {
  state += 0x9E3779B97F4A7C15ull;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xCBF29CE484222325ull;
  for (char c : s) {
    h ^= static_cast<std::uint8_t>(c);
    h *= 0x100000001B3ull;
  }
  return h;
}

}  // namespace detail

/// Pure seed fan-out: every subsystem draws from its own derived stream so the
/// single run seed pins the whole pipeline.
inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag) {
  std::uint64_t s = seed ^ (detail::fnv1a(tag) + 0x9E3779B97F4A7C15ull);
  return detail::splitmix64(s);
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) {
  std::uint64_t s = seed ^ (index * 0xD1342543DE82EF95ull + 0x2545F4914F6CDD1Dull);
  return detail::splitmix64(s);
}

/// Deterministic generator with implementation pinned here (not delegated to
/// <random>) so identical seeds give identical streams on any toolchain.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed ? seed : 0x853C49E6748FEA9Bull) {}

  std::uint64_t next_u64() { return detail::splitmix64(state_); }

  /// Uniform in [0, bound), bound > 0. Lemire reduction, bias negligible at
  /// 64-bit state.
  std::uint32_t next_below(std::uint32_t bound) {
    return static_cast<std::uint32_t>((next_u64() >> 32) * static_cast<std::uint64_t>(bound) >> 32);
  }

  /// Uniform integer in [lo, hi] inclusive.
  int uniform_int(int lo, int hi) {
    return lo + static_cast<int>(next_below(static_cast<std::uint32_t>(hi - lo + 1)));
  }

  /// Uniform double in [0, 1).
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double a, double b) { return a + (b - a) * uniform(); }

  /// Standard normal via Box-Muller (pair cached).
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    do {
      u1 = uniform();
    } while (u1 <= 1e-12);
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  bool coin(double p) { return uniform() < p; }

 private:
  std::uint64_t state_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

}  // namespace segfool
