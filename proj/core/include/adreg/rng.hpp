#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace adreg {

/// Deterministic random stream. std::mt19937_64 has a standardized sequence;
/// the value-mapping here avoids std::uniform_real_distribution, whose output
/// is implementation-defined, so a seed reproduces bit-identical draws on any
/// platform.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  std::uint64_t next_u64() { return eng_(); }

  /// Uniform in [0, 1).
  double uniform01() { return double(eng_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi_inclusive) {
    // Rejection-free modulo is fine here: ranges are tiny vs 2^64.
    return lo + std::int64_t(eng_() % std::uint64_t(hi_inclusive - lo + 1));
  }

  /// Standard normal via Box-Muller.
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform01(), u2 = uniform01();
    while (u1 <= 0.0) u1 = uniform01();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 6.28318530717958647692 * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  /// Derive an independent stream for (seed, stream-id) pairs, e.g. one per
  /// sample index. SplitMix64 mixing keeps nearby ids decorrelated.
  static std::uint64_t derive(std::uint64_t seed, std::uint64_t id) {
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (id + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

 private:
  std::mt19937_64 eng_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

/// FNV-1a 64-bit hash, used for config hashes and determinism checks.
inline std::uint64_t fnv1a64(const void* data, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ull) {
  const unsigned char* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

}  // namespace adreg
