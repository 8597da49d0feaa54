#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <random>

namespace spidet {

// Seeded random generator with explicit substream derivation.
//
// The engine is std::mt19937_64, whose output sequence is pinned by the
// standard, and all distributions are implemented here rather than through
// <random> distribution objects (whose output is implementation-defined).
// Identical seeds therefore give identical draws on every platform, and
// substreams keyed by task indices make parallel schedules reproducible.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(mix(seed)) {}

  // Independent stream keyed by (seed, tags...). Streams with different tag
  // sequences are unrelated for all practical purposes.
  static Rng substream(std::uint64_t seed, std::initializer_list<std::uint64_t> tags) {
    std::uint64_t h = mix(seed);
    for (std::uint64_t t : tags) h = mix(h ^ (t + 0x9e3779b97f4a7c15ULL));
    return Rng(h);
  }

  // Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

  // Standard normal via Box-Muller, one spare cached.
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    const double u1 = 1.0 - uniform();  // (0, 1], keeps log finite
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * kPi * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  // Standard exponential.
  double exponential() { return -std::log(1.0 - uniform()); }

  // Fair draw from {-1, +1}.
  double sign() { return (eng_() & 1ULL) ? 1.0 : -1.0; }

  std::uint64_t next_u64() { return eng_(); }

 private:
  static constexpr double kPi = 3.14159265358979323846;

  // splitmix64 finalizer; decorrelates consecutive integer seeds.
  static std::uint64_t mix(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  std::mt19937_64 eng_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

}  // namespace spidet
