#pragma once

#include <cmath>
#include <cstdint>

namespace tilebench {

// splitmix64 (Steele, Lea, Flood 2014). Self-contained so that streams are
// reproducible byte-for-byte across standard libraries; <random>
// distributions make no such guarantee.
class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1) with 53 significant bits.
  double next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // Uniform in [0, bound). Rejection-free modulo is fine here: bound is
  // always tiny relative to 2^64, the bias is below 2^-40.
  std::uint64_t next_below(std::uint64_t bound) { return next_u64() % bound; }

  // Standard normal via Box-Muller. One value per call; the spare is kept.
  double next_gaussian() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    while (u1 == 0.0) u1 = next_double();
    const double u2 = next_double();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(theta);
    have_spare_ = true;
    return r * std::cos(theta);
  }

 private:
  std::uint64_t state_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

// Deterministic substream derivation: mixes a stream index into a base seed.
inline std::uint64_t substream_seed(std::uint64_t seed, std::uint64_t index) {
  SplitMix64 mixer(seed ^ (0x9e3779b97f4a7c15ULL + index * 0xd1b54a32d192ed03ULL));
  return mixer.next_u64();
}

}  // namespace tilebench
