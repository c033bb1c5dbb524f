#pragma once

// Counter-based random numbers. Every draw is a pure function of
// (seed, stream, substream, counter), so any record of a sampled dataset can
// be regenerated on its own and a dataset of size N is always a prefix of the
// dataset of size N' > N drawn with the same seed.

#include <cmath>
#include <cstdint>
#include <numbers>

namespace crlhf {

enum class Stream : std::uint64_t {
  features = 1,
  thetas = 2,
  dataset = 3,
  calibration = 4,
  restarts = 5,
};

class CounterRng {
 public:
  CounterRng(std::uint64_t seed, Stream stream, std::uint64_t substream = 0)
      : key_(mix(mix(seed ^ 0x243f6a8885a308d3ULL) + static_cast<std::uint64_t>(stream) *
                                                         0x9e3779b97f4a7c15ULL) ^
             mix(substream + 0x13198a2e03707344ULL)) {}

  std::uint64_t bits(std::uint64_t counter) const {
    return mix(key_ + counter * 0x9e3779b97f4a7c15ULL);
  }

  // Uniform on [0, 1) with 53 random bits.
  double uniform(std::uint64_t counter) const {
    return static_cast<double>(bits(counter) >> 11) * 0x1.0p-53;
  }

  // Standard normal from the Box-Muller pair at counters 2c and 2c + 1.
  double normal(std::uint64_t counter) const {
    const double u1 = 1.0 - uniform(2 * counter);  // (0, 1]
    const double u2 = uniform(2 * counter + 1);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

 private:
  // SplitMix64 finalizer.
  static std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  std::uint64_t key_;
};

}  // namespace crlhf
