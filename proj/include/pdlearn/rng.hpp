#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <span>

namespace pdlearn {

// Deterministic random source. All variates are derived from the raw
// 64-bit stream by hand (std::*_distribution output is
// implementation-defined), so seeded runs replay bit-identically.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(mix(seed, 0)) {}

  // Independent stream for a (seed, round/worker) pair.
  Rng(std::uint64_t seed, std::uint64_t stream) : gen_(mix(seed, stream)) {}

  std::uint64_t next_u64() { return gen_(); }

  // Uniform on the open interval (0, 1), 53-bit resolution.
  double uniform01() {
    return (static_cast<double>(gen_() >> 11) + 0.5) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  // Standard normal via Box-Muller; consumes two uniforms per call.
  double normal01() {
    const double u1 = uniform01();
    const double u2 = uniform01();
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * std::numbers::pi * u2);
  }

  // Exponential with the given mean; strictly positive.
  double exponential(double mean = 1.0) { return -mean * std::log(uniform01()); }

  // Draw an index from an explicit probability vector (sums to ~1).
  int categorical(std::span<const double> probs) {
    const double u = uniform01();
    double acc = 0.0;
    for (std::size_t k = 0; k + 1 < probs.size(); ++k) {
      acc += probs[k];
      if (u < acc) return static_cast<int>(k);
    }
    return static_cast<int>(probs.size()) - 1;
  }

  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) {
    // Multiply-shift rejection-free mapping; bias is negligible for the
    // index ranges used here (n << 2^64).
    return static_cast<std::uint64_t>(
        (static_cast<unsigned __int128>(gen_()) * n) >> 64);
  }

 private:
  // splitmix64 finalizer; decorrelates (seed, stream) pairs.
  static std::uint64_t mix(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  std::mt19937_64 gen_;
};

}  // namespace pdlearn
