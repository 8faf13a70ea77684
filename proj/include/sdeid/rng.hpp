#pragma once

// Randomness contract.
//
// Engine: std::mt19937_64. Per-trajectory streams are seeded with
// stream_seed(seed, k), a splitmix64-based hash. Gaussian variates use the
// Marsaglia polar method on 53-bit uniforms drawn from the engine; both
// variates of each accepted pair are used. Changing any of this changes every
// golden trajectory.

#include <cstdint>
#include <random>

namespace sdeid {

std::uint64_t splitmix64(std::uint64_t x);

/// Seed of the k-th independent stream derived from a master seed.
std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t k);

class NormalSampler {
 public:
  explicit NormalSampler(std::uint64_t seed) : engine_(seed) {}

  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  /// Standard normal variate.
  double standard_normal();

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace sdeid
