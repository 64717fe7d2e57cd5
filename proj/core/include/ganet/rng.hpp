#pragma once

#include <array>
#include <cstdint>

namespace ganet {

// Deterministic random stream (xoshiro256++ seeded via splitmix64).
// Self-contained so that identical seeds reproduce identical streams across
// builds and platforms; std::random distributions give no such guarantee.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t next_u64();

  // Uniform in [0, 1).
  double uniform();
  // Uniform integer in [lo, hi], inclusive. Unbiased.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);
  // Standard normal via Box-Muller (spare value cached).
  double normal();
  bool bernoulli(double p);

  // Derives an independent child stream; advances this stream.
  Rng split();

 private:
  std::array<std::uint64_t, 4> s_{};
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace ganet
