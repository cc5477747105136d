#pragma once

#include <array>
#include <cstdint>

namespace spde::rng {

/// One block of the Philox-4x32 counter-based generator, 10 rounds
/// (Salmon et al., "Parallel random numbers: as easy as 1, 2, 3").
/// Pure function of (counter, key); this is what makes every draw in the
/// project addressable and independent of thread scheduling.
std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> counter,
                                        std::array<std::uint32_t, 2> key);

/// Quantile of the standard normal distribution (Wichura's AS 241,
/// double-precision branch). Requires p in (0,1).
double normal_quantile(double p);

/// Maps 64 random bits to a uniform double in the open interval (0,1).
double uniform_open01(std::uint64_t bits);

/// Standard Gaussian draw addressed by (seed, path, mode, step).
/// mode must stay below 2^31; the upper half of that word is reserved
/// for auxiliary streams so lattice draws can never collide with them.
double gaussian_at(std::uint64_t master_seed, std::uint64_t path_id,
                   std::uint32_t mode, std::uint32_t step);

/// Sequential stream of draws for tests and random trial vectors.
/// Draw i of stream (seed, tag) is the same value no matter how many
/// streams exist or in which order they are consumed.
class CounterStream {
 public:
  CounterStream(std::uint64_t seed, std::uint64_t tag)
      : seed_(seed), tag_(tag) {}

  double next_gaussian();
  double next_uniform();

 private:
  std::uint64_t next_bits();

  std::uint64_t seed_;
  std::uint64_t tag_;
  std::uint32_t index_ = 0;
};

}  // namespace spde::rng
