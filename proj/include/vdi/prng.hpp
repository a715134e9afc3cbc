#pragma once

#include <cstdint>
#include <string_view>

#include "vdi/common.hpp"

namespace vdi {

// Deterministic counter-mode PRNG over the same hash the protocol uses.
// Every stochastic element of a simulation is keyed off one of these, so a
// run is reproducible byte-for-byte from its master seed.
class CounterPrng {
 public:
  explicit CounterPrng(const Digest& key, std::string_view domain = "");

  std::uint64_t next_u64();

  // Uniform in [0, bound); bound must be nonzero.  Rejection-sampled, no
  // modulo bias.
  std::uint64_t uniform(std::uint64_t bound);

  // Uniform in [0, 1) with 53 random bits.
  double next_double();

  // Uniform in [lo, hi).
  double uniform_real(double lo, double hi);

  // Uniform float in [-1, 1).
  float next_float_signed();

  bool next_bool(double p_true);  // Bernoulli(p_true)

 private:
  void refill();

  Digest key_;
  Digest block_{};
  std::uint64_t counter_ = 0;
  std::size_t offset_ = 0;  // bytes consumed from block_
};

// Key derivation: children of a seed are independent streams.
Digest derive_key(const Digest& key, std::string_view domain);
Digest derive_key(const Digest& key, std::string_view domain, std::uint64_t index);

// Canonical 32-byte seed from a scenario-file integer seed.
Digest seed_digest(std::uint64_t seed);

}  // namespace vdi
