#include "vdi/prng.hpp"

#include <cmath>

namespace vdi {

CounterPrng::CounterPrng(const Digest& key, std::string_view domain) {
  Hasher h;
  h.update(tag::kPrng).update(key).update(domain);
  key_ = h.finish();
  offset_ = block_.size();  // force refill on first use
}

void CounterPrng::refill() {
  Hasher h;
  h.update(key_).update_u64(counter_++);
  block_ = h.finish();
  offset_ = 0;
}

std::uint64_t CounterPrng::next_u64() {
  if (offset_ + 8 > block_.size()) refill();
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(block_[offset_ + i]) << (8 * i);
  offset_ += 8;
  return v;
}

std::uint64_t CounterPrng::uniform(std::uint64_t bound) {
  if (bound == 0) throw Error("uniform bound must be nonzero");
  // Largest multiple of bound that fits; values at or above it are rejected.
  const std::uint64_t limit = bound * (~std::uint64_t{0} / bound);
  for (;;) {
    std::uint64_t v = next_u64();
    if (v < limit) return v % bound;
  }
}

double CounterPrng::next_double() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double CounterPrng::uniform_real(double lo, double hi) {
  return lo + (hi - lo) * next_double();
}

float CounterPrng::next_float_signed() {
  return static_cast<float>(2.0 * next_double() - 1.0);
}

bool CounterPrng::next_bool(double p_true) {
  return next_double() < p_true;
}

Digest derive_key(const Digest& key, std::string_view domain) {
  Hasher h;
  h.update(tag::kPrng).update(key).update(domain);
  return h.finish();
}

Digest derive_key(const Digest& key, std::string_view domain, std::uint64_t index) {
  Hasher h;
  h.update(tag::kPrng).update(key).update(domain).update_u64(index);
  return h.finish();
}

Digest seed_digest(std::uint64_t seed) {
  Hasher h;
  h.update(tag::kPrng).update("seed").update_u64(seed);
  return h.finish();
}

}  // namespace vdi
