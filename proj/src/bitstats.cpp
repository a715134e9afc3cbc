#include "vdi/bitstats.hpp"

#include <cmath>

namespace vdi {

namespace {
constexpr double kPow23 = 8388608.0;  // 2^23
}

ScalarBits decompose(float x) {
  if (!std::isfinite(x)) throw NonFiniteScalar();
  const std::uint32_t bits = float_bits(x);
  ScalarBits out;
  out.sign = static_cast<int>(bits >> 31);
  const int raw_exp = static_cast<int>((bits >> 23) & 0xff);
  const std::uint32_t frac = bits & 0x7fffffu;
  if (raw_exp == 0) {
    // Subnormal (or zero): value = 0.frac * 2^-126.  Pin the exponent to the
    // minimum normal field so the uniform value formula stays correct.
    out.exponent = 1;
    out.significand = static_cast<double>(frac) / kPow23;
  } else {
    out.exponent = raw_exp;
    out.significand = 1.0 + static_cast<double>(frac) / kPow23;
  }
  return out;
}

float recompose(const ScalarBits& bits) {
  std::uint32_t raw = static_cast<std::uint32_t>(bits.sign) << 31;
  if (bits.significand < 1.0) {
    // Subnormal encoding: raw exponent field 0.
    raw |= static_cast<std::uint32_t>(std::lround(bits.significand * kPow23)) & 0x7fffffu;
  } else {
    raw |= static_cast<std::uint32_t>(bits.exponent) << 23;
    raw |= static_cast<std::uint32_t>(std::lround((bits.significand - 1.0) * kPow23)) & 0x7fffffu;
  }
  return bits_to_float(raw);
}

double mantissa_diff(const ScalarBits& a, const ScalarBits& b) {
  const int e_ref = std::min(a.exponent, b.exponent);
  const double sa = a.sign ? -1.0 : 1.0;
  const double sb = b.sign ? -1.0 : 1.0;
  return sa * a.significand * std::ldexp(1.0, a.exponent - e_ref) -
         sb * b.significand * std::ldexp(1.0, b.exponent - e_ref);
}

ComparisonStats compare_scalars(std::span<const float> reference,
                                std::span<const float> candidate,
                                const Tolerances& tol) {
  if (reference.size() != candidate.size()) throw ShapeMismatch();
  if (reference.empty()) throw EmptyTrace();

  std::size_t exp_mismatch = 0, beyond_em = 0, within_ew = 0, exact = 0;
  double diff_sum = 0;
  for (std::size_t k = 0; k < reference.size(); ++k) {
    const float r = reference[k];
    const float c = candidate[k];
    const ScalarBits rb = decompose(r);
    const ScalarBits cb = decompose(c);
    const double d = mantissa_diff(rb, cb);
    diff_sum += d;
    if (float_bits(r) == float_bits(c)) ++exact;
    if (rb.exponent != cb.exponent) {
      ++exp_mismatch;
      if (std::abs(d) > tol.e_m) ++beyond_em;
    } else {
      if (std::abs(d) <= tol.e_w) ++within_ew;
    }
  }

  const std::size_t n = reference.size();
  const std::size_t exp_match = n - exp_mismatch;
  ComparisonStats stats;
  stats.n_pairs = n;
  stats.n_exact = exact;
  stats.p_e = static_cast<double>(exp_mismatch) / static_cast<double>(n);
  // Vacuous subgroups score 1 so a perfect trace accepts.
  stats.p_m = exp_mismatch == 0 ? 1.0
                                : static_cast<double>(beyond_em) / static_cast<double>(exp_mismatch);
  stats.p_w = exp_match == 0 ? 1.0
                             : static_cast<double>(within_ew) / static_cast<double>(exp_match);
  stats.e_mean = diff_sum / static_cast<double>(n);
  return stats;
}

ComparisonStats compare_traces(std::span<const HiddenState> reference,
                               std::span<const HiddenState> candidate,
                               const Tolerances& tol) {
  if (reference.size() != candidate.size()) throw ShapeMismatch("trace lengths differ");
  std::vector<float> ref_flat, cand_flat;
  for (std::size_t i = 0; i < reference.size(); ++i) {
    const HiddenState& r = reference[i];
    const HiddenState& c = candidate[i];
    if (r.values.rows() != c.values.rows() || r.values.cols() != c.values.cols()) {
      throw ShapeMismatch("entry " + std::to_string(i) + " shapes differ");
    }
    ref_flat.insert(ref_flat.end(), r.values.data(), r.values.data() + r.scalar_count());
    cand_flat.insert(cand_flat.end(), c.values.data(), c.values.data() + c.scalar_count());
  }
  return compare_scalars(ref_flat, cand_flat, tol);
}

bool accept(const ComparisonStats& stats, const Tolerances& tol) {
  return stats.p_e < tol.p_e_max && stats.p_m > tol.p_m_min && stats.p_w > tol.p_w_min &&
         stats.e_mean >= tol.e_mean_lo && stats.e_mean <= tol.e_mean_hi;
}

}  // namespace vdi
