#pragma once

#include <cstdint>
#include <span>

#include "vdi/common.hpp"
#include "vdi/hidden_state.hpp"

namespace vdi {

// IEEE-754 binary32 decomposition.  `exponent` is the raw biased field for
// normal values.  Subnormals keep significand in [0,1) with exponent pinned
// to 1 (the minimum normal field), so value == (-1)^sign * sig * 2^(exp-127)
// holds uniformly across the normal/subnormal boundary.
struct ScalarBits {
  int sign = 0;            // 0 positive, 1 negative
  int exponent = 0;        // biased field, [1, 254] after subnormal mapping
  double significand = 0;  // [1,2) normal, [0,1) subnormal
};

ScalarBits decompose(float x);            // throws NonFiniteScalar on NaN/Inf
float recompose(const ScalarBits& bits);  // exact inverse of decompose

// Signed significand difference with both operands rescaled to the smaller
// exponent: s_a*sig_a*2^(e_a-e_ref) - s_b*sig_b*2^(e_b-e_ref), e_ref=min.
// Reduces to the signed significand difference when the exponents match.
double mantissa_diff(const ScalarBits& a, const ScalarBits& b);

struct ComparisonStats {
  double p_e = 0;       // exponent mismatch rate over all pairs
  double p_m = 1;       // among mismatched-exponent pairs, fraction |diff| > e_m
  double p_w = 1;       // among matched-exponent pairs, fraction |diff| <= e_w
  double e_mean = 0;    // signed mean of mantissa_diff(reference, candidate)
  std::size_t n_pairs = 0;
  std::size_t n_exact = 0;  // bit-identical pairs
};

struct Tolerances {
  double e_w = 0;
  double e_m = 0;
  double p_e_max = 0;
  double p_m_min = 0;
  double p_w_min = 0;
  double e_mean_lo = 0;
  double e_mean_hi = 0;
};

// Acceptance presets.  Off-chain compares full hidden states over all
// tokens; on-chain samples only the final token and tolerates more spread.
inline constexpr Tolerances kOffChain{
    .e_w = 0.2, .e_m = 5.0, .p_e_max = 0.05, .p_m_min = 0.75, .p_w_min = 0.80,
    .e_mean_lo = -0.01, .e_mean_hi = 0.01};
inline constexpr Tolerances kOnChain{
    .e_w = 0.2, .e_m = 5.0, .p_e_max = 0.08, .p_m_min = 0.70, .p_w_min = 0.75,
    .e_mean_lo = -0.02, .e_mean_hi = 0.02};

// Elementwise bit-aware comparison of two aligned scalar sequences.
ComparisonStats compare_scalars(std::span<const float> reference,
                                std::span<const float> candidate,
                                const Tolerances& tol);

// Trace-level wrapper: shapes must agree entry by entry.
ComparisonStats compare_traces(std::span<const HiddenState> reference,
                               std::span<const HiddenState> candidate,
                               const Tolerances& tol);

// True iff all four predicates hold: P_e < P_e_max, P_m > P_m_min,
// P_w > P_w_min, e_mean within [e_mean_lo, e_mean_hi].
bool accept(const ComparisonStats& stats, const Tolerances& tol);

}  // namespace vdi
