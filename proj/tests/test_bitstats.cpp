// Bit-level float32 decomposition and the four-statistic comparator.
//
// The count fixtures build pair sets from hand-picked scalars, re-classify
// every pair with raw bit operations independent of the library, and only
// then check the library's statistics against the recounted values.

#include <doctest.h>

#include <bit>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <vector>

#include "vdi/bitstats.hpp"
#include "vdi/common.hpp"
#include "vdi/hidden_state.hpp"

using namespace vdi;

namespace {

// Independent reference classification used to cross-check fixtures.
struct PairClass {
  bool exact = false;
  bool exponent_match = false;
  double diff = 0;  // min-exponent-normalized signed difference
};

PairClass classify(float a, float b) {
  PairClass c;
  const std::uint32_t ba = std::bit_cast<std::uint32_t>(a);
  const std::uint32_t bb = std::bit_cast<std::uint32_t>(b);
  c.exact = ba == bb;
  auto raw_exp = [](std::uint32_t bits) {
    int e = static_cast<int>((bits >> 23) & 0xff);
    return e == 0 ? 1 : e;  // subnormals share the minimum normal field
  };
  const int ea = raw_exp(ba);
  const int eb = raw_exp(bb);
  c.exponent_match = ea == eb;
  const int eref = std::min(ea, eb);
  auto scaled = [&](float v, int e) {
    const double sig = std::abs(static_cast<double>(v)) / std::ldexp(1.0, e - 127);
    return std::copysign(sig, v) * std::ldexp(1.0, e - eref);
  };
  c.diff = scaled(a, ea) - scaled(b, eb);
  return c;
}

struct PairSet {
  std::vector<float> reference;
  std::vector<float> candidate;

  void add(float a, float b) {
    reference.push_back(a);
    candidate.push_back(b);
  }

  // `n` pairs with alternating orientation so the signed mean stays small.
  void add_alternating(std::size_t n, float a, float b) {
    for (std::size_t i = 0; i < n; ++i) {
      if (i % 2 == 0)
        add(a, b);
      else
        add(b, a);
    }
  }
};

// Count-fixture rows: pairs land in named buckets; exact pairs sit inside
// the matched-small group.
PairSet make_count_fixture(std::size_t exact, std::size_t matched_small,
                           std::size_t matched_large, std::size_t mismatched_large,
                           std::size_t mismatched_small) {
  REQUIRE(matched_small >= exact);
  PairSet ps;
  for (std::size_t i = 0; i < exact; ++i) ps.add(1.25f, 1.25f);
  ps.add_alternating(matched_small - exact, 1.25f, 1.30f);  // |diff| ~ 0.05 < 0.2
  ps.add_alternating(matched_large, 1.25f, 1.75f);          // |diff| = 0.5 > 0.2
  ps.add_alternating(mismatched_large, 8.0f, 1.0f);         // |diff| = 7 > 5
  ps.add_alternating(mismatched_small, 2.0f, 1.5f);         // |diff| = 0.5 < 5
  return ps;
}

// Brute-force recount of the classification buckets.
void check_fixture_counts(const PairSet& ps, std::size_t exact, std::size_t matched_small,
                          std::size_t matched_large, std::size_t mismatched_large,
                          std::size_t mismatched_small) {
  std::size_t n_exact = 0, n_ms = 0, n_ml = 0, n_mm_l = 0, n_mm_s = 0;
  for (std::size_t i = 0; i < ps.reference.size(); ++i) {
    const PairClass c = classify(ps.reference[i], ps.candidate[i]);
    if (c.exact) ++n_exact;
    if (c.exponent_match) {
      (std::abs(c.diff) <= 0.2 ? n_ms : n_ml) += 1;
    } else {
      (std::abs(c.diff) > 5.0 ? n_mm_l : n_mm_s) += 1;
    }
  }
  CHECK(n_exact == exact);
  CHECK(n_ms == matched_small);
  CHECK(n_ml == matched_large);
  CHECK(n_mm_l == mismatched_large);
  CHECK(n_mm_s == mismatched_small);
}

HiddenState state_of(std::vector<float> values, std::uint32_t rows = 1) {
  HiddenState hs;
  hs.segment_index = 2;
  hs.token_index = 1;
  const auto cols = static_cast<Eigen::Index>(values.size() / rows);
  hs.values.resize(rows, cols);
  for (std::size_t k = 0; k < values.size(); ++k) hs.values.data()[k] = values[k];
  return hs;
}

}  // namespace

TEST_SUITE("bitstats") {

TEST_CASE("decompose/recompose round-trips sampled and boundary patterns") {
  std::vector<float> values;
  // Every exponent boundary and its one-ulp neighbors on both sides.
  for (int e = -126; e <= 127; ++e) {
    const float p = std::ldexp(1.0f, e);
    values.push_back(p);
    values.push_back(std::nextafterf(p, 0.0f));
    values.push_back(std::nextafterf(p, std::numeric_limits<float>::infinity()));
    values.push_back(-p);
    values.push_back(std::nextafterf(-p, 0.0f));
  }
  values.push_back(0.0f);
  values.push_back(-0.0f);
  values.push_back(std::numeric_limits<float>::denorm_min());
  values.push_back(-std::numeric_limits<float>::denorm_min());
  values.push_back(std::numeric_limits<float>::min());
  values.push_back(std::numeric_limits<float>::max());
  values.push_back(-std::numeric_limits<float>::max());

  // A deterministic random sample over raw bit patterns.
  std::mt19937 gen(12345);
  std::uniform_int_distribution<std::uint32_t> bits;
  std::size_t sampled = 0;
  while (sampled < 200000) {
    const float f = std::bit_cast<float>(bits(gen));
    if (!std::isfinite(f)) continue;
    values.push_back(f);
    ++sampled;
  }

  for (float v : values) {
    const ScalarBits sb = decompose(v);
    const float back = recompose(sb);
    CHECK(std::bit_cast<std::uint32_t>(back) == std::bit_cast<std::uint32_t>(v));
    // Field-level contract: value == (-1)^sign * sig * 2^(exp-127).
    const double reconstructed =
        (sb.sign ? -1.0 : 1.0) * sb.significand * std::ldexp(1.0, sb.exponent - 127);
    CHECK(static_cast<float>(reconstructed) == v);
    CHECK(sb.exponent >= 1);
    CHECK(sb.exponent <= 254);
  }
}

TEST_CASE("decompose rejects non-finite scalars") {
  CHECK_THROWS_AS(decompose(std::numeric_limits<float>::quiet_NaN()), NonFiniteScalar);
  CHECK_THROWS_AS(decompose(std::numeric_limits<float>::infinity()), NonFiniteScalar);
  CHECK_THROWS_AS(decompose(-std::numeric_limits<float>::infinity()), NonFiniteScalar);
}

TEST_CASE("subnormal convention pins the exponent field to 1") {
  const float sub = std::numeric_limits<float>::denorm_min();
  const ScalarBits sb = decompose(sub);
  CHECK(sb.exponent == 1);
  CHECK(sb.significand > 0.0);
  CHECK(sb.significand < 1.0);
  // The minimum normal float has significand exactly 1 under the same field.
  const ScalarBits nb = decompose(std::numeric_limits<float>::min());
  CHECK(nb.exponent == 1);
  CHECK(nb.significand == 1.0);
}

TEST_CASE("mantissa_diff hand cases") {
  auto md = [](float a, float b) { return mantissa_diff(decompose(a), decompose(b)); };

  // Matched exponents reduce to the signed significand difference.
  CHECK(md(1.75f, 1.25f) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(md(1.25f, 1.75f) == doctest::Approx(-0.5).epsilon(1e-12));
  CHECK(md(1.25f, 1.25f) == 0.0);

  // Mismatched exponents rescale onto the smaller exponent.
  CHECK(md(8.0f, 1.0f) == doctest::Approx(7.0).epsilon(1e-12));
  CHECK(md(1.0f, 8.0f) == doctest::Approx(-7.0).epsilon(1e-12));
  CHECK(md(2.0f, 1.5f) == doctest::Approx(0.5).epsilon(1e-12));

  // Negative operands carry their sign into the normalized scale.
  CHECK(md(-1.25f, -1.75f) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(md(-1.25f, 1.25f) == doctest::Approx(-2.5).epsilon(1e-12));

  // One-ulp steps are tiny on this scale, even across a boundary.
  const float one = 1.0f;
  const float below = std::nextafterf(1.0f, 0.0f);  // exponent drops by one
  CHECK(decompose(one).exponent != decompose(below).exponent);
  CHECK(std::abs(md(one, below)) == doctest::Approx(std::ldexp(1.0, -23)).epsilon(1e-6));
  const float above = std::nextafterf(1.0f, 2.0f);  // same exponent
  CHECK(decompose(one).exponent == decompose(above).exponent);
  CHECK(std::abs(md(one, above)) == doctest::Approx(std::ldexp(1.0, -23)).epsilon(1e-6));
}

TEST_CASE("identical traces produce the perfect statistics") {
  std::vector<float> v{0.5f, -1.25f, 3.75f, 1e-3f, -42.0f};
  const ComparisonStats s = compare_scalars(v, v, kOffChain);
  CHECK(s.p_e == 0.0);
  CHECK(s.p_m == 1.0);  // vacuous subgroup convention
  CHECK(s.p_w == 1.0);
  CHECK(s.e_mean == 0.0);
  CHECK(s.n_pairs == v.size());
  CHECK(s.n_exact == v.size());
  CHECK(accept(s, kOffChain));
  CHECK(accept(s, kOnChain));
}

TEST_CASE("flipping every scalar's last mantissa bit stays well inside e_w") {
  std::mt19937 gen(99);
  std::uniform_real_distribution<float> dist(-8.0f, 8.0f);
  std::vector<float> ref, cand;
  std::size_t expected_mismatched = 0;
  for (int i = 0; i < 4096; ++i) {
    float v = dist(gen);
    if (v == 0.0f) v = 0.125f;
    ref.push_back(v);
    const std::uint32_t bits = std::bit_cast<std::uint32_t>(v) ^ 1u;  // last mantissa bit
    const float flipped = std::bit_cast<float>(bits);
    cand.push_back(flipped);
    if (classify(v, flipped).exponent_match == false) ++expected_mismatched;
  }
  // Toggling the last stored bit never carries into the exponent field.
  CHECK(expected_mismatched == 0);

  const ComparisonStats s = compare_scalars(ref, cand, kOffChain);
  CHECK(s.p_e == 0.0);
  CHECK(s.p_w == 1.0);  // one-ulp significand steps are far below e_w = 0.2
  CHECK(s.n_exact == 0);
  CHECK(std::abs(s.e_mean) < 1e-6);
  CHECK(accept(s, kOffChain));
}

TEST_CASE("count fixture row 3584 (consistent run) passes the off-chain rule") {
  // 311 exact inside 2801 matched-small, 669 matched-large, 89 mismatched
  // beyond e_m, 25 mismatched within e_m: P_e = 114/3584.
  const PairSet ps = make_count_fixture(311, 2801, 669, 89, 25);
  REQUIRE(ps.reference.size() == 3584);
  check_fixture_counts(ps, 311, 2801, 669, 89, 25);

  const ComparisonStats s = compare_scalars(ps.reference, ps.candidate, kOffChain);
  CHECK(s.n_pairs == 3584);
  CHECK(s.n_exact == 311);
  CHECK(s.p_e == doctest::Approx(114.0 / 3584.0).epsilon(1e-12));
  CHECK(s.p_m == doctest::Approx(89.0 / 114.0).epsilon(1e-12));
  CHECK(s.p_w == doctest::Approx(2801.0 / 3470.0).epsilon(1e-12));
  CHECK(std::abs(s.e_mean) < 0.01);
  CHECK(accept(s, kOffChain));
}

TEST_CASE("count fixture row 3584 (divergent run) fails the off-chain rule") {
  // 29 exact inside 712 matched-small, 2276 matched-large, 346 mismatched
  // beyond e_m, 250 mismatched within e_m.
  const PairSet ps = make_count_fixture(29, 712, 2276, 346, 250);
  REQUIRE(ps.reference.size() == 3584);
  check_fixture_counts(ps, 29, 712, 2276, 346, 250);

  const ComparisonStats s = compare_scalars(ps.reference, ps.candidate, kOffChain);
  CHECK(s.n_pairs == 3584);
  CHECK(s.n_exact == 29);
  CHECK(s.p_e == doctest::Approx(596.0 / 3584.0).epsilon(1e-12));
  CHECK(s.p_m == doctest::Approx(346.0 / 596.0).epsilon(1e-12));
  CHECK(s.p_w == doctest::Approx(712.0 / 2988.0).epsilon(1e-12));
  // Every gate fails individually: too many exponent flips, too few
  // mismatched pairs beyond e_m, too few matched pairs inside e_w.
  CHECK(s.p_e > kOffChain.p_e_max);
  CHECK(s.p_m < kOffChain.p_m_min);
  CHECK(s.p_w < kOffChain.p_w_min);
  CHECK_FALSE(accept(s, kOffChain));
  CHECK_FALSE(accept(s, kOnChain));
}

TEST_CASE("acceptance rule boundary examples") {
  ComparisonStats perfect{0.0, 1.0, 1.0, 0.0, 10, 10};
  CHECK(accept(perfect, kOffChain));

  ComparisonStats between{0.06, 0.9, 0.9, 0.0, 100, 0};
  CHECK_FALSE(accept(between, kOffChain));  // 0.06 >= 0.05
  CHECK(accept(between, kOnChain));         // 0.06 < 0.08

  ComparisonStats drift{0.01, 0.9, 0.9, 0.015, 100, 0};
  CHECK(accept(drift, kOnChain));    // 0.015 inside [-0.02, 0.02]
  CHECK_FALSE(accept(drift, kOffChain));  // outside [-0.01, 0.01]

  // The predicates are strict in the directions the presets state.
  ComparisonStats at_edge{0.05, 0.75, 0.80, 0.0, 100, 0};
  CHECK_FALSE(accept(at_edge, kOffChain));  // P_e < max, P_m > min, P_w > min
}

TEST_CASE("tolerance presets hold the contractual constants") {
  CHECK(kOffChain.e_w == 0.2);
  CHECK(kOffChain.e_m == 5.0);
  CHECK(kOffChain.p_e_max == 0.05);
  CHECK(kOffChain.p_m_min == 0.75);
  CHECK(kOffChain.p_w_min == 0.80);
  CHECK(kOffChain.e_mean_lo == -0.01);
  CHECK(kOffChain.e_mean_hi == 0.01);

  CHECK(kOnChain.e_w == 0.2);
  CHECK(kOnChain.e_m == 5.0);
  CHECK(kOnChain.p_e_max == 0.08);
  CHECK(kOnChain.p_m_min == 0.70);
  CHECK(kOnChain.p_w_min == 0.75);
  CHECK(kOnChain.e_mean_lo == -0.02);
  CHECK(kOnChain.e_mean_hi == 0.02);
}

TEST_CASE("swap symmetry: P_e is symmetric and e_mean negates") {
  std::mt19937 gen(7);
  std::uniform_real_distribution<float> dist(-4.0f, 4.0f);
  for (int rep = 0; rep < 50; ++rep) {
    std::vector<float> a, b;
    for (int i = 0; i < 64; ++i) {
      a.push_back(dist(gen));
      b.push_back(dist(gen) * (i % 3 == 0 ? 1.0f : 0.001f));
    }
    const ComparisonStats ab = compare_scalars(a, b, kOffChain);
    const ComparisonStats ba = compare_scalars(b, a, kOffChain);
    CHECK(ab.p_e == ba.p_e);
    CHECK(ab.p_m == ba.p_m);
    CHECK(ab.p_w == ba.p_w);
    CHECK(ab.e_mean == -ba.e_mean);
    CHECK(ab.n_exact == ba.n_exact);
  }
}

TEST_CASE("appending a bit-identical pair never raises P_e nor flips accept off") {
  std::mt19937 gen(21);
  std::uniform_real_distribution<float> dist(0.5f, 2.0f);
  for (int rep = 0; rep < 200; ++rep) {
    std::vector<float> a, b;
    const int n = 4 + rep % 13;
    for (int i = 0; i < n; ++i) {
      const float v = dist(gen);
      a.push_back(v);
      // Mostly identical pairs with occasional one-ulp separation keeps the
      // base case accepted.
      b.push_back(rep % 4 == 0 ? std::nextafterf(v, 4.0f) : v);
    }
    const ComparisonStats before = compare_scalars(a, b, kOffChain);
    const float extra = dist(gen);
    a.push_back(extra);
    b.push_back(extra);
    const ComparisonStats after = compare_scalars(a, b, kOffChain);
    CHECK(after.p_e <= before.p_e);
    if (accept(before, kOffChain)) CHECK(accept(after, kOffChain));
  }
}

TEST_CASE("vacuous subgroups: all-mismatched and all-matched pair sets") {
  std::vector<float> ref{8.0f, 16.0f, 32.0f};
  std::vector<float> cand{1.0f, 2.0f, 4.0f};
  const ComparisonStats mm = compare_scalars(ref, cand, kOffChain);
  CHECK(mm.p_e == 1.0);
  CHECK(mm.p_w == 1.0);  // no matched pairs: vacuously satisfied

  std::vector<float> same_exp_a{1.0f, 1.25f, 1.5f};
  std::vector<float> same_exp_b{1.125f, 1.375f, 1.625f};
  const ComparisonStats mt = compare_scalars(same_exp_a, same_exp_b, kOffChain);
  CHECK(mt.p_e == 0.0);
  CHECK(mt.p_m == 1.0);  // no mismatched pairs: vacuously satisfied
}

TEST_CASE("shape and emptiness errors") {
  std::vector<float> a{1.0f, 2.0f};
  std::vector<float> b{1.0f};
  CHECK_THROWS_AS(compare_scalars(a, b, kOffChain), ShapeMismatch);
  CHECK_THROWS_AS(compare_scalars({}, {}, kOffChain), EmptyTrace);

  std::vector<HiddenState> ta, tb;
  ta.push_back(state_of({1.0f, 2.0f, 3.0f, 4.0f}, 2));
  tb.push_back(state_of({1.0f, 2.0f, 3.0f, 4.0f}, 1));  // same count, different shape
  CHECK_THROWS_AS(compare_traces(ta, tb, kOffChain), ShapeMismatch);
  CHECK_THROWS_AS(compare_traces({}, {}, kOffChain), EmptyTrace);
}

TEST_CASE("compare_traces equals the flattened scalar comparison") {
  std::mt19937 gen(3);
  std::uniform_real_distribution<float> dist(-2.0f, 2.0f);
  std::vector<HiddenState> ta, tb;
  std::vector<float> fa, fb;
  for (int s = 0; s < 3; ++s) {
    std::vector<float> va, vb;
    for (int i = 0; i < 12; ++i) {
      const float x = dist(gen);
      va.push_back(x);
      vb.push_back(s == 1 ? x * 2.0f : x);  // one tensor of exponent flips
    }
    ta.push_back(state_of(va, 3));
    tb.push_back(state_of(vb, 3));
    fa.insert(fa.end(), va.begin(), va.end());
    fb.insert(fb.end(), vb.begin(), vb.end());
  }
  const ComparisonStats trace = compare_traces(ta, tb, kOffChain);
  const ComparisonStats flat = compare_scalars(fa, fb, kOffChain);
  CHECK(trace.p_e == flat.p_e);
  CHECK(trace.p_m == flat.p_m);
  CHECK(trace.p_w == flat.p_w);
  CHECK(trace.e_mean == flat.e_mean);
  CHECK(trace.n_pairs == flat.n_pairs);
}

TEST_CASE("non-finite scalars are rejected at ingestion") {
  std::vector<HiddenState> ta, tb;
  ta.push_back(state_of({1.0f, std::numeric_limits<float>::quiet_NaN()}));
  tb.push_back(state_of({1.0f, 2.0f}));
  CHECK_THROWS_AS(compare_traces(ta, tb, kOffChain), NonFiniteScalar);
}

}  // TEST_SUITE
