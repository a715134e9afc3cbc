#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <vector>

#include "vdi/common.hpp"
#include "vdi/hidden_state.hpp"
#include "vdi/prng.hpp"

namespace vdi {

using RowVecF = Eigen::Matrix<float, 1, Eigen::Dynamic, Eigen::RowMajor>;

inline constexpr std::uint32_t kEosToken = 0;

// Default agreement radius for on-chain clustering: three standard
// deviations of the calibrated honest-noise spread at a segment boundary.
// Honest noise is uniform in [-s, s] with s = kHonestNoiseScale, so one
// scalar has sigma = s/sqrt(3) and delta = 3*sigma = sqrt(3)*s.  Two honest
// openings therefore sit within 2*s*|v| <= 2*s < 2*delta of each other for
// every |v| < 1, which tanh guarantees (see README calibration procedure).
inline constexpr double kAgreementDelta = 1.7320508075688772e-7;

enum class CostPhase { kPrefill = 0, kDecode = 1, kVerifyPrefill = 2 };

struct CostMeter {
  std::array<std::uint64_t, 3> ops{};

  void add(CostPhase phase, std::uint64_t n) { ops[static_cast<std::size_t>(phase)] += n; }
  std::uint64_t prefill() const { return ops[0]; }
  std::uint64_t decode() const { return ops[1]; }
  std::uint64_t verify_prefill() const { return ops[2]; }
  std::uint64_t total() const { return ops[0] + ops[1] + ops[2]; }
};

struct Arithmetic {
  enum class Kind { kFullPrecision, kQuantized } kind = Kind::kFullPrecision;
  int mantissa_bits = 23;  // meaningful for kQuantized

  static Arithmetic full() { return {}; }
  static Arithmetic quantized(int bits) { return {Kind::kQuantized, bits}; }
};

// Round a binary32 to `bits` mantissa bits (round-to-nearest on the raw
// pattern; carries may bump the exponent, which is exact behavior).
float quantize_scalar(float x, int bits);

struct NoiseModel {
  float relative_scale = 0;    // per-scalar multiplicative jitter amplitude
  float exponent_flip_prob = 0;  // chance to double/halve a scalar
  Digest seed{};

  static NoiseModel none() { return {}; }
  static NoiseModel honest(const Digest& seed);
};

// Calibrated honest-run nondeterminism amplitude (see README calibration
// procedure; chosen so honest pairs pass OFF_CHAIN with probability >=
// 0.999 while quantized(8) runs fail it).  1e-7 is roughly one float32 ulp,
// so most scalars move by a last-bit wiggle while exponent boundary
// crossings stay rare enough for the off-chain comparator.
inline constexpr float kHonestNoiseScale = 1e-7f;

struct ModelConfig {
  std::uint32_t segment_count = 2;       // L
  std::uint32_t hidden_dim = 16;         // d
  std::uint32_t layers_per_segment = 16;
  std::uint32_t vocab_size = 32;         // token 0 reserved for EOS
  std::uint64_t seed = 1;
  float weight_scale = 2.5f;             // mixing gain knob (calibrated)
  float eos_logit_bias = 0.0f;           // depress/boost the EOS logit
};

// One segment: layers_per_segment causal mixing layers.  Each layer sends a
// row through x*A + prefix_mean(x)*B + c followed by tanh; the prefix mean
// is what couples token positions, and it is computed by a single runner
// code path shared by incremental decode and batched prefill, which is what
// makes the two bit-identical.
class SegmentModel {
 public:
  SegmentModel(const ModelConfig& config, std::uint32_t segment_index, Arithmetic mode);

  std::uint32_t segment_index() const { return segment_index_; }
  std::uint32_t hidden_dim() const { return config_.hidden_dim; }
  std::uint64_t ops_per_row() const;
  Arithmetic mode() const { return mode_; }

  class Runner {
   public:
    explicit Runner(const SegmentModel& model);
    RowVecF feed(const RowVecF& row);  // one token position through all layers
    std::uint32_t rows_fed() const { return rows_fed_; }

   private:
    const SegmentModel* model_;
    std::vector<RowVecF> sums_;  // per-layer running sums of layer inputs
    std::uint32_t rows_fed_ = 0;
  };

 private:
  friend class Runner;
  ModelConfig config_;
  std::uint32_t segment_index_;
  Arithmetic mode_;
  std::vector<MatrixRX> a_, b_;
  std::vector<RowVecF> bias_;
};

class EmbeddingTable {
 public:
  EmbeddingTable(const ModelConfig& config);
  RowVecF embed(std::uint32_t token) const;  // throws IndexOutOfRange
  MatrixRX embed_sequence(std::span<const std::uint32_t> tokens) const;

 private:
  MatrixRX table_;
};

class OutputHead {
 public:
  OutputHead(const ModelConfig& config);
  std::uint32_t decode(const RowVecF& row, CostMeter* meter = nullptr) const;  // greedy argmax

 private:
  MatrixRX weights_;  // d x vocab
  float eos_bias_;
};

struct SyntheticModel {
  ModelConfig config;
  EmbeddingTable embed;
  std::vector<SegmentModel> segments;
  OutputHead head;

  static SyntheticModel build(const ModelConfig& config, Arithmetic mode = Arithmetic::full());
};

// Multiplicative noise applied to a segment's output rows; the stream is
// keyed per (seed, segment) and consumed in row order so batched and
// incremental runs under one seed stay bit-identical.
class NoiseStream {
 public:
  NoiseStream(const NoiseModel& noise, std::uint32_t segment_index);
  void apply(RowVecF& row);

 private:
  NoiseModel noise_;
  CounterPrng rng_;
};

// Batched forward of one segment over a full input tensor.
HiddenState segment_forward(const SegmentModel& model, const HiddenState& input,
                            const NoiseModel& noise, CostMeter* meter = nullptr,
                            CostPhase phase = CostPhase::kVerifyPrefill);

std::uint32_t decode_step(const OutputHead& head, const HiddenState& tail_state,
                          CostMeter* meter = nullptr);

struct GenerationResult {
  std::vector<std::uint32_t> prompt;
  std::vector<std::uint32_t> tokens;  // y_1..y_T as published
  bool truncated = false;             // true iff max_tokens hit without EOS claim
  // states[i-1][t-1] = rows produced by segment i at step t (boundary i+1);
  // step 1 carries the prompt positions, later steps one row each.
  std::vector<std::vector<HiddenState>> states;
};

GenerationResult generate(const SyntheticModel& model, std::span<const std::uint32_t> prompt,
                          std::uint32_t max_tokens, const NoiseModel& noise,
                          CostMeter* meter = nullptr, const std::string& task_id = "");

// Single batched pass of one segment over the whole sequence; bit-identical
// to the generation-time states at equal noise seed.
std::vector<HiddenState> verify_prefill(const SegmentModel& model,
                                        const MatrixRX& boundary_inputs,
                                        std::uint32_t prompt_len, std::uint32_t step_count,
                                        const NoiseModel& noise, CostMeter* meter = nullptr,
                                        const std::string& task_id = "");

// --- attack strategies ------------------------------------------------------

struct AttackSpec {
  enum class Kind { kIdentity, kQuantize, kEarlyStop, kForgedOutput } kind = Kind::kIdentity;
  int bits = 8;                   // kQuantize
  std::uint32_t stop_after = 1;   // kEarlyStop: published length T' >= 1
  ModelConfig forge_config;       // kForgedOutput: the small model

  static AttackSpec identity() { return {}; }
  static AttackSpec quantize(int bits);
  static AttackSpec early_stop(std::uint32_t t_prime);
  static AttackSpec forged_output(const ModelConfig& small);
};

// Runs the (possibly dishonest) generation the inferencer publishes.
GenerationResult apply_attack(const AttackSpec& attack, const SyntheticModel& honest_model,
                              std::span<const std::uint32_t> prompt, std::uint32_t max_tokens,
                              const NoiseModel& noise, CostMeter* meter = nullptr,
                              const std::string& task_id = "");

}  // namespace vdi
