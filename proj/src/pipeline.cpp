#include "vdi/pipeline.hpp"

#include <cmath>
#include <string>

namespace vdi {

namespace {

// Activation ceiling 31/32: exactly representable, so saturated layers give
// bit-identical 0.96875f on every honest run rather than parking scalars on
// the exponent boundary at 1.0f.
constexpr float kSaturationGain = 0.96875f;

std::string seg_domain(std::string_view what, std::uint32_t segment, std::uint32_t layer) {
  std::string d = "vdi/pipeline/";
  d += what;
  d += '/';
  d += std::to_string(segment);
  d += '/';
  d += std::to_string(layer);
  return d;
}

MatrixRX random_matrix(CounterPrng& rng, std::uint32_t rows, std::uint32_t cols, float amp) {
  MatrixRX m(rows, cols);
  for (std::uint32_t r = 0; r < rows; ++r)
    for (std::uint32_t c = 0; c < cols; ++c)
      m(r, c) = amp * rng.next_float_signed();
  return m;
}

}  // namespace

float quantize_scalar(float x, int bits) {
  if (bits >= 23 || !std::isfinite(x) || x == 0.0f) return x;
  if (bits < 0) bits = 0;
  std::uint32_t raw = float_bits(x);
  std::uint32_t sign = raw & 0x80000000u;
  std::uint32_t mag = raw & 0x7FFFFFFFu;
  std::uint32_t shift = 23u - static_cast<std::uint32_t>(bits);
  std::uint32_t unit = 1u << shift;
  std::uint32_t half = unit >> 1;
  std::uint32_t rem = mag & (unit - 1u);
  mag &= ~(unit - 1u);
  if (rem > half || (rem == half && ((mag >> shift) & 1u)))
    mag += unit;                                       // round half to even
  if (mag >= 0x7F800000u) mag = 0x7F800000u - unit;    // keep finite
  return bits_to_float(sign | mag);
}

NoiseModel NoiseModel::honest(const Digest& seed) {
  NoiseModel n;
  n.relative_scale = kHonestNoiseScale;
  n.seed = seed;
  return n;
}

// --- SegmentModel ------------------------------------------------------------

SegmentModel::SegmentModel(const ModelConfig& config, std::uint32_t segment_index,
                           Arithmetic mode)
    : config_(config), segment_index_(segment_index), mode_(mode) {
  const std::uint32_t d = config.hidden_dim;
  // Entry spread sqrt(3)/sqrt(d) * gain gives per-layer Jacobian around the
  // configured weight_scale, which is what calibration tunes.
  const float a_amp = config.weight_scale * std::sqrt(3.0f) / std::sqrt(static_cast<float>(d));
  const float b_amp = 0.5f * std::sqrt(3.0f) / std::sqrt(static_cast<float>(d));
  const Digest base = seed_digest(config.seed);
  for (std::uint32_t l = 0; l < config.layers_per_segment; ++l) {
    CounterPrng ra(base, seg_domain("A", segment_index, l));
    CounterPrng rb(base, seg_domain("B", segment_index, l));
    CounterPrng rc(base, seg_domain("c", segment_index, l));
    a_.push_back(random_matrix(ra, d, d, a_amp));
    b_.push_back(random_matrix(rb, d, d, b_amp));
    bias_.push_back(random_matrix(rc, 1, d, 0.1f));
  }
}

std::uint64_t SegmentModel::ops_per_row() const {
  const std::uint64_t d = config_.hidden_dim;
  return static_cast<std::uint64_t>(config_.layers_per_segment) * (4 * d * d + 6 * d);
}

SegmentModel::Runner::Runner(const SegmentModel& model) : model_(&model) {
  sums_.assign(model.config_.layers_per_segment,
               RowVecF::Zero(model.config_.hidden_dim));
}

RowVecF SegmentModel::Runner::feed(const RowVecF& row) {
  if (row.cols() != model_->config_.hidden_dim)
    throw ShapeMismatch("runner row width " + std::to_string(row.cols()));
  rows_fed_ += 1;
  const float inv_n = 1.0f / static_cast<float>(rows_fed_);
  RowVecF x = row;
  const bool quant = model_->mode_.kind == Arithmetic::Kind::kQuantized;
  const int qbits = model_->mode_.mantissa_bits;
  for (std::size_t l = 0; l < sums_.size(); ++l) {
    sums_[l] += x;  // running sum of this layer's inputs over token positions
    RowVecF mean = sums_[l] * inv_n;
    RowVecF z = x * model_->a_[l] + mean * model_->b_[l] + model_->bias_[l];
    // The 31/32 gain keeps saturated activations at 0.96875 instead of the
    // exact power of two 1.0f, where a one-ulp noise wiggle would flip the
    // exponent field and trip the bit comparator on honest runs.
    x = (z.array().tanh() * kSaturationGain).matrix();
    if (quant)
      x = x.unaryExpr([qbits](float v) { return quantize_scalar(v, qbits); });
  }
  return x;
}

// --- embedding / head --------------------------------------------------------

EmbeddingTable::EmbeddingTable(const ModelConfig& config) {
  CounterPrng rng(seed_digest(config.seed), "vdi/pipeline/embed");
  table_ = random_matrix(rng, config.vocab_size, config.hidden_dim, 1.0f);
}

RowVecF EmbeddingTable::embed(std::uint32_t token) const {
  if (token >= static_cast<std::uint32_t>(table_.rows()))
    throw IndexOutOfRange("token " + std::to_string(token));
  return table_.row(token);
}

MatrixRX EmbeddingTable::embed_sequence(std::span<const std::uint32_t> tokens) const {
  MatrixRX m(tokens.size(), table_.cols());
  for (std::size_t i = 0; i < tokens.size(); ++i) m.row(i) = embed(tokens[i]);
  return m;
}

OutputHead::OutputHead(const ModelConfig& config) : eos_bias_(config.eos_logit_bias) {
  CounterPrng rng(seed_digest(config.seed), "vdi/pipeline/head");
  weights_ = random_matrix(rng, config.hidden_dim, config.vocab_size, 1.0f);
}

std::uint32_t OutputHead::decode(const RowVecF& row, CostMeter* meter) const {
  if (row.cols() != weights_.rows())
    throw ShapeMismatch("head row width " + std::to_string(row.cols()));
  RowVecF logits = row * weights_;
  logits(0, 0) += eos_bias_;
  Eigen::Index best = 0;
  logits.maxCoeff(&best);  // ties resolve to the lowest index
  if (meter)
    meter->add(CostPhase::kDecode,
               static_cast<std::uint64_t>(weights_.rows()) * weights_.cols() * 2);
  return static_cast<std::uint32_t>(best);
}

SyntheticModel SyntheticModel::build(const ModelConfig& config, Arithmetic mode) {
  SyntheticModel m{config, EmbeddingTable(config), {}, OutputHead(config)};
  for (std::uint32_t i = 1; i <= config.segment_count; ++i)
    m.segments.emplace_back(config, i, mode);
  return m;
}

// --- noise -------------------------------------------------------------------

NoiseStream::NoiseStream(const NoiseModel& noise, std::uint32_t segment_index)
    : noise_(noise),
      rng_(noise.seed, "vdi/pipeline/noise/" + std::to_string(segment_index)) {}

void NoiseStream::apply(RowVecF& row) {
  if (noise_.relative_scale == 0 && noise_.exponent_flip_prob == 0) return;
  for (Eigen::Index j = 0; j < row.cols(); ++j) {
    // The perturbation is computed in double so a relative scale near one
    // float32 ulp still lands as a visible last-bit wiggle instead of
    // rounding away inside the (1 + eps) factor.
    const double factor = 1.0 + static_cast<double>(noise_.relative_scale) *
                                    static_cast<double>(rng_.next_float_signed());
    row(0, j) = static_cast<float>(static_cast<double>(row(0, j)) * factor);
    if (noise_.exponent_flip_prob > 0 && rng_.next_bool(noise_.exponent_flip_prob))
      row(0, j) *= rng_.next_bool(0.5) ? 2.0f : 0.5f;
  }
}

// --- forward passes ----------------------------------------------------------

HiddenState segment_forward(const SegmentModel& model, const HiddenState& input,
                            const NoiseModel& noise, CostMeter* meter, CostPhase phase) {
  input.validate();
  if (input.values.rows() == 0) throw EmptyTrace("segment input has no rows");
  SegmentModel::Runner runner(model);
  NoiseStream stream(noise, model.segment_index());
  MatrixRX out(input.values.rows(), input.values.cols());
  for (Eigen::Index r = 0; r < input.values.rows(); ++r) {
    RowVecF y = runner.feed(input.values.row(r));
    stream.apply(y);
    out.row(r) = y;
  }
  if (meter) meter->add(phase, model.ops_per_row() * input.values.rows());
  return HiddenState{input.task_id, model.segment_index(), input.token_index, std::move(out)};
}

std::uint32_t decode_step(const OutputHead& head, const HiddenState& tail_state,
                          CostMeter* meter) {
  if (tail_state.values.rows() == 0) throw EmptyTrace("tail state has no rows");
  return head.decode(tail_state.values.row(tail_state.values.rows() - 1), meter);
}

namespace {

// One code path drives honest generation, attack generation, and (via
// verify_prefill's identical Runner usage) verification, so incremental and
// batched traversals of the same rows are bit-identical by construction.
GenerationResult run_generation(const SyntheticModel& model,
                                std::span<const std::uint32_t> prompt,
                                std::uint32_t max_tokens, const NoiseModel& noise,
                                CostMeter* meter, const std::string& task_id,
                                const std::vector<std::uint32_t>* forced) {
  if (prompt.empty()) throw EmptyTrace("prompt must be non-empty");
  const std::size_t num_segments = model.segments.size();
  GenerationResult result;
  result.prompt.assign(prompt.begin(), prompt.end());
  result.states.resize(num_segments);

  std::vector<SegmentModel::Runner> runners;
  std::vector<NoiseStream> streams;
  runners.reserve(num_segments);
  streams.reserve(num_segments);
  for (const SegmentModel& seg : model.segments) {
    runners.emplace_back(seg);
    streams.emplace_back(noise, seg.segment_index());
  }

  auto advance = [&](const MatrixRX& rows_in, std::uint32_t step,
                     CostPhase phase) -> MatrixRX {
    MatrixRX x = rows_in;
    for (std::size_t i = 0; i < num_segments; ++i) {
      MatrixRX out(x.rows(), x.cols());
      for (Eigen::Index r = 0; r < x.rows(); ++r) {
        RowVecF y = runners[i].feed(x.row(r));
        streams[i].apply(y);
        out.row(r) = y;
      }
      if (meter) meter->add(phase, model.segments[i].ops_per_row() * x.rows());
      result.states[i].push_back(HiddenState{
          task_id, model.segments[i].segment_index(), step, out});
      x = std::move(out);
    }
    return x;
  };

  const std::uint32_t step_budget =
      forced ? static_cast<std::uint32_t>(forced->size()) : max_tokens;
  MatrixRX x = model.embed.embed_sequence(prompt);
  for (std::uint32_t t = 1; t <= step_budget; ++t) {
    const CostPhase phase = t == 1 ? CostPhase::kPrefill : CostPhase::kDecode;
    MatrixRX boundary = advance(x, t, phase);
    std::uint32_t y = model.head.decode(boundary.row(boundary.rows() - 1), meter);
    if (forced) y = (*forced)[t - 1];
    result.tokens.push_back(y);
    if (y == kEosToken) break;
    if (t == step_budget) {
      result.truncated = true;
      break;
    }
    x = model.embed.embed(y);
  }
  return result;
}

}  // namespace

GenerationResult generate(const SyntheticModel& model, std::span<const std::uint32_t> prompt,
                          std::uint32_t max_tokens, const NoiseModel& noise, CostMeter* meter,
                          const std::string& task_id) {
  return run_generation(model, prompt, max_tokens, noise, meter, task_id, nullptr);
}

std::vector<HiddenState> verify_prefill(const SegmentModel& model,
                                        const MatrixRX& boundary_inputs,
                                        std::uint32_t prompt_len, std::uint32_t step_count,
                                        const NoiseModel& noise, CostMeter* meter,
                                        const std::string& task_id) {
  if (prompt_len == 0 || step_count == 0)
    throw EmptyTrace("verify_prefill needs at least the prompt and one step");
  const Eigen::Index want = static_cast<Eigen::Index>(prompt_len) + step_count - 1;
  if (boundary_inputs.rows() != want)
    throw ShapeMismatch("boundary rows " + std::to_string(boundary_inputs.rows()) +
                        ", expected " + std::to_string(want));
  SegmentModel::Runner runner(model);
  NoiseStream stream(noise, model.segment_index());
  std::vector<HiddenState> out;
  out.reserve(step_count);
  Eigen::Index next_row = 0;
  for (std::uint32_t t = 1; t <= step_count; ++t) {
    const Eigen::Index rows = t == 1 ? prompt_len : 1;
    MatrixRX block(rows, boundary_inputs.cols());
    for (Eigen::Index r = 0; r < rows; ++r) {
      RowVecF y = runner.feed(boundary_inputs.row(next_row++));
      stream.apply(y);
      block.row(r) = y;
    }
    out.push_back(HiddenState{task_id, model.segment_index(), t, std::move(block)});
  }
  if (meter) meter->add(CostPhase::kVerifyPrefill, model.ops_per_row() * want);
  return out;
}

// --- attacks -----------------------------------------------------------------

AttackSpec AttackSpec::quantize(int bits) {
  AttackSpec a;
  a.kind = Kind::kQuantize;
  a.bits = bits;
  return a;
}

AttackSpec AttackSpec::early_stop(std::uint32_t t_prime) {
  AttackSpec a;
  a.kind = Kind::kEarlyStop;
  a.stop_after = t_prime == 0 ? 1 : t_prime;
  return a;
}

AttackSpec AttackSpec::forged_output(const ModelConfig& small) {
  AttackSpec a;
  a.kind = Kind::kForgedOutput;
  a.forge_config = small;
  return a;
}

GenerationResult apply_attack(const AttackSpec& attack, const SyntheticModel& honest_model,
                              std::span<const std::uint32_t> prompt, std::uint32_t max_tokens,
                              const NoiseModel& noise, CostMeter* meter,
                              const std::string& task_id) {
  switch (attack.kind) {
    case AttackSpec::Kind::kIdentity:
      return run_generation(honest_model, prompt, max_tokens, noise, meter, task_id, nullptr);
    case AttackSpec::Kind::kQuantize: {
      SyntheticModel cheap =
          SyntheticModel::build(honest_model.config, Arithmetic::quantized(attack.bits));
      return run_generation(cheap, prompt, max_tokens, noise, meter, task_id, nullptr);
    }
    case AttackSpec::Kind::kEarlyStop: {
      GenerationResult gen =
          run_generation(honest_model, prompt, max_tokens, noise, meter, task_id, nullptr);
      std::uint32_t cut = std::min<std::uint32_t>(attack.stop_after,
                                                  static_cast<std::uint32_t>(gen.tokens.size()));
      if (cut == 0) return gen;
      gen.tokens.resize(cut);
      gen.tokens[cut - 1] = kEosToken;  // claim the sequence ended here
      for (auto& per_segment : gen.states)
        if (per_segment.size() > cut) per_segment.resize(cut);
      gen.truncated = false;
      return gen;
    }
    case AttackSpec::Kind::kForgedOutput: {
      // Tokens come from the cheap model; the published states are honest
      // prefill states of the real model teacher-forced over those tokens.
      SyntheticModel small = SyntheticModel::build(attack.forge_config);
      NoiseModel small_noise = noise;
      small_noise.seed = derive_key(noise.seed, "vdi/pipeline/forged-small");
      GenerationResult cheap =
          run_generation(small, prompt, max_tokens, small_noise, meter, task_id, nullptr);
      return run_generation(honest_model, prompt, max_tokens, noise, meter, task_id,
                            &cheap.tokens);
    }
  }
  throw Error("unreachable attack kind");
}

}  // namespace vdi
