#include "vdi/randomness.hpp"

#include <algorithm>
#include <unordered_map>

#include "vdi/prng.hpp"

namespace vdi {

VrfKeypair VrfKeypair::from_seed(const Digest& seed) {
  VrfKeypair kp;
  kp.secret = seed;
  Hasher h;
  h.update(tag::kVrfPk).update(seed);
  kp.public_key = h.finish();
  return kp;
}

VrfOutput vrf_eval(const VrfKeypair& key, std::span<const Byte> transcript) {
  if (transcript.empty()) throw Error("vrf transcript must be non-empty");
  // Keyed-hash stand-in: both values are recomputable from the public key,
  // so any third party can audit them offline.  Nothing in the simulator
  // evaluates under a key it does not hold, which is where the real VRF's
  // unpredictability-without-secret is assumed rather than enforced.
  VrfOutput out;
  out.transcript.assign(transcript.begin(), transcript.end());
  {
    Hasher h;
    h.update(tag::kVrfOut).update(key.public_key).update(transcript);
    out.randomness = h.finish();
  }
  {
    Hasher h;
    h.update(tag::kVrfProof).update(key.public_key).update(transcript).update(out.randomness);
    out.proof = h.finish();
  }
  return out;
}

bool vrf_verify(const Digest& public_key, std::span<const Byte> transcript, const VrfOutput& out) {
  if (transcript.empty() || out.transcript.size() != transcript.size()) return false;
  if (!std::equal(transcript.begin(), transcript.end(), out.transcript.begin())) return false;
  Hasher h;
  h.update(tag::kVrfOut).update(public_key).update(transcript);
  if (h.finish() != out.randomness) return false;
  Hasher p;
  p.update(tag::kVrfProof).update(public_key).update(transcript).update(out.randomness);
  return p.finish() == out.proof;
}

std::vector<std::uint32_t> permutation(const Digest& randomness, std::uint32_t n) {
  if (n == 0) throw Error("permutation needs n >= 1");
  std::vector<std::uint32_t> perm(n);
  for (std::uint32_t i = 0; i < n; ++i) perm[i] = i + 1;
  CounterPrng rng(derive_key(randomness, "fisher-yates"));
  for (std::uint32_t i = n - 1; i > 0; --i) {
    const std::uint32_t j = static_cast<std::uint32_t>(rng.uniform(i + 1));
    std::swap(perm[i], perm[j]);
  }
  return perm;
}

std::vector<std::uint32_t> sample_indices(const Digest& randomness, std::uint64_t leaf_count,
                                          std::uint32_t sample_size) {
  if (sample_size > leaf_count) throw SampleTooLarge();
  CounterPrng rng(derive_key(randomness, "index-sample"));
  // Partial Fisher-Yates on a sparse array: only touched slots materialize.
  std::unordered_map<std::uint64_t, std::uint64_t> slot;
  auto value_at = [&](std::uint64_t i) {
    auto it = slot.find(i);
    return it == slot.end() ? i : it->second;
  };
  std::vector<std::uint32_t> picked;
  picked.reserve(sample_size);
  for (std::uint32_t k = 0; k < sample_size; ++k) {
    const std::uint64_t j = k + rng.uniform(leaf_count - k);
    picked.push_back(static_cast<std::uint32_t>(value_at(j)));
    slot[j] = value_at(k);
  }
  std::sort(picked.begin(), picked.end());
  return picked;
}

Bytes role_transcript(const Digest& task_hash, std::uint32_t stage, std::uint32_t layer_count) {
  Bytes out = to_bytes(tag::kRoleTranscript);
  out.insert(out.end(), task_hash.begin(), task_hash.end());
  append_u32(out, stage);
  append_u32(out, layer_count);
  return out;
}

Bytes sampling_transcript(const Digest& task_hash, std::uint32_t stage,
                          std::span<const PostedCommitment> commitments) {
  Bytes out = to_bytes(tag::kSampleTranscript);
  out.insert(out.end(), task_hash.begin(), task_hash.end());
  append_u32(out, stage);
  append_u32(out, static_cast<std::uint32_t>(commitments.size()));
  for (const PostedCommitment& c : commitments) {
    out.insert(out.end(), c.verdict_digest.begin(), c.verdict_digest.end());
    out.insert(out.end(), c.state_root.root.begin(), c.state_root.root.end());
    append_u64(out, c.state_root.leaf_count);
  }
  return out;
}

Bytes relay_message(const Digest& task_hash, std::uint32_t stage, std::uint32_t step,
                    const MerkleCommitment& root) {
  Bytes out = to_bytes(tag::kRelay);
  out.insert(out.end(), task_hash.begin(), task_hash.end());
  append_u32(out, stage);
  append_u32(out, step);
  out.insert(out.end(), root.root.begin(), root.root.end());
  append_u64(out, root.leaf_count);
  return out;
}

}  // namespace vdi
