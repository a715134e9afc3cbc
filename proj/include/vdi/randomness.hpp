#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "vdi/commitments.hpp"
#include "vdi/common.hpp"

namespace vdi {

// Simulated VRF: a keyed-hash evaluation whose proof is a deterministic
// signature over (transcript, randomness).  Verification needs only the
// public key, so third parties can re-derive every committee offline.
struct VrfKeypair {
  Digest secret{};
  Digest public_key{};

  static VrfKeypair from_seed(const Digest& seed);
};

struct VrfOutput {
  Digest randomness{};
  Digest proof{};
  Bytes transcript;  // the exact message hashed

  bool operator==(const VrfOutput&) const = default;
};

VrfOutput vrf_eval(const VrfKeypair& key, std::span<const Byte> transcript);
bool vrf_verify(const Digest& public_key, std::span<const Byte> transcript, const VrfOutput& out);

// Fisher-Yates permutation of [1..n] keyed off the VRF randomness.
std::vector<std::uint32_t> permutation(const Digest& randomness, std::uint32_t n);

// q distinct indices in [0, n), ascending.  Partial Fisher-Yates: exact
// without-replacement sampling in O(q) draws.
std::vector<std::uint32_t> sample_indices(const Digest& randomness, std::uint64_t leaf_count,
                                          std::uint32_t sample_size);  // throws SampleTooLarge

// --- protocol transcripts -------------------------------------------------

// Per-stage role-assignment transcript <h, i, L_i>.
Bytes role_transcript(const Digest& task_hash, std::uint32_t stage, std::uint32_t layer_count);

// Sampling transcript <h, i, {commitment_j}> binding the posted verdict
// digests and state roots in verifier-index order, length-prefixed.
struct PostedCommitment {
  Digest verdict_digest{};
  MerkleCommitment state_root;

  bool operator==(const PostedCommitment&) const = default;
};

Bytes sampling_transcript(const Digest& task_hash, std::uint32_t stage,
                          std::span<const PostedCommitment> commitments);

// Message both the inferencer and scheduler sign for the relay record of
// step t at stage i: <h, i, t, root, leaf_count>.
Bytes relay_message(const Digest& task_hash, std::uint32_t stage, std::uint32_t step,
                    const MerkleCommitment& root);

}  // namespace vdi
