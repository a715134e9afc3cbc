#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "vdi/common.hpp"
#include "vdi/hidden_state.hpp"

namespace vdi {

// Bumped if the canonical layout or the padding strategy ever changes.
inline constexpr Byte kSerializationVersion = 1;

// Header (version byte, rows, cols as u32 LE) followed by the raw
// little-endian bit patterns of the scalars in row-major order.
Bytes canonical_serialize(const HiddenState& hs);  // throws NonFiniteScalar
HiddenState canonical_deserialize(std::span<const Byte> bytes);

struct MerkleCommitment {
  Digest root{};
  std::uint64_t leaf_count = 0;

  bool operator==(const MerkleCommitment&) const = default;
};

struct ProofStep {
  Digest sibling{};
  bool sibling_on_right = false;
};

struct InclusionProof {
  std::uint64_t leaf_index = 0;
  float leaf_value = 0;
  std::vector<ProofStep> path;
};

// Binary Merkle tree over scalar leaves (4 bytes LE each).  Leaves and
// internal nodes hash under distinct domain tags; odd layers duplicate the
// last digest.  Chunked leaves (>1 scalar per leaf) are supported for very
// large tensors but openings are only defined for the default scalar mode.
class MerkleTree {
 public:
  static MerkleTree build(std::span<const float> scalars, std::size_t scalars_per_leaf = 1);

  const Digest& root() const { return levels_.back().front(); }
  std::uint64_t leaf_count() const { return leaf_count_; }
  MerkleCommitment commitment() const { return {root(), leaf_count_}; }

  InclusionProof open(std::uint64_t index) const;  // throws IndexOutOfRange

 private:
  std::vector<std::vector<Digest>> levels_;  // levels_[0] = leaf digests
  std::vector<float> scalars_;
  std::uint64_t leaf_count_ = 0;
  std::size_t chunk_ = 1;
};

// Stateless verification against the posted commitment.  The sibling sides
// are recomputed from leaf_index and leaf_count, so a proof transplanted to
// a different index fails even if its digests are untouched.
bool merkle_verify(const MerkleCommitment& commitment, const InclusionProof& proof);

Digest hash_leaf(float scalar);

// --- verdict commit-reveal ------------------------------------------------

using Salt = std::array<Byte, 32>;

struct VerdictCommitment {
  Digest digest{};

  bool operator==(const VerdictCommitment&) const = default;
};

VerdictCommitment commit_verdict(bool verdict, const Salt& salt);
bool open_verdict(const VerdictCommitment& c, bool verdict, const Salt& salt);

// --- trace files ----------------------------------------------------------

// One file per (task, segment): magic, count, then length-prefixed canonical
// serializations in step order.
void write_trace_file(const std::filesystem::path& path, std::span<const HiddenState> states);
std::vector<HiddenState> read_trace_file(const std::filesystem::path& path);  // throws TraceIoError

}  // namespace vdi
