#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace vdi {

using Byte = std::uint8_t;
using Bytes = std::vector<Byte>;
using Digest = std::array<Byte, 32>;

// Base class for every error the library throws.  Call sites that need to
// distinguish failure modes catch the derived types below.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

#define VDI_ERROR(NAME, DEFAULT_MSG)                        \
  struct NAME : Error {                                     \
    NAME() : Error(DEFAULT_MSG) {}                          \
    explicit NAME(const std::string& msg) : Error(msg) {}   \
  }

VDI_ERROR(NonFiniteScalar, "non-finite scalar");
VDI_ERROR(ShapeMismatch, "tensor shapes do not match");
VDI_ERROR(DimensionMismatch, "points live in different dimensions");
VDI_ERROR(EmptyTrace, "trace contains no scalars");
VDI_ERROR(EmptyLeafSet, "cannot build a tree over zero leaves");
VDI_ERROR(IndexOutOfRange, "index out of range");
VDI_ERROR(MalformedSalt, "salt must be exactly 32 bytes");
VDI_ERROR(SampleTooLarge, "sample size exceeds leaf count");
VDI_ERROR(InsufficientStake, "stake below the registration minimum");
VDI_ERROR(DuplicateKey, "public key already registered");
VDI_ERROR(NotActive, "node is not active");
VDI_ERROR(WithdrawalLocked, "withdrawal round not reached");
VDI_ERROR(UncoveredSlice, "layer range not fully covered");
VDI_ERROR(InsufficientGroupSize, "slice group below required size");
VDI_ERROR(GroupTooSmall, "stage group too small for the committee");
VDI_ERROR(SignatureInvalid, "signature check failed");
VDI_ERROR(VrfInvalid, "vrf proof rejected");
VDI_ERROR(MissingTranscript, "task transcript not available");
VDI_ERROR(CommitPhaseOpen, "sampling not derivable before commitments close");
VDI_ERROR(WrongPhase, "operation not permitted in current phase");
VDI_ERROR(NotInCommittee, "node is not a committee member");
VDI_ERROR(DoubleCommit, "commitment already submitted");
VDI_ERROR(DoubleReveal, "reveal already submitted");
VDI_ERROR(CommitMismatch, "reveal does not match commitment");
VDI_ERROR(MerkleInvalid, "inclusion proof rejected");
VDI_ERROR(MissingTailToken, "tail-stage reveal must carry the decoded token");
VDI_ERROR(NotRejected, "round did not end in rejection");
VDI_ERROR(CommitteeTooSmall, "reconsideration committee must be larger");
VDI_ERROR(InsufficientEscrow, "dispute escrow not covered");
VDI_ERROR(EvidenceInvalid, "complaint evidence rejected");
VDI_ERROR(UnknownNode, "node id not found");
VDI_ERROR(ScenarioError, "scenario file rejected");
VDI_ERROR(TraceIoError, "trace file rejected");
VDI_ERROR(ReplayError, "event log rejected");

#undef VDI_ERROR

// --- hashing ------------------------------------------------------------

// One-shot SHA-256.
Digest sha256(std::span<const Byte> data);

// Incremental SHA-256, used wherever a message is assembled from parts.
class Hasher {
 public:
  Hasher();
  ~Hasher();
  Hasher(const Hasher&) = delete;
  Hasher& operator=(const Hasher&) = delete;

  Hasher& update(std::span<const Byte> data);
  Hasher& update(std::string_view text);
  Hasher& update(const Digest& d);
  Hasher& update_u32(std::uint32_t v);  // little-endian
  Hasher& update_u64(std::uint64_t v);  // little-endian
  Digest finish();

 private:
  void* ctx_;
};

// Domain-separation tags.  Every hash in the protocol commits to its purpose
// so values from one context can never be replayed in another.
namespace tag {
inline constexpr std::string_view kLeaf = "vdi/merkle/leaf";
inline constexpr std::string_view kNode = "vdi/merkle/node";
inline constexpr std::string_view kVerdict = "vdi/verdict";
inline constexpr std::string_view kSigPk = "vdi/sig/pk";
inline constexpr std::string_view kSig = "vdi/sig/msg";
inline constexpr std::string_view kVrfPk = "vdi/vrf/pk";
inline constexpr std::string_view kVrfOut = "vdi/vrf/out";
inline constexpr std::string_view kVrfProof = "vdi/vrf/proof";
inline constexpr std::string_view kPrng = "vdi/prng";
inline constexpr std::string_view kTask = "vdi/task";
inline constexpr std::string_view kRoleTranscript = "vdi/transcript/role";
inline constexpr std::string_view kSampleTranscript = "vdi/transcript/sample";
inline constexpr std::string_view kRelay = "vdi/relay";
inline constexpr std::string_view kState = "vdi/state";
}  // namespace tag

// --- byte helpers -------------------------------------------------------

Bytes to_bytes(std::string_view text);
std::string hex_encode(std::span<const Byte> data);
Bytes hex_decode(std::string_view hex);  // throws Error on odd length / bad digit
Digest digest_from_hex(std::string_view hex);

void append_u32(Bytes& out, std::uint32_t v);
void append_u64(Bytes& out, std::uint64_t v);
void append_f32(Bytes& out, float v);
std::uint32_t read_u32(std::span<const Byte> in, std::size_t offset);
std::uint64_t read_u64(std::span<const Byte> in, std::size_t offset);
float read_f32(std::span<const Byte> in, std::size_t offset);

// Bit-pattern access used by the comparator and the wire formats.
std::uint32_t float_bits(float x);
float bits_to_float(std::uint32_t bits);

}  // namespace vdi
