#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vdi/bitstats.hpp"
#include "vdi/commitments.hpp"
#include "vdi/common.hpp"
#include "vdi/identity.hpp"
#include "vdi/randomness.hpp"

namespace vdi {

using RoundId = std::uint64_t;
inline constexpr RoundId kNoRound = ~RoundId{0};

struct ContractConfig {
  double tau = 0.7;                  // rule-2 cluster threshold fraction
  double delta = 1.5e-4;             // rule-2 agreement radius
  Tolerances onchain = kOnChain;     // rule-1 opening comparator
  std::uint32_t sample_count = 8;    // scalar indices opened per verifier
  std::int64_t inference_reward = 60;
  std::int64_t verification_reward = 90;  // committee pool, shared by winners
  std::int64_t verification_cost = 10;    // per verifier task (escrow pricing)
  std::int64_t slash = 30;                // per-party penalty
  std::uint64_t commit_window = 4;        // ticks from open to commit deadline
  std::uint64_t reveal_window = 4;        // ticks from sampling to reveal deadline
  NodeId scheduler_node = 0;
  Digest scheduler_vrf_pk{};
  Digest scheduler_sig_pk{};
  Digest beacon_seed{};  // public randomness for dispute committees

  void validate() const;  // tau must exceed 1/2 for cluster uniqueness
};

enum class Phase { kCommit, kSampled, kReveal, kAdjudicated, kDisputed, kFinal };
enum class Verdict { kAcceptInferencer, kRejectInferencer, kAmbiguous };

const char* phase_name(Phase p);
const char* verdict_name(Verdict v);

// The on-chain audit package for one stage: everything needed to re-derive
// the sampled indices and check the inferencer's claimed values against its
// committed root.
struct SamplingPackage {
  std::uint32_t final_step = 0;          // t of the committed tail state
  VrfOutput vrf;                         // over <h, i, {posted commitments}>
  MerkleCommitment inferencer_root;      // gamma_inf
  Signature inferencer_sig;              // over relay_message(h, i, t, root)
  std::vector<InclusionProof> openings;  // inferencer values at sampled indices
};

struct RevealSubmission {
  bool verdict_true = false;
  Salt salt{};
  std::vector<InclusionProof> openings;     // verifier values at sampled indices
  std::optional<std::uint32_t> tail_token;  // decoded final token (tail stage only)
};

struct Outcome {
  Verdict verdict = Verdict::kAmbiguous;
  std::string rule;  // which decision path fired
  std::vector<NodeId> rewarded;
  std::vector<NodeId> slashed;
};

struct VerificationRound {
  RoundId id = 0;
  Digest task_hash{};
  std::uint32_t stage = 0;
  bool tail_stage = false;
  std::uint32_t published_tail_token = 0;  // final token the inferencer reported
  NodeId inferencer = 0;
  std::vector<NodeId> committee;
  Phase phase = Phase::kCommit;
  std::uint64_t opened_at = 0;
  std::uint64_t sampled_at = 0;
  std::map<NodeId, PostedCommitment> commitments;
  std::optional<SamplingPackage> package;
  std::vector<std::uint32_t> sampled_indices;
  std::map<NodeId, RevealSubmission> reveals;
  std::optional<Outcome> outcome;
  RoundId parent = kNoRound;               // set on reconsideration rounds
  std::optional<RoundId> reconsideration;  // set on disputed rounds
  std::int64_t escrow = 0;
};

// Serialized, event-ordered verification state machine.  Every mutating
// operation appends one line-JSON event carrying its full inputs plus the
// post-state digest, so an auditor can replay the log from genesis and
// re-verify every VRF, signature, and Merkle check offline.
class Contract {
 public:
  Contract(TokenLedger& ledger, ContractConfig config);

  void register_identity(NodeId node, const Digest& signing_pk);

  RoundId open_round(const Digest& task_hash, std::uint32_t stage, bool tail_stage,
                     std::uint32_t published_tail_token, NodeId inferencer,
                     std::span<const NodeId> committee);

  void submit_verdict_commitment(RoundId id, NodeId verifier, const PostedCommitment& pc);

  // Throws VrfInvalid / SignatureInvalid / MerkleInvalid naming the failing
  // element; on success stores the package and opens the reveal phase.
  void check_sampling_package(RoundId id, const SamplingPackage& package);

  void reveal(RoundId id, NodeId verifier, const RevealSubmission& submission);

  const Outcome& adjudicate(RoundId id);

  // Ambiguous rounds only: a recorded external proof verdict.  proof_valid
  // mirrors the ZK oracle's answer; an invalid proof is rejected.
  const Outcome& file_zk_dispute(RoundId id, NodeId prover, bool proof_valid);

  // Rejected rounds only: reconsideration with a strictly larger committee
  // drawn from candidates by the public beacon, excluding round-one parties.
  RoundId open_dispute(RoundId id, std::uint32_t m_prime, std::span<const NodeId> candidates,
                       std::int64_t escrow);
  void finalize_dispute(RoundId id);  // applies the reconsideration outcome

  // Slashes the scheduler on two conflicting dual-signed relay records.
  void file_relay_complaint(NodeId complainant, const Digest& task_hash, std::uint32_t stage,
                            std::uint32_t step, const MerkleCommitment& root_a,
                            const Signature& sched_sig_a, const MerkleCommitment& root_b,
                            const Signature& sched_sig_b);

  void close_round(RoundId id);  // adjudicated -> final (ends the zk window)

  void advance_time(std::uint64_t now);  // monotone; expires commit deadlines

  std::uint64_t now() const { return clock_; }
  const VerificationRound& round(RoundId id) const;
  std::size_t round_count() const { return rounds_.size(); }
  const ContractConfig& config() const { return config_; }
  TokenLedger& ledger() { return ledger_; }
  const std::vector<nlohmann::json>& events() const { return events_; }

  Digest state_digest() const;
  void save_log(const std::filesystem::path& path) const;  // line-JSON

 private:
  friend struct ContractReplayer;

  VerificationRound& round_mut(RoundId id);
  void emit(nlohmann::json event);
  void expire_commit_deadlines();
  std::vector<PostedCommitment> posted_in_committee_order(const VerificationRound& r) const;
  const Digest& signer_pk(NodeId node) const;
  void settle_rule1(VerificationRound& r, Outcome& out);
  bool settle_rule2(VerificationRound& r, Outcome& out);
  void settle_rule3(VerificationRound& r, Outcome& out);

  TokenLedger& ledger_;
  ContractConfig config_;
  std::uint64_t clock_ = 0;
  std::map<NodeId, Digest> identities_;
  std::map<RoundId, VerificationRound> rounds_;
  RoundId next_round_ = 1;
  std::vector<nlohmann::json> events_;
};

// Canonical JSON encodings shared by the event log and the replay audit.
nlohmann::json to_json(const MerkleCommitment& c);
nlohmann::json to_json(const PostedCommitment& pc);
nlohmann::json to_json(const InclusionProof& proof);
nlohmann::json to_json(const Signature& sig);
nlohmann::json to_json(const VrfOutput& out);
nlohmann::json to_json(const SamplingPackage& package);
nlohmann::json to_json(const RevealSubmission& submission);
MerkleCommitment commitment_from_json(const nlohmann::json& j);
PostedCommitment posted_from_json(const nlohmann::json& j);
InclusionProof proof_from_json(const nlohmann::json& j);
Signature signature_from_json(const nlohmann::json& j);
VrfOutput vrf_from_json(const nlohmann::json& j);
SamplingPackage package_from_json(const nlohmann::json& j);
RevealSubmission reveal_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const ContractConfig& config);
ContractConfig config_from_json(const nlohmann::json& j);

// --- replay audit -----------------------------------------------------------

struct ReplayResult {
  bool ok = false;
  std::size_t events_checked = 0;
  std::optional<std::size_t> first_divergence;  // seq of the first bad event
  std::string warning;                          // non-fatal notes (truncation)
  std::string detail;                           // human-readable failure cause
};

// Rebuilds a contract from the genesis event and re-executes the log,
// re-verifying every VRF/signature/Merkle check and comparing the post-event
// state digests.  A truncated tail is a warning, not a failure.
ReplayResult replay_contract_log(const std::filesystem::path& path);

}  // namespace vdi
