#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "vdi/commitments.hpp"
#include "vdi/common.hpp"
#include "vdi/contract.hpp"
#include "vdi/identity.hpp"
#include "vdi/pipeline.hpp"
#include "vdi/randomness.hpp"

namespace vdi {

struct TaskRequest {
  std::string model_id;
  std::vector<std::uint32_t> prompt;
  std::uint32_t max_tokens = 8;
  std::uint64_t nonce = 0;
};

Digest task_hash(const TaskRequest& request);

struct StageAssignment {
  std::uint32_t stage = 0;  // 1-based segment index
  NodeId inferencer = 0;
  std::vector<NodeId> verifiers;
  VrfOutput vrf;
  std::vector<std::uint32_t> sigma;  // permutation of [1 .. group size]
};

struct RoleAssignment {
  Digest task_hash{};
  std::vector<StageAssignment> stages;
};

struct RelayRecord {
  Digest task_hash{};
  std::uint32_t stage = 0;
  std::uint32_t step = 0;
  MerkleCommitment root;
  Signature inferencer_sig;
  Signature scheduler_sig;
};

struct TaskTranscript {
  TaskRequest request;
  RoleAssignment assignment;
  std::vector<RelayRecord> relay;
  std::vector<std::uint32_t> tokens;  // y_1..y_T as published
  bool truncated = false;
  // states[i-1][t-1]: stage-i boundary output for step t (step 1 covers the
  // whole prompt, later steps one row each).
  std::vector<std::vector<HiddenState>> states;
};

// The one compute interface workers see.  Inference and verification build
// these identically — stage 1 carries token row sources, later stages carry
// boundary rows — so serialized orders for the same inputs are
// byte-identical and a worker cannot tell which mode it is serving.
struct WorkOrder {
  Digest task_hash{};
  std::uint32_t stage = 0;
  std::uint32_t prompt_len = 0;
  std::uint32_t step_count = 0;       // produce outputs for steps 1..step_count
  std::vector<std::uint32_t> tokens;  // stage 1: prompt then fed-back tokens
  MatrixRX rows;                      // stage > 1: boundary input rows

  std::uint32_t row_count() const { return prompt_len + step_count - 1; }
};

Bytes serialize_work_order(const WorkOrder& order);
WorkOrder deserialize_work_order(std::span<const Byte> bytes);

// A node: executes work orders against its own model instance and noise
// stream, signs relay roots, and decodes tail tokens.  Dishonest behaviors
// are knobs here so the surrounding protocol code stays attack-agnostic.
struct WorkerBehavior {
  AttackSpec attack = AttackSpec::identity();
  bool lazy = false;             // verifier: skip compute, fabricate the root
  bool sign_wrong_root = false;  // inferencer: sign a root it never computed
};

class Worker {
 public:
  using Behavior = WorkerBehavior;

  Worker(NodeId id, const SigningKeypair& keys, const SyntheticModel* model,
         const NoiseModel& noise, Behavior behavior = {});

  NodeId id() const { return id_; }
  const Digest& public_key() const { return keys_.public_key; }
  const Behavior& behavior() const { return behavior_; }
  void set_behavior(Behavior behavior) { behavior_ = behavior; }
  void set_model(const SyntheticModel* model) { model_ = model; }
  std::uint64_t ops() const { return ops_; }

  // Runs rows not yet computed for (task, stage) and returns outputs for all
  // requested steps.  The per-(task, stage) runner persists across calls, so
  // step-by-step decode and one-shot prefill share one code path and produce
  // identical bit patterns.
  MatrixRX execute(const WorkOrder& order);

  std::uint32_t decode_token(const Digest& task, std::uint32_t step, const RowVecF& tail_row,
                             std::span<const std::uint32_t> prompt, std::uint32_t max_tokens);

  Signature sign_relay(const Digest& task, std::uint32_t stage, std::uint32_t step,
                       const MerkleCommitment& root);

  Salt make_salt(const Digest& task, std::uint32_t stage);

 private:
  NodeId id_;
  SigningKeypair keys_;
  const SyntheticModel* model_;
  NoiseModel noise_;
  Behavior behavior_;
  std::uint64_t ops_ = 0;
  struct TaskState {
    SegmentModel::Runner runner;
    NoiseStream stream;
    MatrixRX outputs;
  };
  std::map<std::pair<Digest, std::uint32_t>, TaskState> tasks_;
  std::map<Digest, std::vector<std::uint32_t>> forged_scripts_;
};

struct SchedulerConfig {
  std::uint32_t k = 6;  // verifiers per stage, matching the committee size
  bool tamper_relay = false;  // equivocate on one relayed state (audit drill)
};

// In-process orchestrator: role assignment, the hop-by-hop relay with dual
// signatures, verification dispatch, and the on-chain sampling package.
class Scheduler {
 public:
  Scheduler(Registry& registry, std::string model_id, const VrfKeypair& vrf,
            const SigningKeypair& sig, NodeId node, SchedulerConfig config);

  void attach_worker(Worker* worker);

  const VrfKeypair& vrf_keys() const { return vrf_; }
  const SigningKeypair& sig_keys() const { return sig_; }
  NodeId node() const { return node_; }

  // Deterministic VRF role assignment over the current registry snapshot.
  RoleAssignment assign_roles(const TaskRequest& request) const;  // GroupTooSmall

  // The decode loop: stage-by-stage relay, dual-signed records, token
  // feedback, EOS/max_tokens stop.  Throws SignatureInvalid if any
  // inferencer signs a root that does not match its delivered state.
  TaskTranscript run_inference(const TaskRequest& request);

  // One order per (stage, verifier), byte-identical to inference orders.
  std::vector<WorkOrder> dispatch_verification(const TaskTranscript& transcript) const;

  // The on-chain audit package for one stage.  Refuses to sample while the
  // commit phase is still open (the unpredictability ordering).
  SamplingPackage publish_samples(const TaskTranscript& transcript, std::uint32_t stage,
                                  std::span<const PostedCommitment> posted,
                                  bool commit_phase_closed, std::uint32_t sample_count) const;

 private:
  Worker& worker(NodeId id) const;

  Registry& registry_;
  std::string model_id_;
  VrfKeypair vrf_;
  SigningKeypair sig_;
  NodeId node_;
  SchedulerConfig config_;
  std::map<NodeId, Worker*> workers_;
};

// --- verifier role ------------------------------------------------------

// What a verifier sees beyond its work order: the inferencer's claimed
// outputs for the stage and the published token sequence.
struct VerifierContext {
  WorkOrder order;
  std::vector<HiddenState> claimed;
  bool tail_stage = false;
  std::vector<std::uint32_t> published_tokens;  // y_1..y_T as published
  const OutputHead* head = nullptr;  // for the per-step decode checks
};

struct VerifierWork {
  bool verdict = true;
  Salt salt{};
  PostedCommitment posted;
  RevealSubmission reveal_at(std::span<const std::uint32_t> indices) const;
  MerkleTree tree;                          // over the final-step rows
  std::vector<HiddenState> recomputed;      // empty for lazy verifiers
  std::optional<std::uint32_t> tail_token;  // own decode of the final state
};

// Full-sequence prefill via the worker, off-chain comparison against the
// claimed states, verdict commitment, and the reveal material.
VerifierWork run_verifier(Worker& worker, const VerifierContext& context);

// Assembles what verifier j at `stage` sees, reusing the dispatched order.
VerifierContext make_verifier_context(const TaskTranscript& transcript, std::uint32_t stage,
                                      WorkOrder order, const OutputHead* head);

// --- audits and persistence ----------------------------------------------

// Recomputes every stage's roles from public material (group snapshot, VRF
// public key) and checks proof plus membership; false on any mismatch.
bool audit_assignment(const RoleAssignment& assignment, const std::vector<Group>& groups,
                      const Digest& scheduler_vrf_pk, std::uint32_t k);

struct RelayAudit {
  bool signatures_ok = true;
  // Pairs of record indices that equivocate: same (h, i, t), different root,
  // both scheduler-signed — exactly the evidence file_relay_complaint wants.
  std::vector<std::pair<std::size_t, std::size_t>> conflicts;
};

RelayAudit audit_relay(const TaskTranscript& transcript, const Registry& registry,
                       const Digest& scheduler_sig_pk);

nlohmann::json to_json(const TaskRequest& request);
TaskRequest request_from_json(const nlohmann::json& j);
nlohmann::json to_json(const RoleAssignment& assignment);
RoleAssignment assignment_from_json(const nlohmann::json& j);
nlohmann::json to_json(const RelayRecord& record);
RelayRecord relay_record_from_json(const nlohmann::json& j);

// Event-log directory: assignment.json, relay.log (line JSON), meta.json,
// states/segment-<i>.trace.
void persist_transcript(const TaskTranscript& transcript, const std::filesystem::path& dir);
TaskTranscript load_transcript(const std::filesystem::path& dir);  // throws MissingTranscript

}  // namespace vdi
