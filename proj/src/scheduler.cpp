#include "vdi/scheduler.hpp"

#include <algorithm>
#include <fstream>
#include <string_view>

#include "vdi/bitstats.hpp"

namespace vdi {

namespace {

constexpr std::string_view kWorkOrderTag = "vdi/workorder";

std::span<const float> flat(const MatrixRX& m) {
  return {m.data(), static_cast<std::size_t>(m.size())};
}

std::string task_label(const Digest& h) { return hex_encode(h).substr(0, 16); }

}  // namespace

Digest task_hash(const TaskRequest& request) {
  Hasher h;
  h.update(tag::kTask);
  h.update_u64(request.model_id.size());
  h.update(request.model_id);
  h.update_u32(static_cast<std::uint32_t>(request.prompt.size()));
  for (std::uint32_t tok : request.prompt) h.update_u32(tok);
  h.update_u32(request.max_tokens);
  h.update_u64(request.nonce);
  return h.finish();
}

// --- work orders ----------------------------------------------------------

Bytes serialize_work_order(const WorkOrder& order) {
  Bytes out;
  out.insert(out.end(), kWorkOrderTag.begin(), kWorkOrderTag.end());
  out.insert(out.end(), order.task_hash.begin(), order.task_hash.end());
  append_u32(out, order.stage);
  append_u32(out, order.prompt_len);
  append_u32(out, order.step_count);
  append_u32(out, static_cast<std::uint32_t>(order.tokens.size()));
  for (std::uint32_t tok : order.tokens) append_u32(out, tok);
  append_u64(out, static_cast<std::uint64_t>(order.rows.rows()));
  append_u64(out, static_cast<std::uint64_t>(order.rows.cols()));
  for (Eigen::Index r = 0; r < order.rows.rows(); ++r)
    for (Eigen::Index c = 0; c < order.rows.cols(); ++c) append_f32(out, order.rows(r, c));
  return out;
}

WorkOrder deserialize_work_order(std::span<const Byte> bytes) {
  std::size_t off = 0;
  auto need = [&](std::size_t n) {
    if (bytes.size() - off < n) throw Error("work order truncated");
  };
  auto take_u32 = [&] {
    need(4);
    const std::uint32_t v = read_u32(bytes, off);
    off += 4;
    return v;
  };
  auto take_u64 = [&] {
    need(8);
    const std::uint64_t v = read_u64(bytes, off);
    off += 8;
    return v;
  };
  auto take_f32 = [&] {
    need(4);
    const float v = read_f32(bytes, off);
    off += 4;
    return v;
  };
  need(kWorkOrderTag.size());
  if (std::string_view(reinterpret_cast<const char*>(bytes.data()), kWorkOrderTag.size()) !=
      kWorkOrderTag)
    throw Error("work order tag mismatch");
  off += kWorkOrderTag.size();
  WorkOrder order;
  need(order.task_hash.size());
  std::copy_n(bytes.begin() + off, order.task_hash.size(), order.task_hash.begin());
  off += order.task_hash.size();
  order.stage = take_u32();
  order.prompt_len = take_u32();
  order.step_count = take_u32();
  const std::uint32_t n_tokens = take_u32();
  order.tokens.reserve(n_tokens);
  for (std::uint32_t i = 0; i < n_tokens; ++i) order.tokens.push_back(take_u32());
  const std::uint64_t rows = take_u64();
  const std::uint64_t cols = take_u64();
  order.rows.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (std::uint64_t r = 0; r < rows; ++r)
    for (std::uint64_t c = 0; c < cols; ++c)
      order.rows(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = take_f32();
  if (off != bytes.size()) throw Error("work order has trailing bytes");
  return order;
}

// --- worker ----------------------------------------------------------------

Worker::Worker(NodeId id, const SigningKeypair& keys, const SyntheticModel* model,
               const NoiseModel& noise, Behavior behavior)
    : id_(id), keys_(keys), model_(model), noise_(noise), behavior_(behavior) {}

MatrixRX Worker::execute(const WorkOrder& order) {
  if (order.stage == 0 || order.stage > model_->segments.size())
    throw IndexOutOfRange("stage " + std::to_string(order.stage));
  const SegmentModel& seg = model_->segments[order.stage - 1];
  if (order.prompt_len == 0 || order.step_count == 0)
    throw EmptyTrace("work order covers no rows");
  const Eigen::Index want = order.row_count();
  MatrixRX rows_in;
  if (order.stage == 1) {
    if (order.rows.size() != 0)
      throw ShapeMismatch("stage-1 orders carry tokens, not rows");
    if (static_cast<Eigen::Index>(order.tokens.size()) != want)
      throw ShapeMismatch("stage-1 token count " + std::to_string(order.tokens.size()));
    rows_in = model_->embed.embed_sequence(order.tokens);
  } else {
    if (!order.tokens.empty())
      throw ShapeMismatch("later stages carry rows, not tokens");
    if (order.rows.rows() != want ||
        order.rows.cols() != static_cast<Eigen::Index>(seg.hidden_dim()))
      throw ShapeMismatch("boundary rows " + std::to_string(order.rows.rows()));
    rows_in = order.rows;
  }
  const auto key = std::make_pair(order.task_hash, order.stage);
  auto it = tasks_.find(key);
  if (it == tasks_.end()) {
    NoiseModel per_task = noise_;
    per_task.seed = derive_key(noise_.seed, "vdi/worker/task/" + hex_encode(order.task_hash));
    it = tasks_
             .emplace(key, TaskState{SegmentModel::Runner(seg),
                                     NoiseStream(per_task, order.stage),
                                     MatrixRX(0, seg.hidden_dim())})
             .first;
  }
  TaskState& st = it->second;
  if (st.outputs.rows() < want) {
    const Eigen::Index prev = st.outputs.rows();
    st.outputs.conservativeResize(want, seg.hidden_dim());
    for (Eigen::Index r = prev; r < want; ++r) {
      RowVecF y = st.runner.feed(rows_in.row(r));
      st.stream.apply(y);
      st.outputs.row(r) = y;
      ops_ += seg.ops_per_row();
    }
  }
  return st.outputs.topRows(want);
}

std::uint32_t Worker::decode_token(const Digest& task, std::uint32_t step, const RowVecF& tail_row,
                                   std::span<const std::uint32_t> prompt,
                                   std::uint32_t max_tokens) {
  switch (behavior_.attack.kind) {
    case AttackSpec::Kind::kIdentity:
    case AttackSpec::Kind::kQuantize:
      return model_->head.decode(tail_row);
    case AttackSpec::Kind::kEarlyStop:
      if (step >= behavior_.attack.stop_after) return kEosToken;
      return model_->head.decode(tail_row);
    case AttackSpec::Kind::kForgedOutput: {
      auto it = forged_scripts_.find(task);
      if (it == forged_scripts_.end()) {
        SyntheticModel small = SyntheticModel::build(behavior_.attack.forge_config);
        NoiseModel small_noise = noise_;
        small_noise.seed = derive_key(noise_.seed, "vdi/pipeline/forged-small");
        GenerationResult cheap = generate(small, prompt, max_tokens, small_noise);
        it = forged_scripts_.emplace(task, std::move(cheap.tokens)).first;
      }
      const std::vector<std::uint32_t>& script = it->second;
      if (step > script.size()) return kEosToken;
      return script[step - 1];
    }
  }
  throw Error("unreachable attack kind");
}

Signature Worker::sign_relay(const Digest& task, std::uint32_t stage, std::uint32_t step,
                             const MerkleCommitment& root) {
  MerkleCommitment target = root;
  if (behavior_.sign_wrong_root) target.root[0] ^= Byte{0x01};
  return sign(id_, keys_, relay_message(task, stage, step, target));
}

Salt Worker::make_salt(const Digest& task, std::uint32_t stage) {
  Digest d = derive_key(keys_.secret,
                        "vdi/worker/salt/" + hex_encode(task) + "/" + std::to_string(stage));
  Salt salt;
  std::copy(d.begin(), d.end(), salt.begin());
  return salt;
}

// --- scheduler --------------------------------------------------------------

Scheduler::Scheduler(Registry& registry, std::string model_id, const VrfKeypair& vrf,
                     const SigningKeypair& sig, NodeId node, SchedulerConfig config)
    : registry_(registry),
      model_id_(std::move(model_id)),
      vrf_(vrf),
      sig_(sig),
      node_(node),
      config_(config) {}

void Scheduler::attach_worker(Worker* worker) { workers_[worker->id()] = worker; }

Worker& Scheduler::worker(NodeId id) const {
  auto it = workers_.find(id);
  if (it == workers_.end()) throw UnknownNode("no worker attached for node " + std::to_string(id));
  return *it->second;
}

RoleAssignment Scheduler::assign_roles(const TaskRequest& request) const {
  RoleAssignment assignment;
  assignment.task_hash = task_hash(request);
  const std::vector<Group> groups = registry_.group_snapshot(model_id_);
  for (std::uint32_t i = 1; i <= groups.size(); ++i) {
    const Group& g = groups[i - 1];
    if (g.members.size() < static_cast<std::size_t>(config_.k) + 1)
      throw GroupTooSmall("stage " + std::to_string(i) + " has " +
                          std::to_string(g.members.size()) + " nodes, needs " +
                          std::to_string(config_.k + 1));
    const std::uint32_t layer_count = g.slice.hi - g.slice.lo + 1;
    StageAssignment sa;
    sa.stage = i;
    sa.vrf = vrf_eval(vrf_, role_transcript(assignment.task_hash, i, layer_count));
    sa.sigma = permutation(sa.vrf.randomness, static_cast<std::uint32_t>(g.members.size()));
    sa.inferencer = g.members[sa.sigma[0] - 1];
    for (std::uint32_t j = 1; j <= config_.k; ++j)
      sa.verifiers.push_back(g.members[sa.sigma[j] - 1]);
    assignment.stages.push_back(std::move(sa));
  }
  return assignment;
}

TaskTranscript Scheduler::run_inference(const TaskRequest& request) {
  TaskTranscript ts;
  ts.request = request;
  ts.assignment = assign_roles(request);
  const Digest h = ts.assignment.task_hash;
  const std::string label = task_label(h);
  const std::size_t num_stages = ts.assignment.stages.size();
  const std::uint32_t prompt_len = static_cast<std::uint32_t>(request.prompt.size());
  ts.states.resize(num_stages);

  // inputs[i-1] accumulates the boundary rows stage i+1 consumes.
  std::vector<MatrixRX> inputs(num_stages);
  bool tampered_once = false;

  for (std::uint32_t t = 1; t <= request.max_tokens; ++t) {
    MatrixRX block;
    for (std::uint32_t i = 1; i <= num_stages; ++i) {
      const StageAssignment& sa = ts.assignment.stages[i - 1];
      Worker& w = worker(sa.inferencer);
      WorkOrder order;
      order.task_hash = h;
      order.stage = i;
      order.prompt_len = prompt_len;
      order.step_count = t;
      if (i == 1) {
        order.tokens = request.prompt;
        order.tokens.insert(order.tokens.end(), ts.tokens.begin(), ts.tokens.end());
      } else {
        order.rows = inputs[i - 1];
      }
      const MatrixRX all = w.execute(order);
      const Eigen::Index fresh = t == 1 ? prompt_len : 1;
      block = all.bottomRows(fresh);

      MerkleTree tree = MerkleTree::build(flat(block));
      const MerkleCommitment root = tree.commitment();
      const Bytes msg = relay_message(h, i, t, root);
      const Signature inferencer_sig = w.sign_relay(h, i, t, root);
      if (!verify_signature(w.public_key(), msg, inferencer_sig))
        throw SignatureInvalid("stage " + std::to_string(i) + " step " + std::to_string(t) +
                               ": inferencer root signature invalid, task aborted");
      const Signature scheduler_sig = sign(node_, sig_, msg);
      ts.relay.push_back({h, i, t, root, inferencer_sig, scheduler_sig});

      if (config_.tamper_relay && !tampered_once) {
        // Equivocation drill: countersign a second, conflicting root for the
        // same (h, i, t) and relay the doctored rows downstream.
        tampered_once = true;
        MatrixRX doctored = block;
        doctored(0, 0) = doctored(0, 0) * 1.25f + 0.125f;
        MerkleTree bad_tree = MerkleTree::build(flat(doctored));
        const MerkleCommitment bad_root = bad_tree.commitment();
        const Bytes bad_msg = relay_message(h, i, t, bad_root);
        ts.relay.push_back({h, i, t, bad_root, inferencer_sig, sign(node_, sig_, bad_msg)});
        block = std::move(doctored);
      }

      ts.states[i - 1].push_back(HiddenState{label, i, t, block});
      if (i < num_stages) {
        MatrixRX& sink = inputs[i];
        const Eigen::Index prev = sink.rows();
        sink.conservativeResize(prev + block.rows(), block.cols());
        sink.bottomRows(block.rows()) = block;
      }
    }

    Worker& tail = worker(ts.assignment.stages.back().inferencer);
    const RowVecF tail_row = block.row(block.rows() - 1);
    const std::uint32_t y = tail.decode_token(h, t, tail_row, request.prompt, request.max_tokens);
    ts.tokens.push_back(y);
    if (y == kEosToken) break;
    if (t == request.max_tokens) ts.truncated = true;
  }
  return ts;
}

std::vector<WorkOrder> Scheduler::dispatch_verification(const TaskTranscript& transcript) const {
  const std::size_t num_stages = transcript.assignment.stages.size();
  if (transcript.tokens.empty() || transcript.states.size() != num_stages)
    throw MissingTranscript("transcript has no inference results");
  for (const auto& per_stage : transcript.states)
    if (per_stage.size() != transcript.tokens.size())
      throw MissingTranscript("per-stage states inconsistent with the token count");

  const std::uint32_t step_count = static_cast<std::uint32_t>(transcript.tokens.size());
  const std::uint32_t prompt_len = static_cast<std::uint32_t>(transcript.request.prompt.size());
  std::vector<WorkOrder> orders;
  for (std::uint32_t i = 1; i <= num_stages; ++i) {
    WorkOrder order;
    order.task_hash = transcript.assignment.task_hash;
    order.stage = i;
    order.prompt_len = prompt_len;
    order.step_count = step_count;
    if (i == 1) {
      order.tokens = transcript.request.prompt;
      order.tokens.insert(order.tokens.end(), transcript.tokens.begin(),
                          transcript.tokens.end() - 1);
    } else {
      const std::vector<HiddenState>& prior = transcript.states[i - 2];
      const Eigen::Index cols = prior.front().values.cols();
      order.rows.resize(prompt_len + step_count - 1, cols);
      Eigen::Index at = 0;
      for (const HiddenState& hs : prior) {
        order.rows.middleRows(at, hs.values.rows()) = hs.values;
        at += hs.values.rows();
      }
    }
    for (std::size_t j = 0; j < transcript.assignment.stages[i - 1].verifiers.size(); ++j)
      orders.push_back(order);
  }
  return orders;
}

SamplingPackage Scheduler::publish_samples(const TaskTranscript& transcript, std::uint32_t stage,
                                           std::span<const PostedCommitment> posted,
                                           bool commit_phase_closed,
                                           std::uint32_t sample_count) const {
  if (!commit_phase_closed)
    throw CommitPhaseOpen("sampling requested before all verdict commitments were posted");
  if (stage == 0 || stage > transcript.states.size() || transcript.states[stage - 1].empty())
    throw MissingTranscript("no logged states for stage " + std::to_string(stage));

  const std::vector<HiddenState>& per_step = transcript.states[stage - 1];
  const std::uint32_t final_step = static_cast<std::uint32_t>(per_step.size());
  MerkleTree tree = MerkleTree::build(flat(per_step.back().values));

  // The dual-signed record for the final step; under equivocation the last
  // one matches what was actually relayed downstream.
  const RelayRecord* record = nullptr;
  for (const RelayRecord& r : transcript.relay)
    if (r.stage == stage && r.step == final_step && r.root == tree.commitment()) record = &r;
  if (record == nullptr) throw MissingTranscript("no relay record matches the final-step root");

  SamplingPackage package;
  package.final_step = final_step;
  package.vrf = vrf_eval(vrf_, sampling_transcript(transcript.assignment.task_hash, stage, posted));
  package.inferencer_root = record->root;
  package.inferencer_sig = record->inferencer_sig;
  for (std::uint32_t idx :
       sample_indices(package.vrf.randomness, tree.leaf_count(), sample_count))
    package.openings.push_back(tree.open(idx));
  return package;
}

// --- verifier role -----------------------------------------------------------

RevealSubmission VerifierWork::reveal_at(std::span<const std::uint32_t> indices) const {
  RevealSubmission submission;
  submission.verdict_true = verdict;
  submission.salt = salt;
  for (std::uint32_t idx : indices) submission.openings.push_back(tree.open(idx));
  submission.tail_token = tail_token;
  return submission;
}

VerifierWork run_verifier(Worker& worker, const VerifierContext& context) {
  VerifierWork work;
  work.salt = worker.make_salt(context.order.task_hash, context.order.stage);

  if (worker.behavior().lazy) {
    // Free-rider: no computation, zero rows committed, optimistic verdict,
    // tail token parroted from the published transcript.
    const Eigen::Index cols = context.claimed.empty() ? 1 : context.claimed.back().values.cols();
    const std::vector<float> fabricated(static_cast<std::size_t>(cols), 0.0f);
    work.tree = MerkleTree::build(fabricated);
    work.verdict = true;
    if (context.tail_stage && !context.published_tokens.empty())
      work.tail_token = context.published_tokens.back();
    work.posted = {commit_verdict(work.verdict, work.salt).digest, work.tree.commitment()};
    return work;
  }

  const MatrixRX all = worker.execute(context.order);
  // Regroup rows per step so the trace aligns with the claimed one.
  const std::string label = context.claimed.empty() ? "" : context.claimed.front().task_id;
  Eigen::Index at = 0;
  for (std::uint32_t t = 1; t <= context.order.step_count; ++t) {
    const Eigen::Index rows = t == 1 ? context.order.prompt_len : 1;
    work.recomputed.push_back(
        HiddenState{label, context.order.stage, t, all.middleRows(at, rows)});
    at += rows;
  }

  bool states_match = false;
  if (context.claimed.size() == work.recomputed.size()) {
    const ComparisonStats stats = compare_traces(context.claimed, work.recomputed, kOffChain);
    states_match = accept(stats, kOffChain);
  }
  work.verdict = states_match;
  if (context.tail_stage && context.head != nullptr) {
    // Decode check over the whole claimed transcript: each published token
    // must equal the greedy decode of the recomputed state at its step.
    for (std::uint32_t t = 1; t <= context.order.step_count; ++t) {
      const MatrixRX& rows = work.recomputed[t - 1].values;
      const std::uint32_t decoded = context.head->decode(rows.row(rows.rows() - 1));
      if (t == context.order.step_count) work.tail_token = decoded;
      if (t > context.published_tokens.size() || decoded != context.published_tokens[t - 1])
        work.verdict = false;
    }
  }
  work.tree = MerkleTree::build(flat(work.recomputed.back().values));
  work.posted = {commit_verdict(work.verdict, work.salt).digest, work.tree.commitment()};
  return work;
}

VerifierContext make_verifier_context(const TaskTranscript& transcript, std::uint32_t stage,
                                      WorkOrder order, const OutputHead* head) {
  VerifierContext context;
  context.order = std::move(order);
  context.claimed = transcript.states.at(stage - 1);
  context.tail_stage = stage == transcript.states.size();
  context.published_tokens = transcript.tokens;
  context.head = head;
  return context;
}

// --- audits -------------------------------------------------------------------

bool audit_assignment(const RoleAssignment& assignment, const std::vector<Group>& groups,
                      const Digest& scheduler_vrf_pk, std::uint32_t k) {
  if (assignment.stages.size() != groups.size()) return false;
  for (std::uint32_t i = 1; i <= groups.size(); ++i) {
    const StageAssignment& sa = assignment.stages[i - 1];
    const Group& g = groups[i - 1];
    if (sa.stage != i || g.members.size() < static_cast<std::size_t>(k) + 1) return false;
    const std::uint32_t layer_count = g.slice.hi - g.slice.lo + 1;
    const Bytes transcript = role_transcript(assignment.task_hash, i, layer_count);
    if (sa.vrf.transcript != transcript) return false;
    if (!vrf_verify(scheduler_vrf_pk, transcript, sa.vrf)) return false;
    const auto sigma = permutation(sa.vrf.randomness, static_cast<std::uint32_t>(g.members.size()));
    if (sa.sigma != sigma) return false;
    if (sa.inferencer != g.members[sigma[0] - 1]) return false;
    if (sa.verifiers.size() != k) return false;
    for (std::uint32_t j = 1; j <= k; ++j)
      if (sa.verifiers[j - 1] != g.members[sigma[j] - 1]) return false;
  }
  return true;
}

RelayAudit audit_relay(const TaskTranscript& transcript, const Registry& registry,
                       const Digest& scheduler_sig_pk) {
  RelayAudit audit;
  for (std::size_t a = 0; a < transcript.relay.size(); ++a) {
    const RelayRecord& r = transcript.relay[a];
    const Bytes msg = relay_message(r.task_hash, r.stage, r.step, r.root);
    const Digest inferencer_pk = registry.node(r.inferencer_sig.signer).public_key;
    if (!verify_signature(inferencer_pk, msg, r.inferencer_sig)) audit.signatures_ok = false;
    if (!verify_signature(scheduler_sig_pk, msg, r.scheduler_sig)) audit.signatures_ok = false;
    for (std::size_t b = a + 1; b < transcript.relay.size(); ++b) {
      const RelayRecord& s = transcript.relay[b];
      if (s.task_hash == r.task_hash && s.stage == r.stage && s.step == r.step &&
          !(s.root == r.root))
        audit.conflicts.emplace_back(a, b);
    }
  }
  return audit;
}

// --- persistence ---------------------------------------------------------------

namespace {

nlohmann::json digest_json(const Digest& d) { return hex_encode(d); }

Digest digest_from(const nlohmann::json& j) { return digest_from_hex(j.get<std::string>()); }

}  // namespace

nlohmann::json to_json(const TaskRequest& request) {
  return {{"model_id", request.model_id},
          {"prompt", request.prompt},
          {"max_tokens", request.max_tokens},
          {"nonce", request.nonce}};
}

TaskRequest request_from_json(const nlohmann::json& j) {
  TaskRequest request;
  request.model_id = j.at("model_id").get<std::string>();
  request.prompt = j.at("prompt").get<std::vector<std::uint32_t>>();
  request.max_tokens = j.at("max_tokens").get<std::uint32_t>();
  request.nonce = j.at("nonce").get<std::uint64_t>();
  return request;
}

nlohmann::json to_json(const RoleAssignment& assignment) {
  nlohmann::json stages = nlohmann::json::array();
  for (const StageAssignment& sa : assignment.stages) {
    stages.push_back({{"stage", sa.stage},
                      {"inferencer", sa.inferencer},
                      {"verifiers", sa.verifiers},
                      {"vrf", to_json(sa.vrf)},
                      {"sigma", sa.sigma}});
  }
  return {{"task_hash", digest_json(assignment.task_hash)}, {"stages", std::move(stages)}};
}

RoleAssignment assignment_from_json(const nlohmann::json& j) {
  RoleAssignment assignment;
  assignment.task_hash = digest_from(j.at("task_hash"));
  for (const nlohmann::json& s : j.at("stages")) {
    StageAssignment sa;
    sa.stage = s.at("stage").get<std::uint32_t>();
    sa.inferencer = s.at("inferencer").get<NodeId>();
    sa.verifiers = s.at("verifiers").get<std::vector<NodeId>>();
    sa.vrf = vrf_from_json(s.at("vrf"));
    sa.sigma = s.at("sigma").get<std::vector<std::uint32_t>>();
    assignment.stages.push_back(std::move(sa));
  }
  return assignment;
}

nlohmann::json to_json(const RelayRecord& record) {
  return {{"task_hash", digest_json(record.task_hash)},
          {"stage", record.stage},
          {"step", record.step},
          {"root", to_json(record.root)},
          {"inferencer_sig", to_json(record.inferencer_sig)},
          {"scheduler_sig", to_json(record.scheduler_sig)}};
}

RelayRecord relay_record_from_json(const nlohmann::json& j) {
  RelayRecord record;
  record.task_hash = digest_from(j.at("task_hash"));
  record.stage = j.at("stage").get<std::uint32_t>();
  record.step = j.at("step").get<std::uint32_t>();
  record.root = commitment_from_json(j.at("root"));
  record.inferencer_sig = signature_from_json(j.at("inferencer_sig"));
  record.scheduler_sig = signature_from_json(j.at("scheduler_sig"));
  return record;
}

void persist_transcript(const TaskTranscript& transcript, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir / "states");
  {
    std::ofstream out(dir / "assignment.json");
    out << nlohmann::json{{"request", to_json(transcript.request)},
                          {"assignment", to_json(transcript.assignment)}}
               .dump(2)
        << '\n';
  }
  {
    std::ofstream out(dir / "relay.log");
    for (const RelayRecord& r : transcript.relay) out << to_json(r).dump() << '\n';
  }
  {
    std::ofstream out(dir / "meta.json");
    out << nlohmann::json{{"tokens", transcript.tokens}, {"truncated", transcript.truncated}}
               .dump(2)
        << '\n';
  }
  for (std::size_t i = 0; i < transcript.states.size(); ++i)
    write_trace_file(dir / "states" / ("segment-" + std::to_string(i + 1) + ".trace"),
                     transcript.states[i]);
}

TaskTranscript load_transcript(const std::filesystem::path& dir) {
  if (!std::filesystem::exists(dir / "assignment.json"))
    throw MissingTranscript("no transcript at " + dir.string());
  TaskTranscript transcript;
  {
    std::ifstream in(dir / "assignment.json");
    nlohmann::json j = nlohmann::json::parse(in);
    transcript.request = request_from_json(j.at("request"));
    transcript.assignment = assignment_from_json(j.at("assignment"));
  }
  {
    std::ifstream in(dir / "relay.log");
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      transcript.relay.push_back(relay_record_from_json(nlohmann::json::parse(line)));
    }
  }
  {
    std::ifstream in(dir / "meta.json");
    nlohmann::json j = nlohmann::json::parse(in);
    transcript.tokens = j.at("tokens").get<std::vector<std::uint32_t>>();
    transcript.truncated = j.at("truncated").get<bool>();
  }
  for (std::size_t i = 1;; ++i) {
    const std::filesystem::path path =
        dir / "states" / ("segment-" + std::to_string(i) + ".trace");
    if (!std::filesystem::exists(path)) break;
    transcript.states.push_back(read_trace_file(path));
  }
  return transcript;
}

}  // namespace vdi
