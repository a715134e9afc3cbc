#include "vdi/contract.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "vdi/clustering.hpp"

namespace vdi {

namespace {

constexpr const char* kTreasury = "treasury";
constexpr const char* kExternal = "external";

std::string escrow_account(RoundId id) { return "escrow/" + std::to_string(id); }

nlohmann::json ids_to_json(std::span<const NodeId> ids) {
  nlohmann::json arr = nlohmann::json::array();
  for (NodeId id : ids) arr.push_back(id);
  return arr;
}

}  // namespace

// --- canonical JSON codecs ---------------------------------------------------

nlohmann::json to_json(const MerkleCommitment& c) {
  return {{"root", hex_encode(c.root)}, {"leaves", c.leaf_count}};
}

MerkleCommitment commitment_from_json(const nlohmann::json& j) {
  return {digest_from_hex(j.at("root").get<std::string>()), j.at("leaves").get<std::uint64_t>()};
}

nlohmann::json to_json(const PostedCommitment& pc) {
  return {{"verdict_digest", hex_encode(pc.verdict_digest)}, {"state_root", to_json(pc.state_root)}};
}

PostedCommitment posted_from_json(const nlohmann::json& j) {
  return {digest_from_hex(j.at("verdict_digest").get<std::string>()),
          commitment_from_json(j.at("state_root"))};
}

nlohmann::json to_json(const InclusionProof& proof) {
  nlohmann::json path = nlohmann::json::array();
  for (const ProofStep& step : proof.path)
    path.push_back({{"sibling", hex_encode(step.sibling)}, {"right", step.sibling_on_right}});
  // Scalars travel as raw bit patterns: JSON doubles would not round-trip.
  return {{"index", proof.leaf_index},
          {"value_bits", float_bits(proof.leaf_value)},
          {"path", std::move(path)}};
}

InclusionProof proof_from_json(const nlohmann::json& j) {
  InclusionProof proof;
  proof.leaf_index = j.at("index").get<std::uint64_t>();
  proof.leaf_value = bits_to_float(j.at("value_bits").get<std::uint32_t>());
  for (const auto& step : j.at("path"))
    proof.path.push_back({digest_from_hex(step.at("sibling").get<std::string>()),
                          step.at("right").get<bool>()});
  return proof;
}

nlohmann::json to_json(const Signature& sig) {
  return {{"signer", sig.signer},
          {"message", hex_encode(sig.message_digest)},
          {"value", hex_encode(sig.value)}};
}

Signature signature_from_json(const nlohmann::json& j) {
  return {j.at("signer").get<NodeId>(), digest_from_hex(j.at("message").get<std::string>()),
          digest_from_hex(j.at("value").get<std::string>())};
}

nlohmann::json to_json(const VrfOutput& out) {
  return {{"randomness", hex_encode(out.randomness)},
          {"proof", hex_encode(out.proof)},
          {"transcript", hex_encode(out.transcript)}};
}

VrfOutput vrf_from_json(const nlohmann::json& j) {
  VrfOutput out;
  out.randomness = digest_from_hex(j.at("randomness").get<std::string>());
  out.proof = digest_from_hex(j.at("proof").get<std::string>());
  out.transcript = hex_decode(j.at("transcript").get<std::string>());
  return out;
}

nlohmann::json to_json(const SamplingPackage& package) {
  nlohmann::json openings = nlohmann::json::array();
  for (const InclusionProof& p : package.openings) openings.push_back(to_json(p));
  return {{"final_step", package.final_step},
          {"vrf", to_json(package.vrf)},
          {"inferencer_root", to_json(package.inferencer_root)},
          {"inferencer_sig", to_json(package.inferencer_sig)},
          {"openings", std::move(openings)}};
}

SamplingPackage package_from_json(const nlohmann::json& j) {
  SamplingPackage package;
  package.final_step = j.at("final_step").get<std::uint32_t>();
  package.vrf = vrf_from_json(j.at("vrf"));
  package.inferencer_root = commitment_from_json(j.at("inferencer_root"));
  package.inferencer_sig = signature_from_json(j.at("inferencer_sig"));
  for (const auto& p : j.at("openings")) package.openings.push_back(proof_from_json(p));
  return package;
}

nlohmann::json to_json(const RevealSubmission& submission) {
  nlohmann::json openings = nlohmann::json::array();
  for (const InclusionProof& p : submission.openings) openings.push_back(to_json(p));
  nlohmann::json j = {{"verdict", submission.verdict_true},
                      {"salt", hex_encode(submission.salt)},
                      {"openings", std::move(openings)}};
  if (submission.tail_token) j["tail_token"] = *submission.tail_token;
  return j;
}

RevealSubmission reveal_from_json(const nlohmann::json& j) {
  RevealSubmission submission;
  submission.verdict_true = j.at("verdict").get<bool>();
  Bytes salt = hex_decode(j.at("salt").get<std::string>());
  if (salt.size() != submission.salt.size()) throw ReplayError("bad salt length");
  std::copy(salt.begin(), salt.end(), submission.salt.begin());
  for (const auto& p : j.at("openings")) submission.openings.push_back(proof_from_json(p));
  if (j.contains("tail_token")) submission.tail_token = j.at("tail_token").get<std::uint32_t>();
  return submission;
}

nlohmann::json config_to_json(const ContractConfig& config) {
  return {{"tau", config.tau},
          {"delta", config.delta},
          {"onchain",
           {{"e_w", config.onchain.e_w},
            {"e_m", config.onchain.e_m},
            {"p_e_max", config.onchain.p_e_max},
            {"p_m_min", config.onchain.p_m_min},
            {"p_w_min", config.onchain.p_w_min},
            {"e_mean_lo", config.onchain.e_mean_lo},
            {"e_mean_hi", config.onchain.e_mean_hi}}},
          {"sample_count", config.sample_count},
          {"inference_reward", config.inference_reward},
          {"verification_reward", config.verification_reward},
          {"verification_cost", config.verification_cost},
          {"slash", config.slash},
          {"commit_window", config.commit_window},
          {"reveal_window", config.reveal_window},
          {"scheduler_node", config.scheduler_node},
          {"scheduler_vrf_pk", hex_encode(config.scheduler_vrf_pk)},
          {"scheduler_sig_pk", hex_encode(config.scheduler_sig_pk)},
          {"beacon_seed", hex_encode(config.beacon_seed)}};
}

ContractConfig config_from_json(const nlohmann::json& j) {
  ContractConfig config;
  config.tau = j.at("tau").get<double>();
  config.delta = j.at("delta").get<double>();
  const auto& t = j.at("onchain");
  config.onchain = Tolerances{t.at("e_w").get<double>(),      t.at("e_m").get<double>(),
                              t.at("p_e_max").get<double>(),  t.at("p_m_min").get<double>(),
                              t.at("p_w_min").get<double>(),  t.at("e_mean_lo").get<double>(),
                              t.at("e_mean_hi").get<double>()};
  config.sample_count = j.at("sample_count").get<std::uint32_t>();
  config.inference_reward = j.at("inference_reward").get<std::int64_t>();
  config.verification_reward = j.at("verification_reward").get<std::int64_t>();
  config.verification_cost = j.at("verification_cost").get<std::int64_t>();
  config.slash = j.at("slash").get<std::int64_t>();
  config.commit_window = j.at("commit_window").get<std::uint64_t>();
  config.reveal_window = j.at("reveal_window").get<std::uint64_t>();
  config.scheduler_node = j.at("scheduler_node").get<NodeId>();
  config.scheduler_vrf_pk = digest_from_hex(j.at("scheduler_vrf_pk").get<std::string>());
  config.scheduler_sig_pk = digest_from_hex(j.at("scheduler_sig_pk").get<std::string>());
  config.beacon_seed = digest_from_hex(j.at("beacon_seed").get<std::string>());
  return config;
}

// --- contract ----------------------------------------------------------------

void ContractConfig::validate() const {
  if (!(tau > 0.5 && tau <= 1.0))
    throw Error("tau must lie in (0.5, 1]: cluster uniqueness needs a majority");
  if (delta <= 0) throw Error("delta must be positive");
  if (sample_count == 0) throw Error("sample_count must be >= 1");
  if (inference_reward < 0 || verification_reward < 0 || verification_cost < 0 || slash < 0)
    throw Error("economic constants must be non-negative");
}

const char* phase_name(Phase p) {
  switch (p) {
    case Phase::kCommit: return "commit";
    case Phase::kSampled: return "sampled";
    case Phase::kReveal: return "reveal";
    case Phase::kAdjudicated: return "adjudicated";
    case Phase::kDisputed: return "disputed";
    case Phase::kFinal: return "final";
  }
  return "?";
}

const char* verdict_name(Verdict v) {
  switch (v) {
    case Verdict::kAcceptInferencer: return "accept";
    case Verdict::kRejectInferencer: return "reject";
    case Verdict::kAmbiguous: return "ambiguous";
  }
  return "?";
}

Contract::Contract(TokenLedger& ledger, ContractConfig config)
    : ledger_(ledger), config_(std::move(config)) {
  config_.validate();
  nlohmann::json balances = nlohmann::json::object();
  for (const auto& [account, amount] : ledger_.accounts()) balances[account] = amount;
  emit({{"kind", "genesis"},
        {"config", config_to_json(config_)},
        {"balances", std::move(balances)}});
}

void Contract::register_identity(NodeId node, const Digest& signing_pk) {
  if (identities_.count(node)) throw DuplicateKey("identity " + std::to_string(node));
  identities_[node] = signing_pk;
  emit({{"kind", "identity"}, {"node", node}, {"pk", hex_encode(signing_pk)}});
}

const Digest& Contract::signer_pk(NodeId node) const {
  auto it = identities_.find(node);
  if (it == identities_.end()) throw UnknownNode("identity " + std::to_string(node));
  return it->second;
}

RoundId Contract::open_round(const Digest& task_hash, std::uint32_t stage, bool tail_stage,
                             std::uint32_t published_tail_token, NodeId inferencer,
                             std::span<const NodeId> committee) {
  if (committee.empty()) throw Error("committee must be non-empty");
  std::vector<NodeId> members(committee.begin(), committee.end());
  std::vector<NodeId> sorted = members;
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
    throw Error("committee members must be distinct");
  if (std::find(members.begin(), members.end(), inferencer) != members.end())
    throw Error("inferencer cannot sit on its own committee");

  VerificationRound r;
  r.id = next_round_++;
  r.task_hash = task_hash;
  r.stage = stage;
  r.tail_stage = tail_stage;
  r.published_tail_token = published_tail_token;
  r.inferencer = inferencer;
  r.committee = std::move(members);
  r.opened_at = clock_;
  const RoundId id = r.id;
  rounds_.emplace(id, std::move(r));
  emit({{"kind", "open_round"},
        {"round", id},
        {"task", hex_encode(task_hash)},
        {"stage", stage},
        {"tail", tail_stage},
        {"tail_token", published_tail_token},
        {"inferencer", inferencer},
        {"committee", ids_to_json(rounds_.at(id).committee)}});
  return id;
}

const VerificationRound& Contract::round(RoundId id) const {
  auto it = rounds_.find(id);
  if (it == rounds_.end()) throw IndexOutOfRange("round " + std::to_string(id));
  return it->second;
}

VerificationRound& Contract::round_mut(RoundId id) {
  auto it = rounds_.find(id);
  if (it == rounds_.end()) throw IndexOutOfRange("round " + std::to_string(id));
  return it->second;
}

void Contract::submit_verdict_commitment(RoundId id, NodeId verifier,
                                         const PostedCommitment& pc) {
  VerificationRound& r = round_mut(id);
  if (r.phase != Phase::kCommit)
    throw WrongPhase("commit in phase " + std::string(phase_name(r.phase)));
  if (std::find(r.committee.begin(), r.committee.end(), verifier) == r.committee.end())
    throw NotInCommittee("verifier " + std::to_string(verifier));
  if (r.commitments.count(verifier)) throw DoubleCommit("verifier " + std::to_string(verifier));
  r.commitments[verifier] = pc;
  if (r.commitments.size() == r.committee.size()) {
    r.phase = Phase::kSampled;
    r.sampled_at = clock_;
  }
  emit({{"kind", "commit"}, {"round", id}, {"verifier", verifier}, {"posted", to_json(pc)}});
}

std::vector<PostedCommitment> Contract::posted_in_committee_order(
    const VerificationRound& r) const {
  std::vector<PostedCommitment> out;
  for (NodeId v : r.committee) {
    auto it = r.commitments.find(v);
    if (it != r.commitments.end()) out.push_back(it->second);
  }
  return out;
}

void Contract::check_sampling_package(RoundId id, const SamplingPackage& package) {
  VerificationRound& r = round_mut(id);
  if (r.phase == Phase::kCommit)
    throw CommitPhaseOpen("round " + std::to_string(id));  // Lemma 2 ordering
  if (r.phase != Phase::kSampled)
    throw WrongPhase("sampling package in phase " + std::string(phase_name(r.phase)));

  const std::vector<PostedCommitment> posted = posted_in_committee_order(r);
  const Bytes transcript = sampling_transcript(r.task_hash, r.stage, posted);
  if (!vrf_verify(config_.scheduler_vrf_pk, transcript, package.vrf))
    throw VrfInvalid("sampling vrf for round " + std::to_string(id));

  const Bytes message =
      relay_message(r.task_hash, r.stage, package.final_step, package.inferencer_root);
  if (!verify_signature(signer_pk(r.inferencer), message, package.inferencer_sig))
    throw SignatureInvalid("inferencer root signature");

  const std::vector<std::uint32_t> indices = sample_indices(
      package.vrf.randomness, package.inferencer_root.leaf_count, config_.sample_count);
  if (package.openings.size() != indices.size())
    throw MerkleInvalid("package opens " + std::to_string(package.openings.size()) +
                        " of " + std::to_string(indices.size()) + " sampled indices");
  for (std::size_t j = 0; j < indices.size(); ++j) {
    if (package.openings[j].leaf_index != indices[j])
      throw MerkleInvalid("package index " + std::to_string(j) + " not the sampled one");
    if (!merkle_verify(package.inferencer_root, package.openings[j]))
      throw MerkleInvalid("package opening " + std::to_string(j));
  }

  r.package = package;
  r.sampled_indices = indices;
  r.phase = Phase::kReveal;
  emit({{"kind", "package"}, {"round", id}, {"package", to_json(package)}});
}

void Contract::reveal(RoundId id, NodeId verifier, const RevealSubmission& submission) {
  VerificationRound& r = round_mut(id);
  if (r.phase != Phase::kReveal)
    throw WrongPhase("reveal in phase " + std::string(phase_name(r.phase)));
  if (std::find(r.committee.begin(), r.committee.end(), verifier) == r.committee.end())
    throw NotInCommittee("verifier " + std::to_string(verifier));
  if (r.reveals.count(verifier)) throw DoubleReveal("verifier " + std::to_string(verifier));
  auto committed = r.commitments.find(verifier);
  if (committed == r.commitments.end())
    throw CommitMismatch("verifier " + std::to_string(verifier) + " never committed");
  if (commit_verdict(submission.verdict_true, submission.salt).digest !=
      committed->second.verdict_digest)
    throw CommitMismatch("verifier " + std::to_string(verifier));
  if (submission.openings.size() != r.sampled_indices.size())
    throw MerkleInvalid("reveal opens " + std::to_string(submission.openings.size()) + " of " +
                        std::to_string(r.sampled_indices.size()) + " sampled indices");
  for (std::size_t j = 0; j < submission.openings.size(); ++j) {
    if (submission.openings[j].leaf_index != r.sampled_indices[j])
      throw MerkleInvalid("reveal index " + std::to_string(j) + " not the sampled one");
    if (!merkle_verify(committed->second.state_root, submission.openings[j]))
      throw MerkleInvalid("reveal opening " + std::to_string(j));
  }
  if (r.tail_stage && !submission.tail_token) throw MissingTailToken();

  r.reveals[verifier] = submission;
  emit({{"kind", "reveal"},
        {"round", id},
        {"verifier", verifier},
        {"submission", to_json(submission)}});
}

namespace {

std::int64_t capped(std::int64_t want, std::int64_t have) {
  return std::min(want, std::max<std::int64_t>(have, 0));
}

}  // namespace

void Contract::settle_rule1(VerificationRound& r, Outcome& out) {
  out.verdict = Verdict::kAcceptInferencer;
  out.rule = "rule-1-accept";
  ledger_.transfer(kExternal, TokenLedger::wallet_account(r.inferencer),
                   config_.inference_reward);

  std::vector<float> reference;
  for (const InclusionProof& p : r.package->openings) reference.push_back(p.leaf_value);

  std::vector<NodeId> passers;
  for (NodeId v : r.committee) {
    auto it = r.reveals.find(v);
    if (it == r.reveals.end()) continue;  // silent: slashed below
    std::vector<float> candidate;
    for (const InclusionProof& p : it->second.openings) candidate.push_back(p.leaf_value);
    bool pass = accept(compare_scalars(reference, candidate, config_.onchain), config_.onchain);
    if (r.tail_stage && it->second.tail_token != r.published_tail_token) pass = false;
    if (pass)
      passers.push_back(v);
    else
      out.slashed.push_back(v);
  }
  if (!passers.empty()) {
    const std::int64_t share = config_.verification_reward /
                               static_cast<std::int64_t>(passers.size());
    for (NodeId v : passers) {
      ledger_.transfer(kExternal, TokenLedger::wallet_account(v), share);
      out.rewarded.push_back(v);
    }
  }
}

bool Contract::settle_rule2(VerificationRound& r, Outcome& out) {
  std::vector<NodeId> revealed;
  std::vector<Report> reports;
  for (NodeId v : r.committee) {
    auto it = r.reveals.find(v);
    if (it == r.reveals.end()) continue;
    Eigen::VectorXd point(it->second.openings.size());
    for (std::size_t j = 0; j < it->second.openings.size(); ++j)
      point[static_cast<Eigen::Index>(j)] = it->second.openings[j].leaf_value;
    reports.push_back({v, std::move(point), true});
    revealed.push_back(v);
  }
  if (reports.empty()) return false;

  Eigen::VectorXd inferencer_point(r.package->openings.size());
  for (std::size_t j = 0; j < r.package->openings.size(); ++j)
    inferencer_point[static_cast<Eigen::Index>(j)] = r.package->openings[j].leaf_value;

  const std::size_t m = r.committee.size();
  const auto threshold =
      static_cast<std::size_t>(std::ceil(config_.tau * static_cast<double>(m)));
  ClusterOutcome agreement = cluster(reports, config_.delta, threshold, inferencer_point);
  if (!agreement.proper_cluster) return false;

  const bool values_differ = !agreement.inferencer_accepted;
  bool tail_contradiction = false;
  if (r.tail_stage) {
    std::map<std::uint32_t, std::size_t> votes;
    for (std::size_t idx : agreement.accepted) {
      const auto& sub = r.reveals.at(revealed[idx]);
      if (sub.tail_token) votes[*sub.tail_token] += 1;
    }
    if (!votes.empty()) {
      auto modal = std::max_element(votes.begin(), votes.end(),
                                    [](const auto& a, const auto& b) {
                                      return a.second < b.second;  // ties keep lowest token
                                    });
      tail_contradiction = modal->first != r.published_tail_token;
    }
  }
  if (!values_differ && !tail_contradiction) return false;

  out.verdict = Verdict::kRejectInferencer;
  out.rule = values_differ ? "rule-2-reject" : "rule-2-reject-tail";
  const std::string inferencer_stake = TokenLedger::stake_account(r.inferencer);
  const std::int64_t amount = capped(config_.slash, ledger_.balance(inferencer_stake));
  if (amount > 0) ledger_.transfer(inferencer_stake, kTreasury, amount);
  out.slashed.push_back(r.inferencer);

  std::vector<bool> in_cluster(revealed.size(), false);
  for (std::size_t idx : agreement.accepted) in_cluster[idx] = true;
  std::vector<NodeId> winners;
  for (std::size_t i = 0; i < revealed.size(); ++i) {
    const bool voted_false = !r.reveals.at(revealed[i]).verdict_true;
    if (in_cluster[i] && voted_false) {
      winners.push_back(revealed[i]);
    } else if (!in_cluster[i]) {
      // Non-convergent openings are penalized whichever way the vote went;
      // True-voters inside the cluster go unrewarded but unslashed.
      out.slashed.push_back(revealed[i]);
    }
  }
  if (!winners.empty()) {
    const std::int64_t share =
        config_.verification_reward / static_cast<std::int64_t>(winners.size());
    for (NodeId v : winners) {
      ledger_.transfer(kExternal, TokenLedger::wallet_account(v), share);
      out.rewarded.push_back(v);
    }
  }
  return true;
}

void Contract::settle_rule3(VerificationRound& r, Outcome& out) {
  out.verdict = Verdict::kAmbiguous;
  out.rule = "rule-3-ambiguous";
  // Inferencer is accepted and paid; verifiers go unrewarded pending a
  // possible zero-knowledge dispute.
  ledger_.transfer(kExternal, TokenLedger::wallet_account(r.inferencer),
                   config_.inference_reward);
}

const Outcome& Contract::adjudicate(RoundId id) {
  VerificationRound& r = round_mut(id);
  if (r.phase != Phase::kReveal)
    throw WrongPhase("adjudicate in phase " + std::string(phase_name(r.phase)));
  const bool all_revealed = r.reveals.size() == r.committee.size();
  if (!all_revealed && clock_ < r.sampled_at + config_.reveal_window)
    throw WrongPhase("reveal window still open");

  Outcome out;
  const std::size_t m = r.committee.size();
  std::size_t b = 0;
  for (const auto& [v, sub] : r.reveals) b += sub.verdict_true ? 1 : 0;

  if (2 * b >= m) {
    settle_rule1(r, out);
  } else if (!settle_rule2(r, out)) {
    settle_rule3(r, out);
  }

  // Silent committee members are treated as failed openings in every rule.
  for (NodeId v : r.committee)
    if (!r.reveals.count(v)) out.slashed.push_back(v);

  std::sort(out.slashed.begin(), out.slashed.end());
  out.slashed.erase(std::unique(out.slashed.begin(), out.slashed.end()), out.slashed.end());
  for (NodeId v : out.slashed) {
    if (v == r.inferencer) continue;  // already settled in rule 2
    const std::string account = TokenLedger::stake_account(v);
    const std::int64_t amount = capped(config_.slash, ledger_.balance(account));
    if (amount > 0) ledger_.transfer(account, kTreasury, amount);
  }

  r.outcome = std::move(out);
  r.phase = Phase::kAdjudicated;
  emit({{"kind", "adjudicate"},
        {"round", id},
        {"verdict", verdict_name(r.outcome->verdict)},
        {"rule", r.outcome->rule},
        {"rewarded", ids_to_json(r.outcome->rewarded)},
        {"slashed", ids_to_json(r.outcome->slashed)}});
  return *r.outcome;
}

const Outcome& Contract::file_zk_dispute(RoundId id, NodeId prover, bool proof_valid) {
  VerificationRound& r = round_mut(id);
  if (r.phase != Phase::kAdjudicated)
    throw WrongPhase("zk dispute in phase " + std::string(phase_name(r.phase)));
  if (r.outcome->verdict != Verdict::kAmbiguous)
    throw WrongPhase("zk dispute requires an ambiguous outcome");
  if (!proof_valid) throw EvidenceInvalid("zero-knowledge proof rejected");

  // Flip: claw back the inference reward, slash the inferencer, pay the
  // prover out of the slash.
  ledger_.transfer(TokenLedger::wallet_account(r.inferencer), kExternal,
                   config_.inference_reward);
  const std::string stake = TokenLedger::stake_account(r.inferencer);
  const std::int64_t amount = capped(config_.slash, ledger_.balance(stake));
  if (amount > 0) ledger_.transfer(stake, TokenLedger::wallet_account(prover), amount);

  r.outcome->verdict = Verdict::kRejectInferencer;
  r.outcome->rule = "rule-3-zk-flip";
  r.outcome->rewarded.push_back(prover);
  r.outcome->slashed.push_back(r.inferencer);
  emit({{"kind", "zk_dispute"}, {"round", id}, {"prover", prover}, {"valid", proof_valid}});
  return *r.outcome;
}

RoundId Contract::open_dispute(RoundId id, std::uint32_t m_prime,
                               std::span<const NodeId> candidates, std::int64_t escrow) {
  VerificationRound& r = round_mut(id);
  if (r.phase != Phase::kAdjudicated)
    throw WrongPhase("dispute in phase " + std::string(phase_name(r.phase)));
  if (r.outcome->verdict != Verdict::kRejectInferencer) throw NotRejected();
  if (m_prime <= r.committee.size())
    throw CommitteeTooSmall("m' = " + std::to_string(m_prime) + " vs m = " +
                            std::to_string(r.committee.size()));
  const std::int64_t marginal =
      (m_prime - static_cast<std::int64_t>(r.committee.size())) * config_.verification_cost;
  if (escrow < marginal) throw InsufficientEscrow("need " + std::to_string(marginal));
  const std::string wallet = TokenLedger::wallet_account(r.inferencer);
  if (ledger_.balance(wallet) < escrow)
    throw InsufficientEscrow("wallet holds " + std::to_string(ledger_.balance(wallet)));

  // Fresh committee from the public beacon, excluding everyone already
  // involved, so first-round capture cannot carry over.
  std::vector<NodeId> eligible;
  for (NodeId c : candidates) {
    if (c == r.inferencer) continue;
    if (std::find(r.committee.begin(), r.committee.end(), c) != r.committee.end()) continue;
    if (std::find(eligible.begin(), eligible.end(), c) != eligible.end()) continue;
    eligible.push_back(c);
  }
  if (eligible.size() < m_prime)
    throw CommitteeTooSmall("only " + std::to_string(eligible.size()) + " eligible candidates");
  Hasher h;
  h.update("vdi/dispute-beacon").update(config_.beacon_seed).update(r.task_hash);
  h.update_u32(r.stage).update_u64(r.id);
  const std::vector<std::uint32_t> order =
      permutation(h.finish(), static_cast<std::uint32_t>(eligible.size()));
  std::vector<NodeId> fresh;
  for (std::uint32_t i = 0; i < m_prime; ++i) fresh.push_back(eligible[order[i] - 1]);

  ledger_.transfer(wallet, escrow_account(id), escrow);

  VerificationRound child;
  child.id = next_round_++;
  child.task_hash = r.task_hash;
  child.stage = r.stage;
  child.tail_stage = r.tail_stage;
  child.published_tail_token = r.published_tail_token;
  child.inferencer = r.inferencer;
  child.committee = fresh;
  child.opened_at = clock_;
  child.parent = r.id;
  const RoundId child_id = child.id;
  rounds_.emplace(child_id, std::move(child));

  r.phase = Phase::kDisputed;
  r.reconsideration = child_id;
  r.escrow = escrow;
  emit({{"kind", "open_dispute"},
        {"round", id},
        {"child", child_id},
        {"m_prime", m_prime},
        {"candidates", ids_to_json(candidates)},
        {"escrow", escrow},
        {"committee", ids_to_json(rounds_.at(child_id).committee)}});
  return child_id;
}

void Contract::finalize_dispute(RoundId id) {
  VerificationRound& r = round_mut(id);
  if (r.phase != Phase::kDisputed)
    throw WrongPhase("finalize in phase " + std::string(phase_name(r.phase)));
  VerificationRound& child = round_mut(*r.reconsideration);
  if (child.phase != Phase::kAdjudicated && child.phase != Phase::kFinal)
    throw WrongPhase("reconsideration still running");

  const std::string wallet = TokenLedger::wallet_account(r.inferencer);
  const std::string escrow = escrow_account(id);
  const std::int64_t marginal =
      (static_cast<std::int64_t>(child.committee.size()) -
       static_cast<std::int64_t>(r.committee.size())) *
      config_.verification_cost;
  std::string resolution;
  if (child.outcome->verdict == Verdict::kAcceptInferencer) {
    // Rescind: undo the wrongful slash, slash the first-round verifiers that
    // voted negative, return escrow. The withheld inference reward was already
    // paid by the reconsideration round's own settlement.
    resolution = "rescinded";
    const std::int64_t refund = capped(config_.slash, ledger_.balance(kTreasury));
    if (refund > 0)
      ledger_.transfer(kTreasury, TokenLedger::stake_account(r.inferencer), refund);
    for (NodeId v : r.committee) {
      auto it = r.reveals.find(v);
      if (it == r.reveals.end() || it->second.verdict_true) continue;
      const std::string stake = TokenLedger::stake_account(v);
      const std::int64_t amount = capped(config_.slash, ledger_.balance(stake));
      if (amount > 0) ledger_.transfer(stake, kTreasury, amount);
    }
    ledger_.transfer(escrow, wallet, ledger_.balance(escrow));
  } else {
    // Upheld (reject or still ambiguous): the inferencer bears the cost of
    // the additional verifiers; the rest of the escrow comes back.
    resolution = "upheld";
    ledger_.transfer(escrow, kTreasury, std::min(marginal, ledger_.balance(escrow)));
    ledger_.transfer(escrow, wallet, ledger_.balance(escrow));
  }
  r.phase = Phase::kFinal;
  emit({{"kind", "finalize_dispute"}, {"round", id}, {"resolution", resolution}});
}

void Contract::file_relay_complaint(NodeId complainant, const Digest& task_hash,
                                    std::uint32_t stage, std::uint32_t step,
                                    const MerkleCommitment& root_a, const Signature& sched_sig_a,
                                    const MerkleCommitment& root_b,
                                    const Signature& sched_sig_b) {
  if (root_a == root_b) throw EvidenceInvalid("records agree: nothing to complain about");
  if (!verify_signature(config_.scheduler_sig_pk, relay_message(task_hash, stage, step, root_a),
                        sched_sig_a) ||
      !verify_signature(config_.scheduler_sig_pk, relay_message(task_hash, stage, step, root_b),
                        sched_sig_b))
    throw EvidenceInvalid("scheduler signature does not verify");

  const std::string stake = TokenLedger::stake_account(config_.scheduler_node);
  const std::int64_t amount = capped(config_.slash, ledger_.balance(stake));
  const std::int64_t bounty = amount / 2;
  if (bounty > 0)
    ledger_.transfer(stake, TokenLedger::wallet_account(complainant), bounty);
  if (amount - bounty > 0) ledger_.transfer(stake, kTreasury, amount - bounty);
  emit({{"kind", "relay_complaint"},
        {"complainant", complainant},
        {"task", hex_encode(task_hash)},
        {"stage", stage},
        {"step", step},
        {"root_a", to_json(root_a)},
        {"sig_a", to_json(sched_sig_a)},
        {"root_b", to_json(root_b)},
        {"sig_b", to_json(sched_sig_b)}});
}

void Contract::close_round(RoundId id) {
  VerificationRound& r = round_mut(id);
  if (r.phase != Phase::kAdjudicated)
    throw WrongPhase("close in phase " + std::string(phase_name(r.phase)));
  r.phase = Phase::kFinal;
  emit({{"kind", "close_round"}, {"round", id}});
}

void Contract::advance_time(std::uint64_t now) {
  if (now < clock_) throw Error("contract clock is monotone");
  clock_ = now;
  expire_commit_deadlines();
  emit({{"kind", "time"}, {"now", now}});
}

void Contract::expire_commit_deadlines() {
  for (auto& [id, r] : rounds_) {
    if (r.phase == Phase::kCommit && clock_ >= r.opened_at + config_.commit_window) {
      r.phase = Phase::kSampled;  // absentees become non-revealers
      r.sampled_at = clock_;
    }
  }
}

void Contract::emit(nlohmann::json event) {
  event["seq"] = events_.size();
  event["time"] = clock_;
  event["state"] = hex_encode(state_digest());
  events_.push_back(std::move(event));
}

Digest Contract::state_digest() const {
  Hasher h;
  h.update(tag::kState);
  h.update_u64(clock_).update_u64(next_round_);
  h.update_u64(identities_.size());
  for (const auto& [node, pk] : identities_) h.update_u32(node).update(pk);
  h.update_u64(rounds_.size());
  for (const auto& [id, r] : rounds_) {
    h.update_u64(id).update(r.task_hash).update_u32(r.stage);
    h.update_u32(r.tail_stage ? 1 : 0).update_u32(r.published_tail_token);
    h.update_u32(r.inferencer);
    h.update_u32(static_cast<std::uint32_t>(r.phase));
    h.update_u64(r.opened_at).update_u64(r.sampled_at);
    h.update_u64(r.committee.size());
    for (NodeId v : r.committee) h.update_u32(v);
    h.update_u64(r.commitments.size());
    for (const auto& [v, pc] : r.commitments) {
      h.update_u32(v).update(pc.verdict_digest).update(pc.state_root.root);
      h.update_u64(pc.state_root.leaf_count);
    }
    h.update_u32(r.package ? 1 : 0);
    if (r.package) {
      h.update(r.package->vrf.randomness).update(r.package->inferencer_root.root);
      h.update_u64(r.package->inferencer_root.leaf_count);
      h.update_u32(r.package->final_step);
    }
    h.update_u64(r.sampled_indices.size());
    for (std::uint32_t idx : r.sampled_indices) h.update_u32(idx);
    h.update_u64(r.reveals.size());
    for (const auto& [v, sub] : r.reveals) {
      h.update_u32(v).update_u32(sub.verdict_true ? 1 : 0);
      h.update(std::span<const Byte>(sub.salt));
      h.update_u32(sub.tail_token ? *sub.tail_token : 0xFFFFFFFFu);
      for (const InclusionProof& p : sub.openings) {
        h.update_u64(p.leaf_index);
        h.update_u32(float_bits(p.leaf_value));
      }
    }
    h.update_u32(r.outcome ? 1 : 0);
    if (r.outcome) {
      h.update_u32(static_cast<std::uint32_t>(r.outcome->verdict)).update(r.outcome->rule);
      h.update_u64(r.outcome->rewarded.size());
      for (NodeId v : r.outcome->rewarded) h.update_u32(v);
      h.update_u64(r.outcome->slashed.size());
      for (NodeId v : r.outcome->slashed) h.update_u32(v);
    }
    h.update_u64(r.parent).update_u64(r.reconsideration ? *r.reconsideration : kNoRound);
    h.update_u64(static_cast<std::uint64_t>(r.escrow));
  }
  const auto& accounts = ledger_.accounts();
  h.update_u64(accounts.size());
  for (const auto& [account, amount] : accounts)
    h.update(account).update_u64(static_cast<std::uint64_t>(amount));
  return h.finish();
}

void Contract::save_log(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw TraceIoError("cannot write " + path.string());
  for (const auto& event : events_) out << event.dump() << '\n';
}

}  // namespace vdi
