#include "vdi/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <deque>
#include <fstream>
#include <initializer_list>
#include <limits>
#include <utility>

#include "vdi/contract.hpp"
#include "vdi/identity.hpp"
#include "vdi/scheduler.hpp"

namespace vdi {

namespace {

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

// --- scenario schema ----------------------------------------------------------

const char* strategy_name(Strategy s) {
  switch (s) {
    case Strategy::kHonest: return "honest";
    case Strategy::kQuantize: return "quantize";
    case Strategy::kEarlyStop: return "early_stop";
    case Strategy::kForgedOutput: return "forged_output";
    case Strategy::kLazy: return "lazy";
    case Strategy::kCollude: return "collude";
    case Strategy::kOffline: return "offline";
    case Strategy::kTamperRelay: return "tamper_relay";
  }
  return "unknown";
}

Strategy strategy_from_name(const std::string& name) {
  for (Strategy s : {Strategy::kHonest, Strategy::kQuantize, Strategy::kEarlyStop,
                     Strategy::kForgedOutput, Strategy::kLazy, Strategy::kCollude,
                     Strategy::kOffline, Strategy::kTamperRelay})
    if (name == strategy_name(s)) return s;
  throw ScenarioError("unknown strategy \"" + name + "\"");
}

namespace {

ModelConfig model_config_from_json(const nlohmann::json& j, ModelConfig base = {}) {
  ModelConfig m = base;
  m.segment_count = j.value("segments", m.segment_count);
  m.hidden_dim = j.value("hidden_dim", m.hidden_dim);
  m.layers_per_segment = j.value("layers_per_segment", m.layers_per_segment);
  m.vocab_size = j.value("vocab", m.vocab_size);
  m.seed = j.value("seed", m.seed);
  m.weight_scale = j.value("weight_scale", m.weight_scale);
  m.eos_logit_bias = j.value("eos_logit_bias", m.eos_logit_bias);
  return m;
}

GameParams game_from_json(const nlohmann::json& j) {
  GameParams g;
  g.n = j.value("n", g.n);
  g.q = j.value("q", g.q);
  g.delta = j.value("delta", g.delta);
  g.eps1 = j.value("eps1", g.eps1);
  g.eps2 = j.value("eps2", g.eps2);
  g.r = j.value("r", g.r);
  g.cost = j.value("cost", g.cost);
  return g;
}

}  // namespace

Scenario scenario_from_json(const nlohmann::json& j) {
  try {
    Scenario sc;
    sc.name = j.at("name").get<std::string>();
    sc.kind = j.value("kind", std::string("protocol"));
    if (sc.kind != "protocol" && sc.kind != "agreement")
      throw ScenarioError("unknown kind \"" + sc.kind + "\"");
    sc.seed = j.value("seed", std::uint64_t{1});
    sc.trials = j.value("trials", std::uint32_t{100});
    if (sc.trials == 0) throw ScenarioError("trials must be >= 1");

    if (sc.kind == "protocol") {
      ProtocolScenario& p = sc.protocol;
      if (j.contains("model")) p.model = model_config_from_json(j.at("model"));
      p.prompt = j.value("prompt", std::vector<std::uint32_t>{3, 9, 4, 1});
      if (p.prompt.empty()) throw ScenarioError("prompt must be non-empty");
      for (std::uint32_t tok : p.prompt)
        if (tok >= p.model.vocab_size) throw ScenarioError("prompt token out of vocabulary");
      p.randomize_prompt = j.value("randomize_prompt", false);
      p.max_tokens = j.value("max_tokens", p.max_tokens);
      if (p.max_tokens == 0) throw ScenarioError("max_tokens must be >= 1");
      if (j.contains("committee")) {
        const nlohmann::json& c = j.at("committee");
        p.committee = c.value("size", p.committee);
        p.group_size = c.value("group_size", p.group_size);
        p.tau = c.value("tau", p.tau);
        p.delta = c.value("delta", p.delta);
        p.sample_count = c.value("samples", p.sample_count);
      }
      if (p.committee == 0) throw ScenarioError("committee size must be >= 1");
      if (p.group_size < p.committee + 1)
        throw ScenarioError("group_size must be at least committee size + 1");
      if (!(p.tau > 0.5 && p.tau <= 1.0)) throw ScenarioError("tau must lie in (0.5, 1]");
      if (j.contains("economics")) {
        const nlohmann::json& e = j.at("economics");
        p.economics.inference_reward = e.value("inference_reward", p.economics.inference_reward);
        p.economics.verification_reward =
            e.value("verification_reward", p.economics.verification_reward);
        p.economics.verification_cost = e.value("verification_cost", p.economics.verification_cost);
        p.economics.slash = e.value("slash", p.economics.slash);
        p.economics.stake = e.value("stake", p.economics.stake);
      }
      if (j.contains("adversary")) {
        const nlohmann::json& a = j.at("adversary");
        p.strategy = strategy_from_name(a.value("strategy", std::string("honest")));
        p.adversary_count = a.value("count", p.adversary_count);
        p.bits = a.value("bits", p.bits);
        p.stop_after = a.value("stop_after", p.stop_after);
        if (a.contains("forge")) p.forge = model_config_from_json(a.at("forge"), p.model);
      }
      if (p.adversary_count > p.committee)
        throw ScenarioError("adversary count exceeds the committee size");
      if (j.contains("dispute")) {
        const nlohmann::json& d = j.at("dispute");
        p.with_dispute = d.value("enabled", false);
        p.dispute_committee = d.value("committee", p.dispute_committee);
        if (p.with_dispute && p.dispute_committee <= p.committee)
          throw ScenarioError("dispute committee must exceed the round-one committee");
      }
    } else {
      AgreementScenario& a = sc.agreement;
      if (j.contains("game")) a.game = game_from_json(j.at("game"));
      a.game.validate();
      const std::string policy = j.value("policy", std::string("random_guess"));
      if (policy == "random_guess")
        a.policy = AdversaryPolicy::kRandomGuess;
      else if (policy == "collude")
        a.policy = AdversaryPolicy::kCollude;
      else
        throw ScenarioError("unknown policy \"" + policy + "\"");
    }

    for (const nlohmann::json& a : j.value("assertions", nlohmann::json::array())) {
      Assertion as;
      as.metric = a.at("metric").get<std::string>();
      as.op = a.at("op").get<std::string>();
      as.value = a.at("value").get<double>();
      if (as.op != ">=" && as.op != "<=" && as.op != ">" && as.op != "<" && as.op != "==")
        throw ScenarioError("unknown assertion op \"" + as.op + "\"");
      sc.assertions.push_back(std::move(as));
    }
    return sc;
  } catch (const nlohmann::json::exception& e) {
    throw ScenarioError(e.what());
  } catch (const Error& e) {
    // GameParams::validate and friends signal schema-level problems too.
    throw ScenarioError(e.what());
  }
}

Scenario load_scenario(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ScenarioError("cannot read scenario file " + path.string());
  nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded()) throw ScenarioError("scenario file is not valid JSON: " + path.string());
  return scenario_from_json(j);
}

// --- statistics ----------------------------------------------------------------

ConfidenceInterval wilson_interval(std::uint64_t hits, std::uint64_t total) {
  if (total == 0) return {0.0, 1.0};
  const double z = 1.959963984540054;  // 97.5% normal quantile
  const double n = static_cast<double>(total);
  const double p = static_cast<double>(hits) / n;
  const double z2 = z * z;
  const double denom = 1.0 + z2 / n;
  const double center = (p + z2 / (2.0 * n)) / denom;
  const double half = (z / denom) * std::sqrt(p * (1.0 - p) / n + z2 / (4.0 * n * n));
  return {std::max(0.0, center - half), std::min(1.0, center + half)};
}

// --- protocol trials ------------------------------------------------------------

namespace {

struct LabelStats {
  double payoff_sum = 0;
  std::uint64_t count = 0;
};

struct TrialResult {
  bool accepted = true;    // every stage ends accepting the inferencer
  bool detected = false;   // some stage rejected (directly or via the zk flip)
  bool ambiguous = false;  // some stage left ambiguous with no flip
  std::uint64_t lazy_instances = 0;
  std::uint64_t lazy_rewarded = 0;
  bool dispute_opened = false;
  bool dispute_rescinded = false;
  std::uint64_t relay_conflicts = 0;
  bool scheduler_slashed = false;
  bool conserved = true;
  std::uint32_t tokens = 0;
  std::uint64_t infer_ops = 0;
  std::uint64_t verify_ops = 0;
  std::map<std::string, LabelStats> payoffs;
  std::vector<nlohmann::json> contract_log;
};

// A colluding verifier's fabricated work: a shared constant state vector far
// from the honest value, a False verdict, and the published token parroted.
VerifierWork fabricate_collusion(Worker& worker, const VerifierContext& context) {
  VerifierWork work;
  work.salt = worker.make_salt(context.order.task_hash, context.order.stage);
  const std::size_t leaves = context.claimed.empty()
                                 ? 1
                                 : static_cast<std::size_t>(context.claimed.back().values.size());
  const std::vector<float> agreed(leaves, 0.25f);
  work.tree = MerkleTree::build(agreed);
  work.verdict = false;
  if (context.tail_stage && !context.published_tokens.empty())
    work.tail_token = context.published_tokens.back();
  work.posted = {commit_verdict(work.verdict, work.salt).digest, work.tree.commitment()};
  return work;
}

TrialResult run_protocol_trial(const Scenario& scenario, const SyntheticModel& model,
                               const SyntheticModel* quantized_model, std::uint32_t trial) {
  const ProtocolScenario& p = scenario.protocol;
  const Digest trial_seed =
      derive_key(seed_digest(scenario.seed), "vdi/experiments/trial", trial);
  const std::uint32_t num_stages = model.config.segment_count;
  const std::uint32_t k = p.committee;
  TrialResult result;

  TokenLedger ledger;
  Registry registry(ledger, RegistryConfig{p.economics.stake, 8, k});
  registry.declare_model("model", num_stages);

  std::deque<Worker> workers;
  for (std::uint32_t i = 1; i <= num_stages; ++i) {
    for (std::uint32_t g = 0; g < p.group_size; ++g) {
      const std::uint64_t index = workers.size();
      const SigningKeypair keys =
          SigningKeypair::from_seed(derive_key(trial_seed, "vdi/experiments/sig", index));
      const NodeId id = registry.register_node(keys.public_key, "model", LayerSlice{i, i},
                                               "node://" + std::to_string(index),
                                               p.economics.stake);
      workers.emplace_back(id, keys,&model,
                           NoiseModel::honest(derive_key(trial_seed, "vdi/experiments/noise", id)));
    }
  }

  const NodeId scheduler_node = static_cast<NodeId>(workers.size());
  const VrfKeypair scheduler_vrf =
      VrfKeypair::from_seed(derive_key(trial_seed, "vdi/experiments/vrf"));
  const SigningKeypair scheduler_sig =
      SigningKeypair::from_seed(derive_key(trial_seed, "vdi/experiments/sched-sig"));
  SchedulerConfig sched_config{k, p.strategy == Strategy::kTamperRelay};
  Scheduler scheduler(registry, "model", scheduler_vrf, scheduler_sig, scheduler_node,
                      sched_config);
  for (Worker& w : workers) scheduler.attach_worker(&w);
  ledger.transfer("external", TokenLedger::stake_account(scheduler_node), p.economics.stake);

  std::vector<std::uint32_t> prompt = p.prompt;
  if (p.randomize_prompt) {
    CounterPrng prng(derive_key(trial_seed, "vdi/experiments/prompt"));
    for (std::uint32_t& tok : prompt)
      tok = 1 + static_cast<std::uint32_t>(prng.uniform(model.config.vocab_size - 1));
  }
  TaskRequest request{"model", prompt, p.max_tokens, trial};

  const RoleAssignment assignment = scheduler.assign_roles(request);

  // Role labels + adversary behavior, set before any inference runs.
  std::map<NodeId, std::string> labels;
  for (std::uint32_t i = 1; i <= num_stages; ++i) {
    const StageAssignment& sa = assignment.stages[i - 1];
    labels[sa.inferencer] = "honest_inferencer";
    for (NodeId v : sa.verifiers) labels[v] = "honest_verifier";
  }
  switch (p.strategy) {
    case Strategy::kHonest:
    case Strategy::kTamperRelay:
      break;
    case Strategy::kQuantize: {
      const NodeId attacker = assignment.stages.front().inferencer;
      Worker& w = workers[attacker];
      w.set_model(quantized_model);
      w.set_behavior({AttackSpec::quantize(p.bits), false, false});
      labels[attacker] = "attacking_inferencer";
      break;
    }
    case Strategy::kEarlyStop: {
      const NodeId attacker = assignment.stages.back().inferencer;
      workers[attacker].set_behavior({AttackSpec::early_stop(p.stop_after), false, false});
      labels[attacker] = "attacking_inferencer";
      break;
    }
    case Strategy::kForgedOutput: {
      const NodeId attacker = assignment.stages.back().inferencer;
      workers[attacker].set_behavior({AttackSpec::forged_output(p.forge), false, false});
      labels[attacker] = "attacking_inferencer";
      break;
    }
    case Strategy::kLazy:
      for (const StageAssignment& sa : assignment.stages)
        for (std::uint32_t j = 0; j < p.adversary_count && j < sa.verifiers.size(); ++j) {
          workers[sa.verifiers[j]].set_behavior({AttackSpec::identity(), true, false});
          labels[sa.verifiers[j]] = "lazy_verifier";
        }
      break;
    case Strategy::kCollude:
      for (const StageAssignment& sa : assignment.stages)
        for (std::uint32_t j = 0; j < p.adversary_count && j < sa.verifiers.size(); ++j)
          labels[sa.verifiers[j]] = "colluder";
      break;
    case Strategy::kOffline:
      for (const StageAssignment& sa : assignment.stages)
        for (std::uint32_t j = 0; j < p.adversary_count && j < sa.verifiers.size(); ++j)
          labels[sa.verifiers[j]] = "offline_verifier";
      break;
  }

  // Escrow budget for reconsiderations, funded before the payoff snapshot so
  // it nets out of every delta.
  if (p.with_dispute) {
    const std::int64_t budget = static_cast<std::int64_t>(p.dispute_committee - k) *
                                p.economics.verification_cost;
    for (const StageAssignment& sa : assignment.stages)
      ledger.transfer("external", TokenLedger::wallet_account(sa.inferencer), budget);
  }

  auto holdings = [&](NodeId id) {
    return ledger.balance(TokenLedger::wallet_account(id)) +
           ledger.balance(TokenLedger::stake_account(id));
  };
  std::map<NodeId, std::int64_t> held_before;
  std::map<NodeId, std::uint64_t> ops_before;
  for (const Worker& w : workers) {
    held_before[w.id()] = holdings(w.id());
    ops_before[w.id()] = w.ops();
  }

  TaskTranscript transcript = scheduler.run_inference(request);
  result.tokens = static_cast<std::uint32_t>(transcript.tokens.size());
  const std::vector<WorkOrder> orders = scheduler.dispatch_verification(transcript);
  const Digest h = transcript.assignment.task_hash;

  ContractConfig cc;
  cc.tau = p.tau;
  cc.delta = p.delta;
  cc.sample_count = p.sample_count;
  cc.inference_reward = p.economics.inference_reward;
  cc.verification_reward = p.economics.verification_reward;
  cc.verification_cost = p.economics.verification_cost;
  cc.slash = p.economics.slash;
  cc.scheduler_node = scheduler_node;
  cc.scheduler_vrf_pk = scheduler_vrf.public_key;
  cc.scheduler_sig_pk = scheduler_sig.public_key;
  cc.beacon_seed = derive_key(trial_seed, "vdi/experiments/beacon");
  Contract contract(ledger, cc);
  for (const Worker& w : workers) contract.register_identity(w.id(), w.public_key());

  // Relay audit: under equivocation the dual-signed conflict is the complaint
  // evidence; anyone holding both records can file it.
  const RelayAudit audit = audit_relay(transcript, registry, scheduler_sig.public_key);
  result.relay_conflicts = audit.conflicts.size();
  if (!audit.conflicts.empty()) {
    const RelayRecord& a = transcript.relay[audit.conflicts.front().first];
    const RelayRecord& b = transcript.relay[audit.conflicts.front().second];
    const NodeId complainant = assignment.stages[a.stage - 1].verifiers.front();
    contract.file_relay_complaint(complainant, h, a.stage, a.step, a.root, a.scheduler_sig,
                                  b.root, b.scheduler_sig);
    result.scheduler_slashed = true;
  }

  // One verification round per stage, driven commit -> sample -> reveal ->
  // adjudicate; a lambda so the reconsideration path can rerun it verbatim
  // with a fresh committee.
  auto drive_round = [&](RoundId rid, std::uint32_t stage,
                         std::span<const NodeId> committee) -> Verdict {
    std::map<NodeId, VerifierWork> works;
    for (NodeId v : committee) {
      const std::string& label = labels.count(v) ? labels[v] : "honest_verifier";
      if (label == "offline_verifier") continue;
      const std::size_t slot = static_cast<std::size_t>(stage - 1) * k;
      VerifierContext context =
          make_verifier_context(transcript, stage, orders[slot], &model.head);
      Worker& w = workers[v];
      VerifierWork vw = label == "colluder" ? fabricate_collusion(w, context)
                                            : run_verifier(w, context);
      contract.submit_verdict_commitment(rid, v, vw.posted);
      works.emplace(v, std::move(vw));
    }
    if (works.size() < committee.size())
      contract.advance_time(contract.now() + cc.commit_window);

    std::vector<PostedCommitment> posted;
    for (NodeId v : committee)
      if (works.count(v)) posted.push_back(works.at(v).posted);
    const SamplingPackage package =
        scheduler.publish_samples(transcript, stage, posted, true, cc.sample_count);
    contract.check_sampling_package(rid, package);

    const std::vector<std::uint32_t>& indices = contract.round(rid).sampled_indices;
    std::size_t revealed = 0;
    for (NodeId v : committee) {
      auto it = works.find(v);
      if (it == works.end()) continue;
      try {
        contract.reveal(rid, v, it->second.reveal_at(indices));
        ++revealed;
      } catch (const Error&) {
        // A reveal the contract rejects (index out of the fabricated tree,
        // missing tail token) leaves the verifier silent and slashed.
      }
    }
    if (revealed < committee.size()) contract.advance_time(contract.now() + cc.reveal_window);

    const Outcome& outcome = contract.adjudicate(rid);

    // Lazy verifiers succeed only if the adjudication rewarded them.
    for (NodeId v : committee) {
      if (labels.count(v) && labels[v] == "lazy_verifier") {
        result.lazy_instances += 1;
        if (std::find(outcome.rewarded.begin(), outcome.rewarded.end(), v) !=
            outcome.rewarded.end())
          result.lazy_rewarded += 1;
      }
    }
    return outcome.verdict;
  };

  for (std::uint32_t i = 1; i <= num_stages; ++i) {
    const StageAssignment& sa = transcript.assignment.stages[i - 1];
    const RoundId rid = contract.open_round(h, i, i == num_stages, transcript.tokens.back(),
                                            sa.inferencer, sa.verifiers);
    Verdict verdict = drive_round(rid, i, sa.verifiers);

    const bool stage_inferencer_cheats =
        labels.count(sa.inferencer) && labels[sa.inferencer] == "attacking_inferencer";
    if (verdict == Verdict::kAmbiguous && stage_inferencer_cheats) {
      // The zero-knowledge oracle stands in for the full proof system: a
      // prover holding a genuine fraud witness always convinces it.  Nobody
      // files against an honest stage: the oracle would reject the proof.
      NodeId prover = sa.verifiers.front();
      for (NodeId v : sa.verifiers)
        if (labels.count(v) && labels[v] == "honest_verifier") {
          prover = v;
          break;
        }
      verdict = contract.file_zk_dispute(rid, prover, true).verdict;
    }

    if (verdict == Verdict::kRejectInferencer && p.with_dispute && !stage_inferencer_cheats) {
      // Wrongful rejection: the inferencer escalates to a larger committee.
      result.dispute_opened = true;
      const std::vector<Group> groups = registry.group_snapshot("model");
      std::vector<NodeId> candidates;
      for (NodeId n : groups[i - 1].members) {
        if (n == sa.inferencer) continue;
        if (std::find(sa.verifiers.begin(), sa.verifiers.end(), n) != sa.verifiers.end())
          continue;
        candidates.push_back(n);
      }
      const std::int64_t escrow = static_cast<std::int64_t>(p.dispute_committee - k) *
                                  p.economics.verification_cost;
      const RoundId child =
          contract.open_dispute(rid, p.dispute_committee, candidates, escrow);
      verdict = drive_round(child, i, contract.round(child).committee);
      contract.finalize_dispute(rid);
      if (verdict == Verdict::kAcceptInferencer) result.dispute_rescinded = true;
    } else if (contract.round(rid).phase == Phase::kAdjudicated) {
      contract.close_round(rid);
    }

    if (verdict != Verdict::kAcceptInferencer && verdict != Verdict::kAmbiguous)
      result.accepted = false;
    if (verdict == Verdict::kRejectInferencer) result.detected = true;
    if (verdict == Verdict::kAmbiguous) result.ambiguous = true;
  }

  // Payoffs: balance delta minus compute cost, where one full stage
  // verification (prompt + T - 1 rows) costs exactly `verification_cost`.
  const double unit_ops = static_cast<double>(model.segments.front().ops_per_row()) *
                          static_cast<double>(prompt.size() + transcript.tokens.size() - 1);
  for (const Worker& w : workers) {
    auto label = labels.find(w.id());
    if (label == labels.end()) continue;
    const double delta = static_cast<double>(holdings(w.id()) - held_before[w.id()]);
    const std::uint64_t ops = w.ops() - ops_before[w.id()];
    const double cost = static_cast<double>(p.economics.verification_cost) *
                        (static_cast<double>(ops) / unit_ops);
    LabelStats& stats = result.payoffs[label->second];
    stats.payoff_sum += delta - cost;
    stats.count += 1;
    if (label->second == "honest_inferencer" || label->second == "attacking_inferencer")
      result.infer_ops += ops;
    else
      result.verify_ops += ops;
  }
  result.conserved = ledger.sum_all() == 0;
  result.contract_log = contract.events();
  return result;
}

RunReport run_protocol_scenario(const Scenario& scenario) {
  const ProtocolScenario& p = scenario.protocol;
  RunReport report;
  report.csv_header =
      "trial,accepted,detected,ambiguous,inferencer_payoff,verifier_payoff,adversary_payoff,"
      "tokens,infer_ops,verify_ops";

  const SyntheticModel model = SyntheticModel::build(p.model);
  SyntheticModel quantized = SyntheticModel::build(p.model, Arithmetic::quantized(p.bits));

  std::uint64_t ok_trials = 0, accepted = 0, detected = 0, ambiguous = 0;
  std::uint64_t lazy_instances = 0, lazy_rewarded = 0;
  std::uint64_t disputes = 0, rescinded = 0, conflicts = 0, scheduler_slashes = 0;
  std::uint64_t conservation_failures = 0;
  double token_sum = 0;
  std::map<std::string, LabelStats> payoffs;

  for (std::uint32_t t = 0; t < scenario.trials; ++t) {
    TrialResult r;
    try {
      r = run_protocol_trial(scenario, model, &quantized, t);
    } catch (const std::exception& e) {
      report.errors.push_back("trial " + std::to_string(t) + ": " + e.what());
      report.csv_rows.push_back(std::to_string(t) + ",error,,,,,,,,");
      continue;
    }
    ok_trials += 1;
    accepted += r.accepted ? 1 : 0;
    detected += r.detected ? 1 : 0;
    ambiguous += r.ambiguous ? 1 : 0;
    lazy_instances += r.lazy_instances;
    lazy_rewarded += r.lazy_rewarded;
    disputes += r.dispute_opened ? 1 : 0;
    rescinded += r.dispute_rescinded ? 1 : 0;
    conflicts += r.relay_conflicts;
    scheduler_slashes += r.scheduler_slashed ? 1 : 0;
    conservation_failures += r.conserved ? 0 : 1;
    token_sum += r.tokens;
    for (const auto& [label, stats] : r.payoffs) {
      payoffs[label].payoff_sum += stats.payoff_sum;
      payoffs[label].count += stats.count;
    }
    if (report.contract_log.empty()) report.contract_log = r.contract_log;

    auto mean_of = [&](std::initializer_list<const char*> names) {
      double sum = 0;
      std::uint64_t n = 0;
      for (const char* name : names) {
        auto it = r.payoffs.find(name);
        if (it != r.payoffs.end()) {
          sum += it->second.payoff_sum;
          n += it->second.count;
        }
      }
      return n == 0 ? 0.0 : sum / static_cast<double>(n);
    };
    const double infer_payoff = mean_of({"honest_inferencer", "attacking_inferencer"});
    const double verifier_payoff = mean_of({"honest_verifier"});
    const double adversary_payoff = mean_of(
        {"attacking_inferencer", "lazy_verifier", "colluder", "offline_verifier"});
    report.csv_rows.push_back(std::to_string(t) + "," + (r.accepted ? "1" : "0") + "," +
                              (r.detected ? "1" : "0") + "," + (r.ambiguous ? "1" : "0") + "," +
                              fmt(infer_payoff) + "," + fmt(verifier_payoff) + "," +
                              fmt(adversary_payoff) + "," + std::to_string(r.tokens) + "," +
                              std::to_string(r.infer_ops) + "," + std::to_string(r.verify_ops));
  }

  auto rate_metric = [&](const std::string& name, std::uint64_t hits, std::uint64_t total) {
    report.metrics[name] = total == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(total);
    report.intervals[name] = wilson_interval(hits, total);
  };
  rate_metric("accept_rate", accepted, ok_trials);
  rate_metric("detection_rate", detected, ok_trials);
  rate_metric("ambiguous_rate", ambiguous, ok_trials);
  if (p.strategy == Strategy::kLazy)
    rate_metric("lazy_success_rate", lazy_rewarded, lazy_instances);
  if (p.with_dispute) {
    rate_metric("dispute_open_rate", disputes, ok_trials);
    rate_metric("dispute_rescinded_rate", rescinded, ok_trials);
  }
  if (p.strategy == Strategy::kTamperRelay) {
    report.metrics["relay_conflicts_per_trial"] =
        ok_trials == 0 ? 0.0 : static_cast<double>(conflicts) / static_cast<double>(ok_trials);
    rate_metric("scheduler_slash_rate", scheduler_slashes, ok_trials);
  }
  report.metrics["error_trials"] = static_cast<double>(scenario.trials - ok_trials);
  report.metrics["conservation_failures"] = static_cast<double>(conservation_failures);
  report.metrics["mean_tokens"] =
      ok_trials == 0 ? 0.0 : token_sum / static_cast<double>(ok_trials);
  for (const auto& [label, stats] : payoffs)
    report.metrics["payoff/" + label] =
        stats.count == 0 ? 0.0 : stats.payoff_sum / static_cast<double>(stats.count);
  return report;
}

RunReport run_agreement_scenario(const Scenario& scenario) {
  const AgreementScenario& a = scenario.agreement;
  a.game.validate();
  RunReport report;
  report.csv_header = "trial,honest_accepted,dishonest_accepted,consensus,inferencer_accepted";

  CounterPrng rng(seed_digest(scenario.seed), "vdi/experiments/agreement");
  std::uint64_t honest_hits = 0, dishonest_hits = 0, consensus_hits = 0, inferencer_hits = 0;
  for (std::uint32_t t = 0; t < scenario.trials; ++t) {
    const RoundResult hon = simulate_round(a.game, a.policy, rng, true);
    const RoundResult dis = simulate_round(a.game, a.policy, rng, false);
    const RoundResult unc = simulate_round(a.game, a.policy, rng, std::nullopt);
    const bool h_ok = hon.accepted[0];
    const bool d_ok = dis.accepted[0];
    honest_hits += h_ok ? 1 : 0;
    dishonest_hits += d_ok ? 1 : 0;
    consensus_hits += unc.consensus ? 1 : 0;
    inferencer_hits += unc.inferencer_accepted ? 1 : 0;
    report.csv_rows.push_back(std::to_string(t) + "," + (h_ok ? "1" : "0") + "," +
                              (d_ok ? "1" : "0") + "," + (unc.consensus ? "1" : "0") + "," +
                              (unc.inferencer_accepted ? "1" : "0"));
  }

  auto rate_metric = [&](const std::string& name, std::uint64_t hits) {
    report.metrics[name] = static_cast<double>(hits) / static_cast<double>(scenario.trials);
    report.intervals[name] = wilson_interval(hits, scenario.trials);
  };
  rate_metric("honest_accept_rate", honest_hits);
  rate_metric("dishonest_accept_rate", dishonest_hits);
  rate_metric("consensus_rate", consensus_hits);
  rate_metric("inferencer_accept_rate", inferencer_hits);
  report.metrics["honest_bound"] = honest_accept_lower_bound(a.game);
  const DishonestBound bound = dishonest_accept_upper_bound(a.game);
  report.metrics["dishonest_bound_p_d1"] = bound.p_d1;
  report.metrics["dishonest_bound_p_d2"] = bound.p_d2;
  report.metrics["dishonest_bound_p_d3"] = bound.p_d3;
  report.metrics["dishonest_bound_total"] = bound.total;
  return report;
}

}  // namespace

RunReport run_scenario(const Scenario& scenario) {
  if (scenario.trials == 0) throw ScenarioError("trials must be >= 1");
  RunReport report = scenario.kind == "agreement" ? run_agreement_scenario(scenario)
                                                  : run_protocol_scenario(scenario);
  report.scenario_name = scenario.name;
  report.kind = scenario.kind;
  report.seed = scenario.seed;
  report.trials = scenario.trials;

  for (const Assertion& as : scenario.assertions) {
    AssertionResult ar;
    ar.assertion = as;
    auto it = report.metrics.find(as.metric);
    if (it == report.metrics.end()) {
      ar.observed = std::numeric_limits<double>::quiet_NaN();
      ar.pass = false;
    } else {
      ar.observed = it->second;
      if (as.op == ">=") ar.pass = ar.observed >= as.value;
      else if (as.op == "<=") ar.pass = ar.observed <= as.value;
      else if (as.op == ">") ar.pass = ar.observed > as.value;
      else if (as.op == "<") ar.pass = ar.observed < as.value;
      else ar.pass = ar.observed == as.value;
    }
    report.all_pass = report.all_pass && ar.pass;
    report.assertions.push_back(std::move(ar));
  }
  return report;
}

std::map<std::string, double> payoff_table(const RunReport& report) {
  std::map<std::string, double> table;
  for (const auto& [name, value] : report.metrics)
    if (name.rfind("payoff/", 0) == 0) table[name.substr(7)] = value;
  return table;
}

void write_report_files(const RunReport& report, const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);

  {
    std::ofstream csv(out_dir / "trials.csv", std::ios::binary);
    if (!csv) throw TraceIoError("cannot write " + (out_dir / "trials.csv").string());
    csv << report.csv_header << '\n';
    for (const std::string& row : report.csv_rows) csv << row << '\n';
  }

  {
    nlohmann::json j;
    j["scenario"] = report.scenario_name;
    j["kind"] = report.kind;
    j["seed"] = report.seed;
    j["trials"] = report.trials;
    j["metrics"] = report.metrics;
    nlohmann::json intervals = nlohmann::json::object();
    for (const auto& [name, ci] : report.intervals)
      intervals[name] = {{"low", ci.low}, {"high", ci.high}};
    j["intervals_95"] = intervals;
    nlohmann::json asserts = nlohmann::json::array();
    for (const AssertionResult& ar : report.assertions)
      asserts.push_back({{"metric", ar.assertion.metric},
                         {"op", ar.assertion.op},
                         {"value", ar.assertion.value},
                         {"observed", ar.observed},
                         {"pass", ar.pass}});
    j["assertions"] = asserts;
    j["all_pass"] = report.all_pass;
    j["errors"] = report.errors;
    std::ofstream summary(out_dir / "summary.json", std::ios::binary);
    if (!summary) throw TraceIoError("cannot write " + (out_dir / "summary.json").string());
    summary << j.dump(2) << '\n';
  }

  if (!report.contract_log.empty()) {
    std::ofstream log(out_dir / "contract.log", std::ios::binary);
    if (!log) throw TraceIoError("cannot write " + (out_dir / "contract.log").string());
    for (const nlohmann::json& event : report.contract_log) log << event.dump() << '\n';
  }
}

std::vector<BoundsCheckRow> bounds_check(std::span<const GameParams> grid,
                                         std::uint32_t trials_per_point, std::uint64_t seed) {
  std::vector<BoundsCheckRow> rows;
  for (std::size_t g = 0; g < grid.size(); ++g) {
    const GameParams& params = grid[g];
    params.validate();
    BoundsCheckRow row;
    row.params = params;
    row.honest_bound = honest_accept_lower_bound(params);
    row.dishonest_bound = dishonest_accept_upper_bound(params).total;

    CounterPrng rng(derive_key(seed_digest(seed), "vdi/experiments/bounds", g));
    std::uint64_t honest_hits = 0, dishonest_hits = 0;
    for (std::uint32_t t = 0; t < trials_per_point; ++t) {
      if (simulate_round(params, AdversaryPolicy::kRandomGuess, rng, true).accepted[0])
        honest_hits += 1;
      if (simulate_round(params, AdversaryPolicy::kRandomGuess, rng, false).accepted[0])
        dishonest_hits += 1;
    }
    const double n = static_cast<double>(trials_per_point);
    row.honest_mc = static_cast<double>(honest_hits) / n;
    row.dishonest_mc = static_cast<double>(dishonest_hits) / n;
    // Sigma evaluated at the bound value itself: the conservative null.
    row.honest_sigma =
        std::sqrt(std::max(row.honest_bound * (1.0 - row.honest_bound), 1.0 / n) / n);
    const double db = std::min(row.dishonest_bound, 1.0);
    row.dishonest_sigma = std::sqrt(std::max(db * (1.0 - db), 1.0 / n) / n);
    row.pass = row.honest_mc >= row.honest_bound - 3.0 * row.honest_sigma &&
               row.dishonest_mc <= db + 3.0 * row.dishonest_sigma;
    rows.push_back(row);
  }
  return rows;
}

}  // namespace vdi
