#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vdi/clustering.hpp"
#include "vdi/common.hpp"
#include "vdi/pipeline.hpp"

namespace vdi {

// --- scenario schema --------------------------------------------------------

struct Economics {
  std::int64_t inference_reward = 60;
  std::int64_t verification_reward = 90;  // committee pool
  std::int64_t verification_cost = 10;    // per full stage verification
  std::int64_t slash = 30;
  std::int64_t stake = 100;
};

enum class Strategy {
  kHonest,
  kQuantize,      // one inferencer runs reduced-precision arithmetic
  kEarlyStop,     // the tail inferencer claims EOS before the real one
  kForgedOutput,  // the tail inferencer publishes a small model's tokens
  kLazy,          // verifiers skip the recomputation and vote True
  kCollude,       // verifiers vote False around a fabricated common point
  kOffline,       // verifiers never commit (network drop as omission)
  kTamperRelay,   // the scheduler countersigns two conflicting roots
};

const char* strategy_name(Strategy s);
Strategy strategy_from_name(const std::string& name);  // throws ScenarioError

struct ProtocolScenario {
  ModelConfig model;
  std::vector<std::uint32_t> prompt;  // shape default; resampled when randomized
  bool randomize_prompt = false;      // per-trial prompt from the trial seed
  std::uint32_t max_tokens = 8;
  std::uint32_t committee = 6;   // verifiers per stage (k == m)
  std::uint32_t group_size = 8;  // registered nodes per stage, >= committee+1
  double tau = 0.7;
  double delta = kAgreementDelta;
  std::uint32_t sample_count = 8;
  Economics economics;
  Strategy strategy = Strategy::kHonest;
  std::uint32_t adversary_count = 1;  // adversarial verifiers per committee
  int bits = 8;                       // kQuantize
  std::uint32_t stop_after = 1;       // kEarlyStop
  ModelConfig forge;                  // kForgedOutput small model
  bool with_dispute = false;          // reconsider wrongful rejections
  std::uint32_t dispute_committee = 12;  // m' > m
};

struct AgreementScenario {
  GameParams game;
  AdversaryPolicy policy = AdversaryPolicy::kRandomGuess;
};

struct Assertion {
  std::string metric;
  std::string op;  // one of >=, <=, >, <, ==
  double value = 0;
};

struct Scenario {
  std::string name;
  std::string kind = "protocol";  // "protocol" | "agreement"
  std::uint64_t seed = 1;
  std::uint32_t trials = 100;
  ProtocolScenario protocol;
  AgreementScenario agreement;
  std::vector<Assertion> assertions;
};

Scenario scenario_from_json(const nlohmann::json& j);        // throws ScenarioError
Scenario load_scenario(const std::filesystem::path& path);   // throws ScenarioError

// --- reports ------------------------------------------------------------------

struct ConfidenceInterval {
  double low = 0;
  double high = 1;
};

// 95% Wilson score interval for a binomial proportion.
ConfidenceInterval wilson_interval(std::uint64_t hits, std::uint64_t total);

struct AssertionResult {
  Assertion assertion;
  double observed = 0;
  bool pass = false;
};

struct RunReport {
  std::string scenario_name;
  std::string kind;
  std::uint64_t seed = 0;
  std::uint32_t trials = 0;
  std::map<std::string, double> metrics;
  std::map<std::string, ConfidenceInterval> intervals;  // for rate metrics
  std::vector<AssertionResult> assertions;
  bool all_pass = true;
  std::string csv_header;
  std::vector<std::string> csv_rows;  // one line per trial, pre-rendered
  std::vector<std::string> errors;    // per-trial recorded failures (not fatal)
  std::vector<nlohmann::json> contract_log;  // first completed trial's events
};

RunReport run_scenario(const Scenario& scenario);

// Mean payoff per role label, filtered out of report.metrics ("payoff/...").
std::map<std::string, double> payoff_table(const RunReport& report);

// Writes out_dir/trials.csv, out_dir/summary.json and, when a protocol trial
// produced one, out_dir/contract.log.  Byte-deterministic for a fixed report.
void write_report_files(const RunReport& report, const std::filesystem::path& out_dir);

// --- analytic-bound spot checks ----------------------------------------------

struct BoundsCheckRow {
  GameParams params;
  double honest_bound = 0;     // analytic lower bound
  double dishonest_bound = 0;  // analytic upper bound (union total)
  double honest_mc = 0;
  double dishonest_mc = 0;
  double honest_sigma = 0;  // binomial sigma at the bound value
  double dishonest_sigma = 0;
  bool pass = false;  // MC respects both bounds within 3 sigma
};

std::vector<BoundsCheckRow> bounds_check(std::span<const GameParams> grid,
                                         std::uint32_t trials_per_point, std::uint64_t seed);

}  // namespace vdi
