// Command-line front end: scenario runner, trace comparison, contract log
// replay, and the analytic bound table.  Every verb is a thin adapter over
// the library; exit codes are 0 (pass), 1 (assertion/divergence), 2 (usage
// or schema error).

#include <cstdio>
#include <exception>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "vdi/bitstats.hpp"
#include "vdi/clustering.hpp"
#include "vdi/commitments.hpp"
#include "vdi/common.hpp"
#include "vdi/contract.hpp"
#include "vdi/experiments.hpp"

namespace {

int cmd_montecarlo(const std::string& scenario_path, std::uint64_t* seed_override,
                   std::uint32_t* trials_override, const std::string& out_dir) {
  vdi::Scenario scenario;
  try {
    scenario = vdi::load_scenario(scenario_path);
    if (seed_override) scenario.seed = *seed_override;
    if (trials_override) {
      if (*trials_override == 0) throw vdi::ScenarioError("trials must be >= 1");
      scenario.trials = *trials_override;
    }
  } catch (const vdi::ScenarioError& e) {
    std::cerr << "scenario error: " << e.what() << "\n";
    return 2;
  }

  const vdi::RunReport report = vdi::run_scenario(scenario);
  if (!out_dir.empty()) vdi::write_report_files(report, out_dir);

  std::cout << "scenario " << report.scenario_name << " (" << report.kind << ", seed "
            << report.seed << ", " << report.trials << " trials)\n";
  for (const auto& [name, value] : report.metrics) {
    std::cout << "  " << name << " = " << value;
    auto ci = report.intervals.find(name);
    if (ci != report.intervals.end())
      std::cout << "  [" << ci->second.low << ", " << ci->second.high << "]";
    std::cout << "\n";
  }
  for (const std::string& err : report.errors) std::cout << "  error: " << err << "\n";
  for (const vdi::AssertionResult& ar : report.assertions)
    std::cout << (ar.pass ? "PASS" : "FAIL") << "  " << ar.assertion.metric << " "
              << ar.assertion.op << " " << ar.assertion.value << "  (observed " << ar.observed
              << ")\n";
  return report.all_pass ? 0 : 1;
}

int cmd_compare(const std::string& reference_path, const std::string& candidate_path,
                const std::string& preset) {
  const vdi::Tolerances& tol = preset == "on-chain" ? vdi::kOnChain : vdi::kOffChain;
  std::vector<vdi::HiddenState> reference, candidate;
  try {
    reference = vdi::read_trace_file(reference_path);
    candidate = vdi::read_trace_file(candidate_path);
  } catch (const vdi::Error& e) {
    std::cerr << "trace error: " << e.what() << "\n";
    return 2;
  }

  vdi::ComparisonStats stats;
  try {
    stats = vdi::compare_traces(reference, candidate, tol);
  } catch (const vdi::Error& e) {
    std::cerr << "shape error: " << e.what() << "\n";
    return 2;
  }
  const bool ok = vdi::accept(stats, tol);
  nlohmann::json j{{"preset", preset},
                   {"n_pairs", stats.n_pairs},
                   {"n_exact", stats.n_exact},
                   {"p_e", stats.p_e},
                   {"p_m", stats.p_m},
                   {"p_w", stats.p_w},
                   {"e_mean", stats.e_mean},
                   {"accept", ok}};
  std::cout << j.dump(2) << "\n";
  return ok ? 0 : 1;
}

int cmd_replay(const std::string& log_path) {
  const vdi::ReplayResult result = vdi::replay_contract_log(log_path);
  if (!result.warning.empty()) std::cout << "warning: " << result.warning << "\n";
  if (result.ok) {
    std::cout << "replayed " << result.events_checked << " events, state digests match\n";
    return 0;
  }
  std::cout << "divergence at event "
            << (result.first_divergence ? std::to_string(*result.first_divergence)
                                        : std::string("?"))
            << ": " << result.detail << "\n";
  return 1;
}

int cmd_bounds(std::uint32_t n, std::uint32_t q, double eps1, double eps2, double r) {
  vdi::GameParams params;
  params.n = n;
  params.q = q;
  params.eps1 = eps1;
  params.eps2 = eps2;
  params.r = r;
  try {
    params.validate();
  } catch (const vdi::Error& e) {
    std::cerr << "invalid parameters: " << e.what() << "\n";
    return 2;
  }
  const double honest = vdi::honest_accept_lower_bound(params);
  const vdi::DishonestBound dis = vdi::dishonest_accept_upper_bound(params);
  std::printf("n=%u q=%u eps1=%g eps2=%g r=%g\n", n, q, eps1, eps2, r);
  std::printf("honest acceptance lower bound: %.6f\n", honest);
  std::printf("dishonest acceptance upper bound:\n");
  std::printf("  p_d1 (lucky guess):        %.6f\n", dis.p_d1);
  std::printf("  p_d2 (quorum failure):     %.6f\n", dis.p_d2);
  std::printf("  p_d3 (misplaced member):   %.6f\n", dis.p_d3);
  std::printf("  total (union bound):       %.6f\n", dis.total);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Verifiable decentralized inference: protocol simulator and audits"};
  app.require_subcommand(1);

  // montecarlo
  std::string scenario_path, out_dir;
  std::uint64_t seed = 0;
  std::uint32_t trials = 0;
  bool seed_set = false, trials_set = false;
  CLI::App* mc = app.add_subcommand("montecarlo", "run a scenario file and check assertions");
  mc->add_option("scenario", scenario_path, "scenario JSON file")->required();
  mc->add_option("--seed", seed, "master seed override")->each([&](const std::string&) {
    seed_set = true;
  });
  mc->add_option("--trials", trials, "trial count override")->each([&](const std::string&) {
    trials_set = true;
  });
  mc->add_option("--out", out_dir, "directory for trials.csv / summary.json / contract.log");

  // compare
  std::string reference_path, candidate_path, preset = "off-chain";
  CLI::App* cm = app.add_subcommand("compare", "bit-aware comparison of two trace files");
  cm->add_option("reference", reference_path, "reference trace")->required();
  cm->add_option("candidate", candidate_path, "candidate trace")->required();
  cm->add_option("--preset", preset, "tolerance preset")
      ->check(CLI::IsMember({"off-chain", "on-chain"}));

  // replay
  std::string log_path;
  CLI::App* rp = app.add_subcommand("replay", "re-execute and audit a contract event log");
  rp->add_option("log", log_path, "line-JSON contract log")->required();

  // bounds
  std::uint32_t n = 6, q = 4;
  double eps1 = 0.01, eps2 = 0.01, r = 0.8;
  CLI::App* bd = app.add_subcommand("bounds", "print the agreement-game probability bounds");
  bd->add_option("--n", n, "committee size");
  bd->add_option("--q", q, "quorum (must exceed n/2)");
  bd->add_option("--eps1", eps1, "honest-noise escape probability");
  bd->add_option("--eps2", eps2, "dishonest lucky-guess probability");
  bd->add_option("--r", r, "honest population rate");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;  // help exits clean; any usage error is 2
  }

  try {
    if (mc->parsed())
      return cmd_montecarlo(scenario_path, seed_set ? &seed : nullptr,
                            trials_set ? &trials : nullptr, out_dir);
    if (cm->parsed()) return cmd_compare(reference_path, candidate_path, preset);
    if (rp->parsed()) return cmd_replay(log_path);
    if (bd->parsed()) return cmd_bounds(n, q, eps1, eps2, r);
  } catch (const vdi::ScenarioError& e) {
    std::cerr << "scenario error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
