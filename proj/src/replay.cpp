#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include "vdi/contract.hpp"

namespace vdi {

// Friend of Contract: drives a replica through the public operations and
// checks each re-emitted event against the recorded one.
struct ContractReplayer {
  TokenLedger ledger;
  std::unique_ptr<Contract> replica;

  void boot(const nlohmann::json& genesis) {
    const nlohmann::json& balances = genesis.at("balances");
    for (auto it = balances.begin(); it != balances.end(); ++it) {
      if (it.key() == "external") continue;
      const auto amount = it.value().get<std::int64_t>();
      if (amount < 0) throw ReplayError("negative balance for " + it.key());
      ledger.transfer("external", it.key(), amount);
    }
    if (balances.contains("external") && !ledger.accounts().count("external"))
      ledger.transfer("external", "external", 0);  // materialize the entry
    replica = std::make_unique<Contract>(ledger, config_from_json(genesis.at("config")));
  }

  void apply(const nlohmann::json& event) {
    const std::string kind = event.at("kind").get<std::string>();
    if (kind == "identity") {
      replica->register_identity(event.at("node").get<NodeId>(),
                                 digest_from_hex(event.at("pk").get<std::string>()));
    } else if (kind == "open_round") {
      std::vector<NodeId> committee;
      for (const auto& v : event.at("committee")) committee.push_back(v.get<NodeId>());
      replica->open_round(digest_from_hex(event.at("task").get<std::string>()),
                          event.at("stage").get<std::uint32_t>(), event.at("tail").get<bool>(),
                          event.at("tail_token").get<std::uint32_t>(),
                          event.at("inferencer").get<NodeId>(), committee);
    } else if (kind == "commit") {
      replica->submit_verdict_commitment(event.at("round").get<RoundId>(),
                                         event.at("verifier").get<NodeId>(),
                                         posted_from_json(event.at("posted")));
    } else if (kind == "package") {
      replica->check_sampling_package(event.at("round").get<RoundId>(),
                                      package_from_json(event.at("package")));
    } else if (kind == "reveal") {
      replica->reveal(event.at("round").get<RoundId>(), event.at("verifier").get<NodeId>(),
                      reveal_from_json(event.at("submission")));
    } else if (kind == "adjudicate") {
      replica->adjudicate(event.at("round").get<RoundId>());
    } else if (kind == "zk_dispute") {
      replica->file_zk_dispute(event.at("round").get<RoundId>(),
                               event.at("prover").get<NodeId>(), event.at("valid").get<bool>());
    } else if (kind == "open_dispute") {
      std::vector<NodeId> candidates;
      for (const auto& v : event.at("candidates")) candidates.push_back(v.get<NodeId>());
      replica->open_dispute(event.at("round").get<RoundId>(),
                            event.at("m_prime").get<std::uint32_t>(), candidates,
                            event.at("escrow").get<std::int64_t>());
    } else if (kind == "finalize_dispute") {
      replica->finalize_dispute(event.at("round").get<RoundId>());
    } else if (kind == "relay_complaint") {
      replica->file_relay_complaint(event.at("complainant").get<NodeId>(),
                                    digest_from_hex(event.at("task").get<std::string>()),
                                    event.at("stage").get<std::uint32_t>(),
                                    event.at("step").get<std::uint32_t>(),
                                    commitment_from_json(event.at("root_a")),
                                    signature_from_json(event.at("sig_a")),
                                    commitment_from_json(event.at("root_b")),
                                    signature_from_json(event.at("sig_b")));
    } else if (kind == "close_round") {
      replica->close_round(event.at("round").get<RoundId>());
    } else if (kind == "time") {
      replica->advance_time(event.at("now").get<std::uint64_t>());
    } else {
      throw ReplayError("unknown event kind '" + kind + "'");
    }
  }

  const nlohmann::json& last_emitted() const { return replica->events().back(); }
};

ReplayResult replay_contract_log(const std::filesystem::path& path) {
  ReplayResult result;
  std::ifstream in(path);
  if (!in) {
    result.detail = "cannot open " + path.string();
    return result;
  }

  std::vector<nlohmann::json> events;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json event = nlohmann::json::parse(line, nullptr, false);
    if (event.is_discarded()) {
      // A torn tail write is survivable; garbage in the middle is not, but
      // we cannot tell the difference here, so stop and flag it.
      result.warning = "log truncated at line " + std::to_string(line_no);
      break;
    }
    events.push_back(std::move(event));
  }
  if (events.empty()) {
    result.detail = "log holds no events";
    return result;
  }
  if (events.front().at("kind").get<std::string>() != "genesis") {
    result.detail = "log does not begin with a genesis event";
    result.first_divergence = 0;
    return result;
  }

  ContractReplayer replayer;
  auto mismatch = [&](std::size_t seq, const std::string& why) {
    result.first_divergence = seq;
    result.detail = why;
    return result;
  };

  try {
    replayer.boot(events.front());
  } catch (const std::exception& e) {
    return mismatch(0, std::string("genesis rejected: ") + e.what());
  }
  if (replayer.last_emitted().at("state") != events.front().at("state"))
    return mismatch(0, "genesis state digest differs");
  result.events_checked = 1;

  for (std::size_t i = 1; i < events.size(); ++i) {
    const nlohmann::json& logged = events[i];
    try {
      replayer.apply(logged);
    } catch (const std::exception& e) {
      return mismatch(i, std::string("event rejected on replay: ") + e.what());
    }
    const nlohmann::json& emitted = replayer.last_emitted();
    if (emitted.at("seq") != logged.at("seq"))
      return mismatch(i, "sequence number differs");
    if (emitted.at("state") != logged.at("state"))
      return mismatch(i, "state digest differs after event " +
                             logged.at("kind").get<std::string>());
    result.events_checked += 1;
  }
  result.ok = true;
  return result;
}

}  // namespace vdi
