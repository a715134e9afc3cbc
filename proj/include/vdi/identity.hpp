#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vdi/common.hpp"

namespace vdi {

using NodeId = std::uint32_t;

// --- token ledger ---------------------------------------------------------

// Double-entry ledger over named accounts.  "external" absorbs everything
// entering or leaving the system, so the sum over all accounts is always
// exactly zero — the conservation invariant the tests assert.
class TokenLedger {
 public:
  void transfer(const std::string& from, const std::string& to, std::int64_t amount);
  std::int64_t balance(const std::string& account) const;
  std::int64_t sum_all() const;
  const std::map<std::string, std::int64_t>& accounts() const { return balances_; }

  static std::string stake_account(NodeId id) { return "stake/" + std::to_string(id); }
  static std::string wallet_account(NodeId id) { return "wallet/" + std::to_string(id); }

 private:
  std::map<std::string, std::int64_t> balances_;
};

// --- signatures -------------------------------------------------------------

// Deterministic keyed-hash signature stand-in.  Verification recomputes from
// the public key; the unforgeability contract holds by construction because
// nothing in the simulator signs under an identity it does not own.
struct SigningKeypair {
  Digest secret{};
  Digest public_key{};

  static SigningKeypair from_seed(const Digest& seed);
};

struct Signature {
  NodeId signer = 0;
  Digest message_digest{};
  Digest value{};

  bool operator==(const Signature&) const = default;
};

Signature sign(NodeId signer, const SigningKeypair& key, std::span<const Byte> message);
bool verify_signature(const Digest& public_key, std::span<const Byte> message,
                      const Signature& sig);

// --- registry ---------------------------------------------------------------

enum class NodeStatus { Active, Withdrawing, Exited };

struct LayerSlice {
  std::uint32_t lo = 0;  // 1-based, inclusive
  std::uint32_t hi = 0;

  bool operator==(const LayerSlice&) const = default;
};

struct NodeRecord {
  NodeId id = 0;
  Digest public_key{};
  std::string model_id;
  LayerSlice slice;
  std::string endpoint;
  std::int64_t stake = 0;  // mirrors the ledger's stake account
  NodeStatus status = NodeStatus::Active;
  std::uint64_t withdraw_round = 0;  // meaningful while withdrawing
};

struct RegistryConfig {
  std::int64_t min_stake = 100;
  std::uint64_t withdraw_period = 8;  // rounds between deregister and withdraw
  std::uint32_t k_min = 6;            // minimum verifier committee per slice
};

struct Group {
  LayerSlice slice;
  std::vector<NodeId> members;  // registry-insertion order
};

class Registry {
 public:
  Registry(TokenLedger& ledger, RegistryConfig config);

  void declare_model(const std::string& model_id, std::uint32_t layer_count);
  std::uint32_t model_layers(const std::string& model_id) const;

  // Stakes `stake` tokens from outside the system and activates the node.
  NodeId register_node(const Digest& public_key, const std::string& model_id, LayerSlice slice,
                       const std::string& endpoint, std::int64_t stake);

  std::uint64_t deregister(NodeId id);        // returns the withdrawal round
  std::int64_t withdraw(NodeId id);           // returns the amount released
  std::int64_t apply_penalty(NodeId id, std::int64_t amount);  // capped at stake

  std::uint64_t current_round() const { return round_; }
  void advance_round();

  const NodeRecord& node(NodeId id) const;
  bool is_active(NodeId id) const;
  std::size_t node_count() const { return nodes_.size(); }

  // Ordered pipeline groups for a model; validates exact contiguous cover.
  std::vector<Group> group_snapshot(const std::string& model_id) const;

  const RegistryConfig& config() const { return config_; }
  TokenLedger& ledger() { return ledger_; }
  const std::vector<nlohmann::json>& events() const { return events_; }

 private:
  void emit(nlohmann::json event);
  NodeRecord& node_mut(NodeId id);

  TokenLedger& ledger_;
  RegistryConfig config_;
  std::uint64_t round_ = 0;
  std::vector<NodeRecord> nodes_;
  std::map<std::string, std::uint32_t> models_;
  std::vector<nlohmann::json> events_;
};

}  // namespace vdi
