#include "vdi/identity.hpp"

#include <algorithm>

namespace vdi {

void TokenLedger::transfer(const std::string& from, const std::string& to, std::int64_t amount) {
  if (amount < 0) throw Error("negative transfer");
  if (from != "external" && balances_[from] < amount) {
    throw Error("insufficient funds in " + from);
  }
  balances_[from] -= amount;
  balances_[to] += amount;
}

std::int64_t TokenLedger::balance(const std::string& account) const {
  auto it = balances_.find(account);
  return it == balances_.end() ? 0 : it->second;
}

std::int64_t TokenLedger::sum_all() const {
  std::int64_t total = 0;
  for (const auto& [name, bal] : balances_) total += bal;
  return total;
}

SigningKeypair SigningKeypair::from_seed(const Digest& seed) {
  SigningKeypair kp;
  kp.secret = seed;
  Hasher h;
  h.update(tag::kSigPk).update(seed);
  kp.public_key = h.finish();
  return kp;
}

Signature sign(NodeId signer, const SigningKeypair& key, std::span<const Byte> message) {
  Signature sig;
  sig.signer = signer;
  sig.message_digest = sha256(message);
  Hasher h;
  h.update(tag::kSig).update(key.public_key).update(sig.message_digest);
  sig.value = h.finish();
  return sig;
}

bool verify_signature(const Digest& public_key, std::span<const Byte> message,
                      const Signature& sig) {
  if (sha256(message) != sig.message_digest) return false;
  Hasher h;
  h.update(tag::kSig).update(public_key).update(sig.message_digest);
  return h.finish() == sig.value;
}

Registry::Registry(TokenLedger& ledger, RegistryConfig config)
    : ledger_(ledger), config_(config) {}

void Registry::emit(nlohmann::json event) {
  event["round"] = round_;
  events_.push_back(std::move(event));
}

void Registry::declare_model(const std::string& model_id, std::uint32_t layer_count) {
  if (layer_count == 0) throw Error("model must have at least one layer");
  models_[model_id] = layer_count;
  emit({{"kind", "declare_model"}, {"model", model_id}, {"layers", layer_count}});
}

std::uint32_t Registry::model_layers(const std::string& model_id) const {
  auto it = models_.find(model_id);
  if (it == models_.end()) throw UncoveredSlice("unknown model " + model_id);
  return it->second;
}

NodeId Registry::register_node(const Digest& public_key, const std::string& model_id,
                               LayerSlice slice, const std::string& endpoint,
                               std::int64_t stake) {
  if (stake < config_.min_stake) throw InsufficientStake();
  if (slice.lo > slice.hi) throw Error("slice range is empty");
  for (const NodeRecord& n : nodes_) {
    if (n.public_key == public_key) throw DuplicateKey();
  }
  NodeRecord rec;
  rec.id = static_cast<NodeId>(nodes_.size());
  rec.public_key = public_key;
  rec.model_id = model_id;
  rec.slice = slice;
  rec.endpoint = endpoint;
  rec.stake = stake;
  rec.status = NodeStatus::Active;
  ledger_.transfer("external", TokenLedger::stake_account(rec.id), stake);
  nodes_.push_back(rec);
  emit({{"kind", "register"},
        {"node", rec.id},
        {"model", model_id},
        {"slice", {slice.lo, slice.hi}},
        {"stake", stake},
        {"key", hex_encode(public_key)}});
  return rec.id;
}

std::uint64_t Registry::deregister(NodeId id) {
  NodeRecord& rec = node_mut(id);
  if (rec.status != NodeStatus::Active) throw NotActive();
  rec.status = NodeStatus::Withdrawing;
  rec.withdraw_round = round_ + config_.withdraw_period;
  emit({{"kind", "deregister"}, {"node", id}, {"withdraw_round", rec.withdraw_round}});
  return rec.withdraw_round;
}

std::int64_t Registry::withdraw(NodeId id) {
  NodeRecord& rec = node_mut(id);
  if (rec.status != NodeStatus::Withdrawing) throw NotActive("node is not withdrawing");
  if (round_ < rec.withdraw_round) throw WithdrawalLocked();
  // The ledger is authoritative: the contract may have slashed this stake
  // account directly since registration.
  const std::int64_t amount = ledger_.balance(TokenLedger::stake_account(id));
  if (amount > 0)
    ledger_.transfer(TokenLedger::stake_account(id), TokenLedger::wallet_account(id), amount);
  rec.stake = 0;
  rec.status = NodeStatus::Exited;
  emit({{"kind", "withdraw"}, {"node", id}, {"amount", amount}});
  return amount;
}

std::int64_t Registry::apply_penalty(NodeId id, std::int64_t amount) {
  NodeRecord& rec = node_mut(id);
  if (rec.status == NodeStatus::Exited) throw NotActive("node already exited");
  const std::int64_t applied =
      std::min(amount, ledger_.balance(TokenLedger::stake_account(id)));
  ledger_.transfer(TokenLedger::stake_account(id), "treasury", applied);
  rec.stake -= applied;
  emit({{"kind", "penalty"}, {"node", id}, {"amount", applied}});
  return applied;
}

void Registry::advance_round() {
  ++round_;
  emit({{"kind", "advance_round"}});
}

const NodeRecord& Registry::node(NodeId id) const {
  if (id >= nodes_.size()) throw UnknownNode("node " + std::to_string(id));
  return nodes_[id];
}

NodeRecord& Registry::node_mut(NodeId id) {
  if (id >= nodes_.size()) throw UnknownNode("node " + std::to_string(id));
  return nodes_[id];
}

bool Registry::is_active(NodeId id) const { return node(id).status == NodeStatus::Active; }

std::vector<Group> Registry::group_snapshot(const std::string& model_id) const {
  const std::uint32_t layers = model_layers(model_id);

  std::vector<Group> groups;
  for (const NodeRecord& n : nodes_) {
    if (n.model_id != model_id || n.status != NodeStatus::Active) continue;
    auto it = std::find_if(groups.begin(), groups.end(),
                           [&](const Group& g) { return g.slice == n.slice; });
    if (it == groups.end()) {
      groups.push_back({n.slice, {n.id}});
    } else {
      it->members.push_back(n.id);
    }
  }
  std::sort(groups.begin(), groups.end(),
            [](const Group& a, const Group& b) { return a.slice.lo < b.slice.lo; });

  // Slices must tile [1, layers] exactly: no gaps, no overlaps.
  std::uint32_t expect = 1;
  for (const Group& g : groups) {
    if (g.slice.lo != expect) {
      throw UncoveredSlice("slice cover breaks at layer " + std::to_string(expect));
    }
    expect = g.slice.hi + 1;
  }
  if (expect != layers + 1) {
    throw UncoveredSlice("layers " + std::to_string(expect) + ".." + std::to_string(layers) +
                         " uncovered");
  }
  for (const Group& g : groups) {
    if (g.members.size() < static_cast<std::size_t>(config_.k_min) + 1) {
      throw InsufficientGroupSize("slice [" + std::to_string(g.slice.lo) + "," +
                                  std::to_string(g.slice.hi) + "] has " +
                                  std::to_string(g.members.size()) + " nodes");
    }
  }
  return groups;
}

}  // namespace vdi
