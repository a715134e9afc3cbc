// Token ledger conservation, signature stand-in, and the staking registry.

#include <doctest.h>

#include <cstdint>
#include <string>
#include <vector>

#include "vdi/common.hpp"
#include "vdi/identity.hpp"
#include "vdi/prng.hpp"

using namespace vdi;

namespace {

struct RegistryFixture {
  TokenLedger ledger;
  RegistryConfig config{100, 8, 2};  // min_stake, withdraw_period, k_min
  Registry registry{ledger, config};

  RegistryFixture() { registry.declare_model("m", 4); }

  NodeId add(std::uint64_t seed, LayerSlice slice, std::int64_t stake = 100) {
    return registry.register_node(seed_digest(seed), "m", slice, "node://", stake);
  }
};

}  // namespace

TEST_SUITE("identity") {

TEST_CASE("ledger transfers conserve to zero and reject bad amounts") {
  TokenLedger ledger;
  CHECK(ledger.balance("anyone") == 0);
  ledger.transfer("external", "wallet/1", 50);
  ledger.transfer("wallet/1", "stake/1", 30);
  CHECK(ledger.balance("wallet/1") == 20);
  CHECK(ledger.balance("stake/1") == 30);
  CHECK(ledger.balance("external") == -50);
  CHECK(ledger.sum_all() == 0);

  CHECK_THROWS_AS(ledger.transfer("wallet/1", "stake/1", -5), Error);
  CHECK_THROWS_AS(ledger.transfer("wallet/1", "stake/1", 21), Error);  // overdraft
  // External absorbs arbitrary outflow (it is the system boundary).
  ledger.transfer("external", "wallet/2", 1000000);
  CHECK(ledger.sum_all() == 0);
}

TEST_CASE("ledger conservation holds under a random op fuzz") {
  TokenLedger ledger;
  CounterPrng rng(seed_digest(17), "tests/ledger-fuzz");
  const std::vector<std::string> accounts{"external", "wallet/1", "wallet/2", "stake/1",
                                          "stake/2",  "treasury", "escrow/9"};
  int applied = 0;
  for (int i = 0; i < 2000; ++i) {
    const std::string& from = accounts[rng.uniform(accounts.size())];
    const std::string& to = accounts[rng.uniform(accounts.size())];
    const auto amount = static_cast<std::int64_t>(rng.uniform(200));
    try {
      ledger.transfer(from, to, amount);
      ++applied;
    } catch (const Error&) {
      // Overdrafts are expected; conservation must survive them too.
    }
    REQUIRE(ledger.sum_all() == 0);
  }
  CHECK(applied > 0);
}

TEST_CASE("signatures verify and reject tampering") {
  const SigningKeypair key = SigningKeypair::from_seed(seed_digest(1));
  const Bytes msg = to_bytes("pay the verifier");
  const Signature sig = sign(4, key, msg);
  CHECK(sig.signer == 4);
  CHECK(verify_signature(key.public_key, msg, sig));
  CHECK(sign(4, key, msg) == sig);  // deterministic

  const SigningKeypair other = SigningKeypair::from_seed(seed_digest(2));
  CHECK_FALSE(verify_signature(other.public_key, msg, sig));
  Bytes altered = msg;
  altered[0] ^= 1;
  CHECK_FALSE(verify_signature(key.public_key, altered, sig));
  Signature forged = sig;
  forged.value[3] ^= 0x80;
  CHECK_FALSE(verify_signature(key.public_key, msg, forged));
  Signature wrong_digest = sig;
  wrong_digest.message_digest[0] ^= 1;
  CHECK_FALSE(verify_signature(key.public_key, msg, wrong_digest));
}

TEST_CASE("registration stakes tokens and validates inputs") {
  RegistryFixture f;
  const NodeId id = f.add(1, {1, 2}, 150);
  CHECK(f.ledger.balance(TokenLedger::stake_account(id)) == 150);
  CHECK(f.registry.node(id).stake == 150);
  CHECK(f.registry.is_active(id));
  CHECK(f.ledger.sum_all() == 0);

  CHECK_THROWS_AS(f.add(2, {1, 2}, 99), InsufficientStake);
  CHECK_THROWS_AS(f.add(1, {1, 2}, 150), DuplicateKey);  // same public key
  CHECK_THROWS_AS(f.registry.register_node(seed_digest(3), "m", {3, 2}, "e", 100), Error);
  CHECK_THROWS_AS(f.registry.node(99), UnknownNode);
}

TEST_CASE("group snapshot demands an exact contiguous cover with deep groups") {
  RegistryFixture f;
  // Slice [1,2] gets k_min+1 = 3 nodes; [3,4] starts underpopulated.
  f.add(10, {1, 2});
  f.add(11, {1, 2});
  f.add(12, {1, 2});
  CHECK_THROWS_AS(f.registry.group_snapshot("m"), UncoveredSlice);  // [3,4] missing

  f.add(20, {3, 4});
  f.add(21, {3, 4});
  CHECK_THROWS_AS(f.registry.group_snapshot("m"), InsufficientGroupSize);  // 2 < 3

  f.add(22, {3, 4});
  const std::vector<Group> groups = f.registry.group_snapshot("m");
  REQUIRE(groups.size() == 2);
  CHECK(groups[0].slice == LayerSlice{1, 2});
  CHECK(groups[1].slice == LayerSlice{3, 4});
  CHECK(groups[0].members.size() == 3);
  CHECK(groups[1].members.size() == 3);

  // Overlap breaks the tiling.
  f.add(30, {2, 3});
  CHECK_THROWS_AS(f.registry.group_snapshot("m"), UncoveredSlice);
  CHECK_THROWS_AS(f.registry.group_snapshot("nope"), UncoveredSlice);  // unknown model
}

TEST_CASE("withdrawal is locked for the full period and pays the ledger truth") {
  RegistryFixture f;
  const NodeId id = f.add(1, {1, 4}, 200);
  CHECK_THROWS_AS(f.registry.withdraw(id), NotActive);  // not deregistered yet

  const std::uint64_t release = f.registry.deregister(id);
  CHECK(release == f.registry.current_round() + f.config.withdraw_period);
  CHECK_FALSE(f.registry.is_active(id));
  CHECK_THROWS_AS(f.registry.deregister(id), NotActive);  // double deregister

  for (std::uint64_t r = f.registry.current_round(); r < release; ++r) {
    CHECK_THROWS_AS(f.registry.withdraw(id), WithdrawalLocked);
    f.registry.advance_round();
  }

  // A penalty landed during the lock: the ledger is authoritative.
  f.registry.apply_penalty(id, 60);
  const std::int64_t released = f.registry.withdraw(id);
  CHECK(released == 140);
  CHECK(f.ledger.balance(TokenLedger::wallet_account(id)) == 140);
  CHECK(f.ledger.balance(TokenLedger::stake_account(id)) == 0);
  CHECK(f.ledger.balance("treasury") == 60);
  CHECK(f.ledger.sum_all() == 0);

  CHECK_THROWS_AS(f.registry.withdraw(id), NotActive);       // already exited
  CHECK_THROWS_AS(f.registry.apply_penalty(id, 5), NotActive);
}

TEST_CASE("penalties cap at the remaining stake") {
  RegistryFixture f;
  const NodeId id = f.add(1, {1, 4}, 120);
  CHECK(f.registry.apply_penalty(id, 80) == 80);
  CHECK(f.registry.apply_penalty(id, 80) == 40);  // only 40 left
  CHECK(f.registry.apply_penalty(id, 80) == 0);
  CHECK(f.registry.node(id).stake == 0);
  CHECK(f.ledger.balance("treasury") == 120);
  CHECK(f.ledger.sum_all() == 0);
}

TEST_CASE("registry emits an append-only event stream") {
  RegistryFixture f;
  const std::size_t base = f.registry.events().size();
  f.add(1, {1, 4});
  CHECK(f.registry.events().size() == base + 1);
  CHECK(f.registry.events().back().at("kind") == "register");
  f.registry.advance_round();
  CHECK(f.registry.events().back().at("kind") == "advance_round");
}

}  // TEST_SUITE
