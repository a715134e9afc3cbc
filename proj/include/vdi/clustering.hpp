#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <vector>

#include "vdi/common.hpp"
#include "vdi/prng.hpp"

namespace vdi {

// One verifier's revealed opening vector, viewed as a point in the metric
// space the agreement game runs over.
struct Report {
  std::uint32_t verifier = 0;
  Eigen::VectorXd point;
  bool honest = true;  // simulation-only label; cluster() never reads it
};

// Mean absolute difference — the same scale e_mean lives on.
double mean_abs_distance(const Eigen::VectorXd& a, const Eigen::VectorXd& b);

struct ClusterOutcome {
  std::vector<std::vector<std::size_t>> clusters;  // partition of [0, n)
  std::optional<std::size_t> proper_cluster;       // index into clusters, |C| >= quorum
  std::vector<std::size_t> accepted;               // == proper cluster members (or empty)
  bool inferencer_accepted = false;
};

// Single-linkage components at threshold 2*delta: i and j share a cluster
// iff a chain of pairwise distances <= 2*delta links them.  Union-find over
// distance-sorted edges, stopping past the threshold; only components are
// needed, so the tree itself is never materialized.  The inferencer is
// accepted iff a proper cluster exists and its value lies within 2*delta of
// at least one member.
ClusterOutcome cluster(const std::vector<Report>& reports, double delta, std::size_t quorum,
                       const std::optional<Eigen::VectorXd>& inferencer_point = std::nullopt);

// Parameters of the agreement game.
struct GameParams {
  std::uint32_t n = 6;       // committee size
  std::uint32_t q = 4;       // quorum, must exceed n/2
  double delta = 1.0;        // agreement radius
  double eps1 = 0.01;        // honest-noise escape probability
  double eps2 = 0.01;        // dishonest lucky-guess probability
  double r = 0.8;            // honest population rate
  double cost = 1.0;         // verification cost (payoff accounting only)

  void validate() const;  // throws Error on q <= n/2 or out-of-range rates
};

// (1 - eps1) * sum_{k=q-1}^{n-1} C(n-1,k) p^k (1-p)^{n-1-k},  p = (1-eps1) r.
double honest_accept_lower_bound(const GameParams& params);

struct DishonestBound {
  double p_d1 = 0;  // lucky guess into B(x, 3*delta)
  double p_d2 = 0;  // quorum of honest verifiers fails to form
  double p_d3 = 0;  // some cluster member is itself out of place
  double total = 0;  // union bound
};

DishonestBound dishonest_accept_upper_bound(const GameParams& params);

enum class AdversaryPolicy { kRandomGuess, kCollude };

struct RoundResult {
  std::vector<bool> honest;    // committee honesty draw (index 0 == v1)
  std::vector<bool> accepted;  // in the proper cluster?
  bool consensus = false;      // a proper cluster formed
  bool inferencer_accepted = false;
};

// One synthetic round over a 1-D geometry around the true value x = 0:
// honest reports land in B(x, delta) with probability 1-eps1 and otherwise
// in the [delta, 4*delta) shell; random-guess adversaries land in B(x,
// 3*delta) with probability eps2 and otherwise in [3*delta, 10*delta);
// colluders all report a common point at 6*delta.  force_v1_honest pins
// verifier 0's role so conditional acceptance rates can be estimated.
RoundResult simulate_round(const GameParams& params, AdversaryPolicy policy, CounterPrng& rng,
                           std::optional<bool> force_v1_honest = std::nullopt);

}  // namespace vdi
