#include "vdi/clustering.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace vdi {

double mean_abs_distance(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  if (a.size() != b.size())
    throw DimensionMismatch("points of size " + std::to_string(a.size()) + " and " +
                            std::to_string(b.size()));
  if (a.size() == 0) return 0.0;
  return (a - b).cwiseAbs().mean();
}

namespace {

struct UnionFind {
  std::vector<std::size_t> parent;

  explicit UnionFind(std::size_t n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }

  std::size_t find(std::size_t i) {
    while (parent[i] != i) {
      parent[i] = parent[parent[i]];
      i = parent[i];
    }
    return i;
  }

  void unite(std::size_t a, std::size_t b) { parent[find(a)] = find(b); }
};

}  // namespace

ClusterOutcome cluster(const std::vector<Report>& reports, double delta, std::size_t quorum,
                       const std::optional<Eigen::VectorXd>& inferencer_point) {
  const std::size_t n = reports.size();
  ClusterOutcome outcome;
  if (n == 0) return outcome;

  struct Edge {
    double dist;
    std::size_t a, b;
  };
  std::vector<Edge> edges;
  edges.reserve(n * (n - 1) / 2);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      edges.push_back({mean_abs_distance(reports[i].point, reports[j].point), i, j});
  std::sort(edges.begin(), edges.end(),
            [](const Edge& x, const Edge& y) { return x.dist < y.dist; });

  UnionFind uf(n);
  for (const Edge& e : edges) {
    if (e.dist > 2.0 * delta) break;  // Kruskal cut-off: longer edges never merge
    uf.unite(e.a, e.b);
  }

  std::vector<std::vector<std::size_t>> by_root(n);
  for (std::size_t i = 0; i < n; ++i) by_root[uf.find(i)].push_back(i);
  for (auto& members : by_root)
    if (!members.empty()) outcome.clusters.push_back(std::move(members));
  std::sort(outcome.clusters.begin(), outcome.clusters.end());

  for (std::size_t c = 0; c < outcome.clusters.size(); ++c) {
    if (outcome.clusters[c].size() >= quorum) {
      outcome.proper_cluster = c;  // unique when quorum > n/2
      outcome.accepted = outcome.clusters[c];
      break;
    }
  }

  if (inferencer_point && outcome.proper_cluster) {
    for (std::size_t member : outcome.accepted) {
      if (mean_abs_distance(reports[member].point, *inferencer_point) <= 2.0 * delta) {
        outcome.inferencer_accepted = true;
        break;
      }
    }
  }
  return outcome;
}

void GameParams::validate() const {
  if (n == 0) throw Error("GameParams: empty committee");
  if (q <= n / 2) throw Error("GameParams: quorum must exceed n/2");
  if (q > n) throw Error("GameParams: quorum larger than committee");
  auto unit = [](double v) { return v >= 0.0 && v <= 1.0; };
  if (!unit(eps1) || !unit(eps2) || !unit(r))
    throw Error("GameParams: eps1, eps2, r must lie in [0,1]");
  if (delta <= 0.0) throw Error("GameParams: delta must be positive");
}

namespace {

double binomial_coefficient(std::uint32_t n, std::uint32_t k) {
  if (k > n) return 0.0;
  k = std::min(k, n - k);
  double c = 1.0;
  for (std::uint32_t i = 1; i <= k; ++i) c = c * (n - k + i) / i;
  return c;
}

double binomial_tail(std::uint32_t trials, double p, std::uint32_t lo, std::uint32_t hi) {
  double sum = 0.0;
  for (std::uint32_t k = lo; k <= hi && k <= trials; ++k)
    sum += binomial_coefficient(trials, k) * std::pow(p, k) *
           std::pow(1.0 - p, static_cast<double>(trials - k));
  return sum;
}

}  // namespace

double honest_accept_lower_bound(const GameParams& params) {
  params.validate();
  const double p_in = (1.0 - params.eps1) * params.r;
  return (1.0 - params.eps1) * binomial_tail(params.n - 1, p_in, params.q - 1, params.n - 1);
}

DishonestBound dishonest_accept_upper_bound(const GameParams& params) {
  params.validate();
  const double p_in = (1.0 - params.eps1) * params.r;
  DishonestBound b;
  b.p_d1 = params.eps2;
  b.p_d2 = binomial_tail(params.n - 1, p_in, 0, params.n - params.q);
  b.p_d3 = params.eps2 +
           (params.n - 1) * (params.eps1 * params.r + params.eps2 * (1.0 - params.r));
  b.total = b.p_d1 + b.p_d2 + b.p_d3;
  return b;
}

RoundResult simulate_round(const GameParams& params, AdversaryPolicy policy, CounterPrng& rng,
                           std::optional<bool> force_v1_honest) {
  params.validate();
  const double d = params.delta;
  RoundResult result;
  result.honest.resize(params.n);
  result.accepted.assign(params.n, false);

  std::vector<Report> reports(params.n);
  for (std::uint32_t i = 0; i < params.n; ++i) {
    bool honest = rng.next_bool(params.r);
    if (i == 0 && force_v1_honest) honest = *force_v1_honest;
    result.honest[i] = honest;
    double value = 0.0;
    if (honest) {
      if (rng.next_bool(1.0 - params.eps1)) {
        value = rng.uniform_real(-d, d);
      } else {
        double mag = rng.uniform_real(d, 4.0 * d);
        value = rng.next_bool(0.5) ? mag : -mag;
      }
    } else if (policy == AdversaryPolicy::kCollude) {
      value = 6.0 * d;
    } else {
      if (rng.next_bool(params.eps2)) {
        value = rng.uniform_real(-3.0 * d, 3.0 * d);
      } else {
        double mag = rng.uniform_real(3.0 * d, 10.0 * d);
        value = rng.next_bool(0.5) ? mag : -mag;
      }
    }
    reports[i].verifier = i;
    reports[i].honest = honest;
    reports[i].point = Eigen::VectorXd::Constant(1, value);
  }

  ClusterOutcome outcome =
      cluster(reports, d, params.q, Eigen::VectorXd::Zero(1));
  result.consensus = outcome.proper_cluster.has_value();
  result.inferencer_accepted = outcome.inferencer_accepted;
  for (std::size_t member : outcome.accepted) result.accepted[member] = true;
  return result;
}

}  // namespace vdi
