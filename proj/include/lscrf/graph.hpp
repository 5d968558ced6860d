#pragma once

// Graph, labeling and energy data model; empirical marginals and the
// closed-form maximum-likelihood estimate for tree-structured models.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include <Eigen/Core>

#include "lscrf/error.hpp"

namespace lscrf {

using Labeling = std::vector<int>;
using FeatureMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct Edge {
  int s = 0;
  int t = 0;
  friend bool operator==(const Edge&, const Edge&) = default;
};

/// Undirected graph with canonical edges (s < t). Edge order is preserved
/// because per-edge data (features, tables) is indexed by it.
class Graph {
 public:
  struct Incidence {
    int neighbor;
    int edge;
    bool is_source;  // this node is edge.s
  };

  Graph() = default;

  Graph(int num_nodes, std::vector<Edge> edges) : num_nodes_(num_nodes), edges_(std::move(edges)) {
    if (num_nodes_ < 0) throw GraphError("negative node count");
    std::unordered_set<std::uint64_t> seen;
    seen.reserve(edges_.size() * 2);
    for (const auto& e : edges_) {
      if (e.s < 0 || e.t >= num_nodes_ || e.t < 0 || e.s >= num_nodes_)
        throw GraphError("edge (" + std::to_string(e.s) + "," + std::to_string(e.t) +
                         ") references a node outside [0," + std::to_string(num_nodes_) + ")");
      if (e.s == e.t) throw GraphError("self-loop on node " + std::to_string(e.s));
      if (e.s > e.t)
        throw GraphError("edge (" + std::to_string(e.s) + "," + std::to_string(e.t) +
                         ") is not in canonical s < t orientation");
      const auto key = (static_cast<std::uint64_t>(e.s) << 32) | static_cast<std::uint32_t>(e.t);
      if (!seen.insert(key).second)
        throw GraphError("duplicate edge (" + std::to_string(e.s) + "," + std::to_string(e.t) + ")");
    }
    offsets_.assign(num_nodes_ + 1, 0);
    for (const auto& e : edges_) {
      ++offsets_[e.s + 1];
      ++offsets_[e.t + 1];
    }
    std::partial_sum(offsets_.begin(), offsets_.end(), offsets_.begin());
    incidences_.resize(edges_.size() * 2);
    std::vector<int> fill(offsets_.begin(), offsets_.end() - 1);
    for (int k = 0; k < static_cast<int>(edges_.size()); ++k) {
      const auto& e = edges_[k];
      incidences_[fill[e.s]++] = {e.t, k, true};
      incidences_[fill[e.t]++] = {e.s, k, false};
    }
  }

  int num_nodes() const noexcept { return num_nodes_; }
  int num_edges() const noexcept { return static_cast<int>(edges_.size()); }
  const std::vector<Edge>& edges() const noexcept { return edges_; }
  const Edge& edge(int k) const { return edges_[k]; }

  std::span<const Incidence> incident(int node) const {
    return {incidences_.data() + offsets_[node], incidences_.data() + offsets_[node + 1]};
  }
  int degree(int node) const { return offsets_[node + 1] - offsets_[node]; }

  friend bool operator==(const Graph& a, const Graph& b) {
    return a.num_nodes_ == b.num_nodes_ && a.edges_ == b.edges_;
  }

 private:
  int num_nodes_ = 0;
  std::vector<Edge> edges_;
  std::vector<int> offsets_{0};
  std::vector<Incidence> incidences_;
};

/// True iff the graph has no cycle (a forest; every component is a tree).
inline bool is_tree(const Graph& graph) {
  std::vector<int> parent(graph.num_nodes());
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](int x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };
  for (const auto& e : graph.edges()) {
    const int a = find(e.s), b = find(e.t);
    if (a == b) return false;
    parent[a] = b;
  }
  return true;
}

/// One attributed graph: node and edge feature rows plus optional ground truth.
struct Instance {
  std::string id;
  Graph graph;
  FeatureMatrix node_features;  // num_nodes x D_node
  FeatureMatrix edge_features;  // num_edges x D_edge
  std::optional<Labeling> labels;

  void validate(int num_labels = 0) const {
    if (node_features.rows() != graph.num_nodes())
      throw Error("instance '" + id + "': node feature rows != node count");
    if (edge_features.rows() != graph.num_edges())
      throw Error("instance '" + id + "': edge feature rows != edge count");
    if (labels) {
      if (static_cast<int>(labels->size()) != graph.num_nodes())
        throw Error("instance '" + id + "': label count != node count");
      if (num_labels > 0)
        for (int y : *labels)
          if (y < 0 || y >= num_labels) throw Error("instance '" + id + "': label out of range");
    }
  }
};

inline void check_labeling(const Labeling& y, int num_nodes, int num_labels) {
  if (static_cast<int>(y.size()) != num_nodes)
    throw Error("labeling has " + std::to_string(y.size()) + " entries, expected " +
                std::to_string(num_nodes));
  for (int v : y)
    if (v < 0 || v >= num_labels) throw Error("label " + std::to_string(v) + " out of range");
}

/// Unary (m x r) and pairwise (|E| x r x r) label marginals, row-major.
struct MarginalTables {
  int num_labels = 0;
  std::vector<double> unary;
  std::vector<double> pairwise;

  int num_nodes() const { return num_labels ? static_cast<int>(unary.size()) / num_labels : 0; }
  int num_edges() const {
    return num_labels ? static_cast<int>(pairwise.size()) / (num_labels * num_labels) : 0;
  }
  double node(int s, int j) const { return unary[static_cast<std::size_t>(s) * num_labels + j]; }
  double edge(int e, int j, int k) const {
    return pairwise[(static_cast<std::size_t>(e) * num_labels + j) * num_labels + k];
  }
};

/// E(y) = sum_s unary[s][y_s] + sum_(s,t) pairwise[e][y_s][y_t]; P(y) is
/// proportional to exp(-E(y)), so lower energy means higher probability.
struct EnergyFunction {
  Graph graph;
  int num_labels = 0;
  std::vector<double> unary;
  std::vector<double> pairwise;

  static EnergyFunction zeros(Graph graph, int num_labels) {
    if (num_labels < 1) throw Error("need at least one label");
    EnergyFunction e;
    e.unary.assign(static_cast<std::size_t>(graph.num_nodes()) * num_labels, 0.0);
    e.pairwise.assign(static_cast<std::size_t>(graph.num_edges()) * num_labels * num_labels, 0.0);
    e.graph = std::move(graph);
    e.num_labels = num_labels;
    return e;
  }

  int num_nodes() const { return graph.num_nodes(); }
  int num_edges() const { return graph.num_edges(); }

  double& node(int s, int j) { return unary[static_cast<std::size_t>(s) * num_labels + j]; }
  double node(int s, int j) const { return unary[static_cast<std::size_t>(s) * num_labels + j]; }
  double& edge(int e, int j, int k) {
    return pairwise[(static_cast<std::size_t>(e) * num_labels + j) * num_labels + k];
  }
  double edge(int e, int j, int k) const {
    return pairwise[(static_cast<std::size_t>(e) * num_labels + j) * num_labels + k];
  }
  /// Pairwise entry seen from `node`: (label of node, label of neighbor).
  double oriented(const Graph::Incidence& inc, int own, int other) const {
    return inc.is_source ? edge(inc.edge, own, other) : edge(inc.edge, other, own);
  }

  void validate() const {
    if (num_labels < 1) throw Error("energy function needs at least one label");
    if (unary.size() != static_cast<std::size_t>(num_nodes()) * num_labels ||
        pairwise.size() != static_cast<std::size_t>(num_edges()) * num_labels * num_labels)
      throw Error("energy table dimensions do not match the graph");
  }
};

/// Maximum number of labelings any enumeration routine will visit.
inline constexpr std::uint64_t kMaxEnumeration = std::uint64_t{1} << 20;

inline std::uint64_t state_space_size(int num_nodes, int num_labels) {
  std::uint64_t count = 1;
  for (int s = 0; s < num_nodes; ++s) {
    count *= static_cast<std::uint64_t>(num_labels);
    if (count > kMaxEnumeration) return kMaxEnumeration + 1;
  }
  return count;
}

/// Visits all r^m labelings in lexicographic order (node 0 most significant).
template <class Fn>
void for_each_labeling(int num_nodes, int num_labels, Fn&& fn) {
  if (state_space_size(num_nodes, num_labels) > kMaxEnumeration)
    throw Error("state space " + std::to_string(num_labels) + "^" + std::to_string(num_nodes) +
                " exceeds the enumeration guard of 2^20");
  Labeling y(num_nodes, 0);
  for (;;) {
    fn(static_cast<const Labeling&>(y));
    int pos = num_nodes - 1;
    while (pos >= 0 && ++y[pos] == num_labels) y[pos--] = 0;
    if (pos < 0) return;
  }
}

inline double energy_eval(const EnergyFunction& energy, const Labeling& y) {
  if (static_cast<int>(y.size()) != energy.num_nodes())
    throw Error("labeling size does not match the energy function");
  double total = 0.0;
  for (int s = 0; s < energy.num_nodes(); ++s) total += energy.node(s, y[s]);
  for (int e = 0; e < energy.num_edges(); ++e) {
    const auto& ed = energy.graph.edge(e);
    total += energy.edge(e, y[ed.s], y[ed.t]);
  }
  return total;
}

/// log sum_y exp(-E(y)) by exhaustive enumeration.
inline double exact_partition(const EnergyFunction& energy) {
  energy.validate();
  std::vector<double> neg;
  neg.reserve(state_space_size(energy.num_nodes(), energy.num_labels));
  for_each_labeling(energy.num_nodes(), energy.num_labels,
                    [&](const Labeling& y) { neg.push_back(-energy_eval(energy, y)); });
  const double top = *std::max_element(neg.begin(), neg.end());
  double sum = 0.0;
  for (double v : neg) sum += std::exp(v - top);
  return top + std::log(sum);
}

inline MarginalTables empirical_marginals(std::span<const Labeling> samples, const Graph& graph,
                                          int num_labels) {
  if (samples.empty()) throw Error("empirical_marginals: no samples");
  if (num_labels < 1) throw Error("empirical_marginals: need at least one label");
  const int m = graph.num_nodes(), r = num_labels;
  std::vector<std::uint64_t> unary_count(static_cast<std::size_t>(m) * r, 0);
  std::vector<std::uint64_t> pair_count(static_cast<std::size_t>(graph.num_edges()) * r * r, 0);
  for (const auto& y : samples) {
    check_labeling(y, m, r);
    for (int s = 0; s < m; ++s) ++unary_count[static_cast<std::size_t>(s) * r + y[s]];
    for (int e = 0; e < graph.num_edges(); ++e) {
      const auto& ed = graph.edge(e);
      ++pair_count[(static_cast<std::size_t>(e) * r + y[ed.s]) * r + y[ed.t]];
    }
  }
  // Counts are integers, so dividing each by T keeps the consistency sums exact up to rounding.
  const double total = static_cast<double>(samples.size());
  MarginalTables out;
  out.num_labels = r;
  out.unary.resize(unary_count.size());
  out.pairwise.resize(pair_count.size());
  for (std::size_t i = 0; i < unary_count.size(); ++i) out.unary[i] = unary_count[i] / total;
  for (std::size_t i = 0; i < pair_count.size(); ++i) out.pairwise[i] = pair_count[i] / total;
  return out;
}

/// Largest violation of normalization and marginalization constraints.
inline double marginal_inconsistency(const MarginalTables& mu, const Graph& graph) {
  const int r = mu.num_labels;
  double worst = 0.0;
  for (int s = 0; s < graph.num_nodes(); ++s) {
    double sum = 0.0;
    for (int j = 0; j < r; ++j) sum += mu.node(s, j);
    worst = std::max(worst, std::abs(sum - 1.0));
  }
  for (int e = 0; e < graph.num_edges(); ++e) {
    const auto& ed = graph.edge(e);
    for (int j = 0; j < r; ++j) {
      double row = 0.0, col = 0.0;
      for (int k = 0; k < r; ++k) {
        row += mu.edge(e, j, k);
        col += mu.edge(e, k, j);
      }
      worst = std::max({worst, std::abs(row - mu.node(ed.s, j)), std::abs(col - mu.node(ed.t, j))});
    }
  }
  return worst;
}

inline constexpr double kDefaultMarginalFloor = 1e-9;

/// Closed-form maximum-likelihood energy of a forest-structured model:
/// theta_s;j = -log mu_s;j and theta_st;jk = -log(mu_st;jk / (mu_s;j mu_t;k)),
/// with every marginal floored at `floor` first.
inline EnergyFunction tree_ml_params(const MarginalTables& mu, const Graph& graph,
                                     double floor = kDefaultMarginalFloor,
                                     double consistency_tolerance = 1e-9) {
  if (floor < 0.0) throw Error("tree_ml_params: floor must be non-negative");
  if (!is_tree(graph)) throw GraphError("tree_ml_params: graph has a cycle");
  if (mu.num_nodes() != graph.num_nodes() || mu.num_edges() != graph.num_edges())
    throw Error("tree_ml_params: marginal tables do not match the graph");
  if (const double bad = marginal_inconsistency(mu, graph); bad > consistency_tolerance)
    throw Error("tree_ml_params: marginals inconsistent (violation " + std::to_string(bad) + ")");

  const int r = mu.num_labels;
  auto floored = [floor](double v) { return std::max(v, floor); };
  auto energy = EnergyFunction::zeros(graph, r);
  for (int s = 0; s < graph.num_nodes(); ++s)
    for (int j = 0; j < r; ++j) energy.node(s, j) = -std::log(floored(mu.node(s, j)));
  for (int e = 0; e < graph.num_edges(); ++e) {
    const auto& ed = graph.edge(e);
    for (int j = 0; j < r; ++j)
      for (int k = 0; k < r; ++k)
        energy.edge(e, j, k) = -std::log(floored(mu.edge(e, j, k)) /
                                         (floored(mu.node(ed.s, j)) * floored(mu.node(ed.t, k))));
  }
  return energy;
}

}  // namespace lscrf
