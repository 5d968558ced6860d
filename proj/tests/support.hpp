#pragma once

// Random instance builders and brute-force oracles shared by the test suites.
// The oracles deliberately avoid the library's enumeration and inference code.

#include <cmath>
#include <random>
#include <vector>

#include "lscrf/lscrf.hpp"

namespace testing_support {

using namespace lscrf;

inline Graph random_forest(int m, std::mt19937_64& rng, double attach_probability = 0.85) {
  std::vector<Edge> edges;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int v = 1; v < m; ++v)
    if (u(rng) < attach_probability) edges.push_back({std::uniform_int_distribution<int>(0, v - 1)(rng), v});
  return Graph(m, std::move(edges));
}

inline Graph random_tree(int m, std::mt19937_64& rng) { return random_forest(m, rng, 1.0); }

inline Graph grid(int h, int w) { return grid_graph(h, w); }

/// Random graph with cycles: a spanning tree plus `extra` chords.
inline Graph random_loopy(int m, int extra, std::mt19937_64& rng) {
  std::vector<Edge> edges;
  std::vector<std::vector<bool>> used(m, std::vector<bool>(m, false));
  for (int v = 1; v < m; ++v) {
    const int p = std::uniform_int_distribution<int>(0, v - 1)(rng);
    edges.push_back({p, v});
    used[p][v] = true;
  }
  std::uniform_int_distribution<int> node(0, m - 1);
  for (int tries = 0; extra > 0 && tries < 1000; ++tries) {
    int a = node(rng), b = node(rng);
    if (a == b) continue;
    if (a > b) std::swap(a, b);
    if (used[a][b]) continue;
    used[a][b] = true;
    edges.push_back({a, b});
    --extra;
  }
  return Graph(m, std::move(edges));
}

inline EnergyFunction random_energy(const Graph& g, int r, std::mt19937_64& rng, double scale = 1.0) {
  auto e = EnergyFunction::zeros(g, r);
  std::normal_distribution<double> n(0.0, scale);
  for (auto& v : e.unary) v = n(rng);
  for (auto& v : e.pairwise) v = n(rng);
  return e;
}

/// Every labeling of m nodes with r labels, node 0 varying slowest.
inline std::vector<Labeling> all_labelings(int m, int r) {
  std::vector<Labeling> out;
  Labeling y(m, 0);
  while (true) {
    out.push_back(y);
    int s = m - 1;
    while (s >= 0 && ++y[s] == r) y[s--] = 0;
    if (s < 0) break;
  }
  return out;
}

inline double brute_energy(const EnergyFunction& e, const Labeling& y) {
  double total = 0.0;
  for (int s = 0; s < e.num_nodes(); ++s) total += e.unary[s * e.num_labels + y[s]];
  for (int k = 0; k < e.num_edges(); ++k) {
    const auto ed = e.graph.edges()[k];
    total += e.pairwise[(k * e.num_labels + y[ed.s]) * e.num_labels + y[ed.t]];
  }
  return total;
}

struct BruteForce {
  double log_z = 0.0;
  double min_energy = 0.0;
  MarginalTables marginals;
  std::vector<double> probabilities;  // aligned with all_labelings
};

inline BruteForce brute_force(const EnergyFunction& e) {
  const auto ys = all_labelings(e.num_nodes(), e.num_labels);
  BruteForce out;
  std::vector<double> energies;
  out.min_energy = INFINITY;
  for (const auto& y : ys) {
    energies.push_back(brute_energy(e, y));
    out.min_energy = std::min(out.min_energy, energies.back());
  }
  double z = 0.0;
  for (double v : energies) z += std::exp(out.min_energy - v);
  out.log_z = std::log(z) - out.min_energy;
  const int r = e.num_labels;
  out.marginals.num_labels = r;
  out.marginals.unary.assign(static_cast<std::size_t>(e.num_nodes()) * r, 0.0);
  out.marginals.pairwise.assign(static_cast<std::size_t>(e.num_edges()) * r * r, 0.0);
  for (std::size_t i = 0; i < ys.size(); ++i) {
    const double p = std::exp(-energies[i] - out.log_z);
    out.probabilities.push_back(p);
    for (int s = 0; s < e.num_nodes(); ++s) out.marginals.unary[s * r + ys[i][s]] += p;
    for (int k = 0; k < e.num_edges(); ++k) {
      const auto ed = e.graph.edges()[k];
      out.marginals.pairwise[(k * r + ys[i][ed.s]) * r + ys[i][ed.t]] += p;
    }
  }
  return out;
}

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return a.size() == b.size() ? m : INFINITY;
}

inline Instance make_instance(const Graph& g, int node_dim, int edge_dim, std::mt19937_64& rng) {
  Instance inst;
  inst.id = "x";
  inst.graph = g;
  std::normal_distribution<double> n(0.0, 1.0);
  inst.node_features = FeatureMatrix(g.num_nodes(), node_dim);
  for (Eigen::Index i = 0; i < inst.node_features.size(); ++i) inst.node_features.data()[i] = n(rng);
  inst.edge_features = FeatureMatrix(g.num_edges(), edge_dim);
  for (Eigen::Index i = 0; i < inst.edge_features.size(); ++i) inst.edge_features.data()[i] = n(rng);
  return inst;
}

}  // namespace testing_support
