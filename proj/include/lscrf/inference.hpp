#pragma once

// Exact and approximate inference over EnergyFunctions: sum-product and
// min-sum on forests, brute-force enumeration, ICM, sequential
// tree-reweighted message passing (TRW-S), and samplers.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <queue>
#include <random>
#include <vector>

#include "lscrf/graph.hpp"

namespace lscrf {

struct InferenceResult {
  Labeling labeling;
  double energy = 0.0;
  std::optional<double> lower_bound;
  int iterations = 0;
  // Lower bound after every iteration (TRW-S only).
  std::vector<double> bound_trace;
};

namespace detail {

inline double log_sum_exp(std::span<const double> v) {
  const double top = *std::max_element(v.begin(), v.end());
  if (!std::isfinite(top)) return top;
  double sum = 0.0;
  for (double x : v) sum += std::exp(x - top);
  return top + std::log(sum);
}

inline int argmin_first(std::span<const double> v) {
  return static_cast<int>(std::min_element(v.begin(), v.end()) - v.begin());
}

/// Breadth-first rooting of every tree in a forest, roots at the lowest index.
struct RootedForest {
  std::vector<int> order;        // parents precede children
  std::vector<int> parent;       // -1 for roots
  std::vector<int> parent_edge;  // -1 for roots
  std::vector<Graph::Incidence> up;  // incidence from child towards its parent
};

inline RootedForest root_forest(const Graph& graph) {
  if (!is_tree(graph)) throw GraphError("graph has a cycle; a forest is required");
  const int m = graph.num_nodes();
  RootedForest f;
  f.order.reserve(m);
  f.parent.assign(m, -1);
  f.parent_edge.assign(m, -1);
  f.up.resize(m);
  std::vector<char> seen(m, 0);
  std::queue<int> frontier;
  for (int root = 0; root < m; ++root) {
    if (seen[root]) continue;
    seen[root] = 1;
    frontier.push(root);
    while (!frontier.empty()) {
      const int s = frontier.front();
      frontier.pop();
      f.order.push_back(s);
      for (const auto& inc : graph.incident(s)) {
        if (seen[inc.neighbor]) continue;
        seen[inc.neighbor] = 1;
        f.parent[inc.neighbor] = s;
        f.parent_edge[inc.neighbor] = inc.edge;
        f.up[inc.neighbor] = {s, inc.edge, !inc.is_source};
        frontier.push(inc.neighbor);
      }
    }
  }
  return f;
}

/// Upward sum-product pass in log-potential space. inside[s][j] is -theta_s;j
/// plus the messages from all children of s; up[s] is the message s sends to
/// its parent, indexed by the parent's label.
struct UpwardPass {
  RootedForest forest;
  std::vector<double> inside;
  std::vector<double> up;
};

inline UpwardPass sum_product_up(const EnergyFunction& energy) {
  const int m = energy.num_nodes(), r = energy.num_labels;
  UpwardPass pass{root_forest(energy.graph), {}, {}};
  pass.inside.resize(static_cast<std::size_t>(m) * r);
  pass.up.assign(static_cast<std::size_t>(m) * r, 0.0);
  for (int s = 0; s < m; ++s)
    for (int j = 0; j < r; ++j) pass.inside[s * r + j] = -energy.node(s, j);
  std::vector<double> terms(r);
  const auto& f = pass.forest;
  for (auto it = f.order.rbegin(); it != f.order.rend(); ++it) {
    const int c = *it, p = f.parent[c];
    if (p < 0) continue;
    const auto& inc = f.up[c];
    for (int k = 0; k < r; ++k) {
      for (int j = 0; j < r; ++j) terms[j] = pass.inside[c * r + j] - energy.oriented(inc, j, k);
      pass.up[c * r + k] = log_sum_exp(terms);
    }
    const double shift = *std::max_element(pass.up.begin() + c * r, pass.up.begin() + (c + 1) * r);
    for (int k = 0; k < r; ++k) {
      pass.up[c * r + k] -= shift;
      pass.inside[p * r + k] += pass.up[c * r + k];
    }
  }
  return pass;
}

}  // namespace detail

struct TreeMarginals {
  MarginalTables marginals;
  double log_partition = 0.0;
};

/// Exact unary/pairwise marginals and log partition function on a forest.
inline TreeMarginals tree_bp(const EnergyFunction& energy) {
  energy.validate();
  const int m = energy.num_nodes(), r = energy.num_labels;
  auto pass = detail::sum_product_up(energy);
  const auto& f = pass.forest;

  // The up pass removed a constant from every message; undo it for log Z by
  // recomputing it from the unnormalized root beliefs plus the shifts.
  std::vector<double> outside(static_cast<std::size_t>(m) * r, 0.0);  // message from parent
  std::vector<double> terms(r);
  for (int s : f.order) {
    const int p = f.parent[s];
    if (p < 0) continue;
    const auto& inc = f.up[s];
    for (int j = 0; j < r; ++j) {
      for (int k = 0; k < r; ++k)
        terms[k] = pass.inside[p * r + k] - pass.up[s * r + k] + outside[p * r + k] -
                   energy.oriented(inc, j, k);
      outside[s * r + j] = detail::log_sum_exp(terms);
    }
    const double shift = *std::max_element(outside.begin() + s * r, outside.begin() + (s + 1) * r);
    for (int j = 0; j < r; ++j) outside[s * r + j] -= shift;
  }

  TreeMarginals out;
  out.marginals.num_labels = r;
  out.marginals.unary.resize(static_cast<std::size_t>(m) * r);
  out.marginals.pairwise.resize(static_cast<std::size_t>(energy.num_edges()) * r * r);
  std::vector<double> belief(r);
  for (int s = 0; s < m; ++s) {
    for (int j = 0; j < r; ++j) belief[j] = pass.inside[s * r + j] + outside[s * r + j];
    const double z = detail::log_sum_exp(belief);
    for (int j = 0; j < r; ++j) out.marginals.unary[s * r + j] = std::exp(belief[j] - z);
  }
  std::vector<double> pair(static_cast<std::size_t>(r) * r);
  for (int e = 0; e < energy.num_edges(); ++e) {
    const auto& ed = energy.graph.edge(e);
    // One endpoint is the child of the other.
    const int child = f.parent_edge[ed.t] == e ? ed.t : ed.s;
    const int par = f.parent[child];
    for (int j = 0; j < r; ++j)
      for (int k = 0; k < r; ++k) {
        const int yc = child == ed.s ? j : k, yp = child == ed.s ? k : j;
        pair[j * r + k] = pass.inside[child * r + yc] + pass.inside[par * r + yp] -
                          pass.up[child * r + yp] + outside[par * r + yp] - energy.edge(e, j, k);
      }
    const double z = detail::log_sum_exp(pair);
    for (int i = 0; i < r * r; ++i)
      out.marginals.pairwise[static_cast<std::size_t>(e) * r * r + i] = std::exp(pair[i] - z);
  }

  // log Z: redo the upward pass without normalization shifts, per root.
  std::vector<double> inside(static_cast<std::size_t>(m) * r);
  for (int s = 0; s < m; ++s)
    for (int j = 0; j < r; ++j) inside[s * r + j] = -energy.node(s, j);
  for (auto it = f.order.rbegin(); it != f.order.rend(); ++it) {
    const int c = *it, p = f.parent[c];
    if (p < 0) {
      out.log_partition += detail::log_sum_exp(std::span<const double>(inside.data() + c * r, r));
      continue;
    }
    for (int k = 0; k < r; ++k) {
      for (int j = 0; j < r; ++j) terms[j] = inside[c * r + j] - energy.oriented(f.up[c], j, k);
      inside[p * r + k] += detail::log_sum_exp(terms);
    }
  }
  return out;
}

inline MarginalTables tree_bp_marginals(const EnergyFunction& energy) {
  return tree_bp(energy).marginals;
}

/// Exact minimizer on a forest by min-sum dynamic programming.
inline InferenceResult tree_map(const EnergyFunction& energy) {
  energy.validate();
  const int m = energy.num_nodes(), r = energy.num_labels;
  const auto f = detail::root_forest(energy.graph);
  std::vector<double> cost(static_cast<std::size_t>(m) * r);
  std::vector<int> best_child(static_cast<std::size_t>(m) * r, 0);  // argmin of child given parent
  for (int s = 0; s < m; ++s)
    for (int j = 0; j < r; ++j) cost[s * r + j] = energy.node(s, j);
  for (auto it = f.order.rbegin(); it != f.order.rend(); ++it) {
    const int c = *it, p = f.parent[c];
    if (p < 0) continue;
    for (int k = 0; k < r; ++k) {
      double best = std::numeric_limits<double>::infinity();
      int arg = 0;
      for (int j = 0; j < r; ++j) {
        const double v = cost[c * r + j] + energy.oriented(f.up[c], j, k);
        if (v < best) {
          best = v;
          arg = j;
        }
      }
      best_child[c * r + k] = arg;
      cost[p * r + k] += best;
    }
  }
  InferenceResult result;
  result.labeling.assign(m, 0);
  for (int s : f.order) {
    const int p = f.parent[s];
    result.labeling[s] = p < 0 ? detail::argmin_first(std::span<const double>(cost.data() + s * r, r))
                               : best_child[s * r + result.labeling[p]];
  }
  result.energy = energy_eval(energy, result.labeling);
  result.lower_bound = result.energy;
  result.iterations = 1;
  return result;
}

/// Global minimizer by enumeration; ties go to the lexicographically smallest labeling.
inline InferenceResult exact_map(const EnergyFunction& energy) {
  energy.validate();
  InferenceResult result;
  result.energy = std::numeric_limits<double>::infinity();
  for_each_labeling(energy.num_nodes(), energy.num_labels, [&](const Labeling& y) {
    const double v = energy_eval(energy, y);
    if (v < result.energy) {
      result.energy = v;
      result.labeling = y;
    }
  });
  result.lower_bound = result.energy;
  result.iterations = 1;
  return result;
}

/// Local energy of assigning `label` to node s with neighbors fixed by y.
inline double local_energy(const EnergyFunction& energy, const Labeling& y, int s, int label) {
  double v = energy.node(s, label);
  for (const auto& inc : energy.graph.incident(s)) v += energy.oriented(inc, label, y[inc.neighbor]);
  return v;
}

/// Iterated conditional modes. A node only moves to a strictly better label,
/// so the energy never increases; stops at a local minimum or after max_sweeps.
inline InferenceResult icm(const EnergyFunction& energy, Labeling init, int max_sweeps = 100) {
  energy.validate();
  check_labeling(init, energy.num_nodes(), energy.num_labels);
  InferenceResult result;
  result.labeling = std::move(init);
  auto& y = result.labeling;
  std::vector<double> local(energy.num_labels);
  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    bool changed = false;
    for (int s = 0; s < energy.num_nodes(); ++s) {
      for (int j = 0; j < energy.num_labels; ++j) local[j] = local_energy(energy, y, s, j);
      const int best = detail::argmin_first(local);
      if (local[best] < local[y[s]]) {
        y[s] = best;
        changed = true;
      }
    }
    result.iterations = sweep + 1;
    if (!changed) break;
  }
  result.energy = energy_eval(energy, y);
  return result;
}

struct TrwsOptions {
  int max_iters = 100;
  double tol = 1e-9;  // relative bound improvement / duality gap for stopping
};

/// Sequential tree-reweighted message passing (min-sum) over the
/// decomposition of the graph into single-edge trees. Nodes are visited in
/// ascending index order on the forward pass and descending on the backward
/// pass; each node's potential is shared equally among its incident edges.
/// Returns the lowest-energy labeling decoded so far and the dual bound.
inline InferenceResult trws_map(const EnergyFunction& energy, const TrwsOptions& options = {}) {
  energy.validate();
  const int m = energy.num_nodes(), r = energy.num_labels, num_edges = energy.num_edges();
  const auto& graph = energy.graph;
  // msg[(2e + 0)] : s -> t over labels of t;  msg[(2e + 1)] : t -> s over labels of s.
  std::vector<double> msg(static_cast<std::size_t>(num_edges) * 2 * r, 0.0);
  auto message = [&](int e, bool from_source) { return msg.data() + (2 * e + (from_source ? 0 : 1)) * r; };
  auto incoming = [&](const Graph::Incidence& inc) {  // message arriving at this node along inc
    return message(inc.edge, !inc.is_source);
  };
  auto outgoing = [&](const Graph::Incidence& inc) { return message(inc.edge, inc.is_source); };

  std::vector<double> hat(r), scratch(r);
  auto reparametrized = [&](int s) {
    for (int j = 0; j < r; ++j) hat[j] = energy.node(s, j);
    for (const auto& inc : graph.incident(s)) {
      const double* in = incoming(inc);
      for (int j = 0; j < r; ++j) hat[j] += in[j];
    }
  };
  auto send = [&](int s, const Graph::Incidence& inc) {
    const double gamma = 1.0 / graph.degree(s);
    const double* back = incoming(inc);
    double* out = outgoing(inc);
    for (int j = 0; j < r; ++j) scratch[j] = gamma * hat[j] - back[j];
    double low = std::numeric_limits<double>::infinity();
    for (int k = 0; k < r; ++k) {
      double best = std::numeric_limits<double>::infinity();
      for (int j = 0; j < r; ++j) best = std::min(best, scratch[j] + energy.oriented(inc, j, k));
      out[k] = best;
      low = std::min(low, best);
    }
    for (int k = 0; k < r; ++k) out[k] -= low;
  };

  auto lower_bound = [&] {
    double bound = 0.0;
    std::vector<double> hat_s(r), hat_t(r);
    for (int s = 0; s < m; ++s)
      if (graph.degree(s) == 0)
        bound += *std::min_element(energy.unary.begin() + s * r, energy.unary.begin() + (s + 1) * r);
    for (int e = 0; e < num_edges; ++e) {
      const auto& ed = graph.edge(e);
      reparametrized(ed.s);
      hat_s = hat;
      reparametrized(ed.t);
      hat_t = hat;
      const double gs = 1.0 / graph.degree(ed.s), gt = 1.0 / graph.degree(ed.t);
      const double* to_t = message(e, true);
      const double* to_s = message(e, false);
      double best = std::numeric_limits<double>::infinity();
      for (int j = 0; j < r; ++j)
        for (int k = 0; k < r; ++k)
          best = std::min(best, energy.edge(e, j, k) + gs * hat_s[j] - to_s[j] + gt * hat_t[k] - to_t[k]);
      bound += best;
    }
    return bound;
  };

  // Greedy decode in forward order using fixed labels of earlier nodes and
  // messages from later ones.
  Labeling y(m, 0);
  auto decode = [&] {
    for (int s = 0; s < m; ++s) {
      for (int j = 0; j < r; ++j) scratch[j] = energy.node(s, j);
      for (const auto& inc : graph.incident(s)) {
        if (inc.neighbor < s) {
          for (int j = 0; j < r; ++j) scratch[j] += energy.oriented(inc, j, y[inc.neighbor]);
        } else {
          const double* in = incoming(inc);
          for (int j = 0; j < r; ++j) scratch[j] += in[j];
        }
      }
      y[s] = detail::argmin_first(scratch);
    }
    return energy_eval(energy, y);
  };

  InferenceResult result;
  result.energy = std::numeric_limits<double>::infinity();
  double previous = -std::numeric_limits<double>::infinity();
  for (int iter = 0; iter < options.max_iters; ++iter) {
    for (int s = 0; s < m; ++s) {
      reparametrized(s);
      for (const auto& inc : graph.incident(s))
        if (inc.neighbor > s) send(s, inc);
    }
    for (int s = m - 1; s >= 0; --s) {
      reparametrized(s);
      for (const auto& inc : graph.incident(s))
        if (inc.neighbor < s) send(s, inc);
    }
    const double value = decode();
    if (value < result.energy) {
      result.energy = value;
      result.labeling = y;
    }
    const double bound = lower_bound();
    result.bound_trace.push_back(bound);
    result.iterations = iter + 1;
    const double scale = std::max(1.0, std::abs(bound));
    if (result.energy - bound <= options.tol * scale) break;
    if (bound - previous <= options.tol * scale && iter > 0) break;
    previous = bound;
  }
  if (result.labeling.empty()) {  // max_iters == 0
    result.labeling.assign(m, 0);
    result.energy = energy_eval(energy, result.labeling);
    result.lower_bound = lower_bound();
  } else {
    result.lower_bound = *std::max_element(result.bound_trace.begin(), result.bound_trace.end());
  }
  return result;
}

/// Exact i.i.d. samples from P(y) proportional to exp(-E(y)) on a forest
/// (upward sum-product, then ancestral sampling from the roots down).
inline std::vector<Labeling> tree_sample(const EnergyFunction& energy, int n, std::uint64_t seed) {
  energy.validate();
  if (n < 0) throw Error("tree_sample: negative sample count");
  const int r = energy.num_labels;
  const auto pass = detail::sum_product_up(energy);
  const auto& f = pass.forest;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<double> weights(r);
  auto draw = [&](std::span<const double> log_weights) {
    const double top = *std::max_element(log_weights.begin(), log_weights.end());
    double total = 0.0;
    for (int j = 0; j < r; ++j) total += weights[j] = std::exp(log_weights[j] - top);
    double u = unit(rng) * total;
    for (int j = 0; j < r; ++j) {
      u -= weights[j];
      if (u < 0.0) return j;
    }
    return r - 1;
  };
  std::vector<Labeling> samples(n, Labeling(energy.num_nodes(), 0));
  std::vector<double> cond(r);
  for (auto& y : samples) {
    for (int s : f.order) {
      const int p = f.parent[s];
      if (p < 0) {
        y[s] = draw(std::span<const double>(pass.inside.data() + s * r, r));
        continue;
      }
      for (int j = 0; j < r; ++j) cond[j] = pass.inside[s * r + j] - energy.oriented(f.up[s], j, y[p]);
      y[s] = draw(cond);
    }
  }
  return samples;
}

struct GibbsOptions {
  int burn_in = 100;
  int thin = 1;
};

/// Single-site Gibbs sampler sweeping nodes in index order; starts from the
/// all-zero labeling. Deterministic given the seed.
inline std::vector<Labeling> gibbs_sample(const EnergyFunction& energy, int n, std::uint64_t seed,
                                          const GibbsOptions& options = {}) {
  energy.validate();
  if (n < 0 || options.burn_in < 0 || options.thin < 1) throw Error("gibbs_sample: bad schedule");
  const int m = energy.num_nodes(), r = energy.num_labels;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Labeling y(m, 0);
  std::vector<double> weight(r);
  auto sweep = [&] {
    for (int s = 0; s < m; ++s) {
      double low = std::numeric_limits<double>::infinity();
      for (int j = 0; j < r; ++j) low = std::min(low, weight[j] = local_energy(energy, y, s, j));
      double total = 0.0;
      for (int j = 0; j < r; ++j) total += weight[j] = std::exp(low - weight[j]);
      double u = unit(rng) * total;
      int pick = r - 1;
      for (int j = 0; j < r; ++j) {
        u -= weight[j];
        if (u < 0.0) {
          pick = j;
          break;
        }
      }
      y[s] = pick;
    }
  };
  for (int i = 0; i < options.burn_in; ++i) sweep();
  std::vector<Labeling> samples;
  samples.reserve(n);
  for (int i = 0; i < n; ++i) {
    for (int t = 0; t < options.thin; ++t) sweep();
    samples.push_back(y);
  }
  return samples;
}

}  // namespace lscrf
