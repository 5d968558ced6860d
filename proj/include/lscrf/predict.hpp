#pragma once

// Turning a trained PairwiseModel into an energy function for a new
// instance, MAP labeling, and energy interchange formats.

#include <cmath>
#include <iomanip>
#include <istream>
#include <limits>
#include <ostream>
#include <span>
#include <sstream>
#include <string>

#include "lscrf/graph.hpp"
#include "lscrf/inference.hpp"
#include "lscrf/regress.hpp"
#include "lscrf/train.hpp"

namespace lscrf {

namespace detail {

inline void check_prediction_input(const PairwiseModel& model, const Instance& instance) {
  instance.validate();
  if (instance.graph.num_edges() && model.has_pairwise() && instance.edge_features.cols() != model.edge_dim)
    throw Error("instance '" + instance.id + "': edge feature dimension " +
                std::to_string(instance.edge_features.cols()) + " != model dimension " +
                std::to_string(model.edge_dim));
  if (instance.graph.num_edges() && !model.has_pairwise())
    throw Error("model has no pairwise regressors; use predict_unary_labeling");
}

inline void fill_isolated_unaries(const PairwiseModel& model, const Instance& instance, EnergyFunction& energy) {
  for (int s = 0; s < instance.graph.num_nodes(); ++s) {
    if (instance.graph.degree(s) != 0) continue;
    if (!model.has_unaries())
      throw Error("instance '" + instance.id +
                  "' has isolated nodes but the model has no unary regressors; retrain with unary "
                  "training enabled (UnaryTraining::always / --unary-fallback)");
    for (int j = 0; j < model.num_labels; ++j)
      energy.node(s, j) = -std::log(clamp01(predict(model.unary_functions[j], row(instance.node_features, s))));
  }
}

}  // namespace detail

/// Edge-decomposition energy: theta_st;jk = -log clamp01(f_jk(phi_st)) and no
/// unary terms, except -log clamp01(f_j(phi_s)) for isolated nodes.
inline EnergyFunction predict_energy_loopy(const PairwiseModel& model, const Instance& instance) {
  detail::check_prediction_input(model, instance);
  const int r = model.num_labels;
  auto energy = EnergyFunction::zeros(instance.graph, r);
  for (int e = 0; e < instance.graph.num_edges(); ++e) {
    const auto phi = row(instance.edge_features, e);
    for (int j = 0; j < r; ++j)
      for (int k = 0; k < r; ++k) energy.edge(e, j, k) = -std::log(clamp01(predict(model.pair(j, k), phi)));
  }
  detail::fill_isolated_unaries(model, instance, energy);
  return energy;
}

/// Tree composition of clamped pair probabilities (edge-major, r*r per edge,
/// label of the source first): theta_s;j = -log f_s;j and
/// theta_st;jk = -log(f_jk / (f_s;j f_t;k)), where f_s;j is the mean over the
/// edges incident to s of the pair tables marginalized onto s. Isolated nodes
/// keep zero unaries.
inline EnergyFunction compose_tree_energy(const Graph& graph, int r, std::span<const double> pair) {
  const int m = graph.num_nodes();
  if (pair.size() != static_cast<std::size_t>(graph.num_edges()) * r * r)
    throw Error("compose_tree_energy: pair table has the wrong size");
  auto energy = EnergyFunction::zeros(graph, r);
  std::vector<double> node(static_cast<std::size_t>(m) * r, 0.0);
  for (int e = 0; e < graph.num_edges(); ++e) {
    const auto& ed = graph.edge(e);
    for (int j = 0; j < r; ++j)
      for (int k = 0; k < r; ++k) {
        const double f = pair[(static_cast<std::size_t>(e) * r + j) * r + k];
        node[static_cast<std::size_t>(ed.s) * r + j] += f;
        node[static_cast<std::size_t>(ed.t) * r + k] += f;
      }
  }
  for (int s = 0; s < m; ++s) {
    const int deg = graph.degree(s);
    if (deg == 0) continue;
    for (int j = 0; j < r; ++j) {
      auto& f = node[static_cast<std::size_t>(s) * r + j];
      f = clamp01(f / deg);
      energy.node(s, j) = -std::log(f);
    }
  }
  for (int e = 0; e < graph.num_edges(); ++e) {
    const auto& ed = graph.edge(e);
    for (int j = 0; j < r; ++j)
      for (int k = 0; k < r; ++k)
        energy.edge(e, j, k) = -std::log(pair[(static_cast<std::size_t>(e) * r + j) * r + k] /
                                         (node[static_cast<std::size_t>(ed.s) * r + j] *
                                          node[static_cast<std::size_t>(ed.t) * r + k]));
  }
  return energy;
}

/// Tree composition of the model's pair predictions (see compose_tree_energy).
inline EnergyFunction predict_energy_tree(const PairwiseModel& model, const Instance& instance) {
  detail::check_prediction_input(model, instance);
  if (!is_tree(instance.graph)) throw GraphError("predict_energy_tree: instance graph has a cycle");
  const int r = model.num_labels;
  std::vector<double> pair(static_cast<std::size_t>(instance.graph.num_edges()) * r * r);
  for (int e = 0; e < instance.graph.num_edges(); ++e) {
    const auto phi = row(instance.edge_features, e);
    for (int j = 0; j < r; ++j)
      for (int k = 0; k < r; ++k)
        pair[(static_cast<std::size_t>(e) * r + j) * r + k] = clamp01(predict(model.pair(j, k), phi));
  }
  auto energy = compose_tree_energy(instance.graph, r, pair);
  detail::fill_isolated_unaries(model, instance, energy);
  return energy;
}

enum class Solver { exact, tree, trws, icm };
enum class Composition { automatic, loopy, tree };

inline Solver solver_from_string(const std::string& s) {
  if (s == "exact") return Solver::exact;
  if (s == "tree") return Solver::tree;
  if (s == "trws") return Solver::trws;
  if (s == "icm") return Solver::icm;
  throw Error("unknown solver '" + s + "'");
}

inline std::string to_string(Solver s) {
  switch (s) {
    case Solver::exact: return "exact";
    case Solver::tree: return "tree";
    case Solver::trws: return "trws";
    case Solver::icm: return "icm";
  }
  return "?";
}

struct MapOptions {
  TrwsOptions trws;
  int icm_sweeps = 100;
};

/// Per-node argmin of theta_s(j) + sum over incident edges of min_k theta_st(j,k);
/// used to start ICM.
inline Labeling greedy_init(const EnergyFunction& energy) {
  Labeling y(energy.num_nodes(), 0);
  std::vector<double> score(energy.num_labels);
  for (int s = 0; s < energy.num_nodes(); ++s) {
    for (int j = 0; j < energy.num_labels; ++j) {
      score[j] = energy.node(s, j);
      for (const auto& inc : energy.graph.incident(s)) {
        double best = std::numeric_limits<double>::infinity();
        for (int k = 0; k < energy.num_labels; ++k) best = std::min(best, energy.oriented(inc, j, k));
        score[j] += best;
      }
    }
    y[s] = detail::argmin_first(score);
  }
  return y;
}

inline InferenceResult minimize_energy(const EnergyFunction& energy, Solver solver, const MapOptions& options = {}) {
  switch (solver) {
    case Solver::exact: return exact_map(energy);
    case Solver::tree: return tree_map(energy);
    case Solver::trws: return trws_map(energy, options.trws);
    case Solver::icm: return icm(energy, greedy_init(energy), options.icm_sweeps);
  }
  throw Error("unknown solver");
}

/// argmax_j f_j(phi_s) for every node (unary-only models).
inline Labeling predict_unary_labeling(const PairwiseModel& model, const Instance& instance) {
  if (!model.has_unaries()) throw Error("model has no unary regressors");
  if (instance.node_features.cols() != model.node_dim) throw Error("node feature dimension mismatch");
  Labeling y(instance.graph.num_nodes(), 0);
  for (int s = 0; s < instance.graph.num_nodes(); ++s) {
    double best = -std::numeric_limits<double>::infinity();
    for (int j = 0; j < model.num_labels; ++j) {
      const double f = predict(model.unary_functions[j], row(instance.node_features, s));
      if (f > best) {
        best = f;
        y[s] = j;
      }
    }
  }
  return y;
}

/// Builds the energy (tree composition on forests unless `composition` says
/// otherwise, edge decomposition on loopy graphs) and minimizes it.
inline Labeling predict_labeling(const PairwiseModel& model, const Instance& instance, Solver solver,
                                 Composition composition = Composition::automatic, const MapOptions& options = {}) {
  if (!model.has_pairwise() || (instance.graph.num_edges() == 0 && model.has_unaries()))
    return predict_unary_labeling(model, instance);
  if (composition == Composition::automatic)
    composition = is_tree(instance.graph) ? Composition::tree : Composition::loopy;
  const auto energy =
      composition == Composition::tree ? predict_energy_tree(model, instance) : predict_energy_loopy(model, instance);
  return minimize_energy(energy, solver, options).labeling;
}

// ---------------------------------------------------------------------------
// Interchange formats

/// Text grid-model format:
///   m r |E|
///   m lines of r unary values
///   |E| lines "s t" followed by r*r pairwise values (row-major, label of s first)
inline void write_energy_text(const EnergyFunction& energy, std::ostream& out) {
  const int r = energy.num_labels;
  out << energy.num_nodes() << ' ' << r << ' ' << energy.num_edges() << '\n';
  out << std::setprecision(17);
  for (int s = 0; s < energy.num_nodes(); ++s) {
    for (int j = 0; j < r; ++j) out << (j ? " " : "") << energy.node(s, j);
    out << '\n';
  }
  for (int e = 0; e < energy.num_edges(); ++e) {
    const auto& ed = energy.graph.edge(e);
    out << ed.s << ' ' << ed.t;
    for (int j = 0; j < r; ++j)
      for (int k = 0; k < r; ++k) out << ' ' << energy.edge(e, j, k);
    out << '\n';
  }
}

inline EnergyFunction read_energy_text(std::istream& in) {
  int m = 0, r = 0, num_edges = 0;
  if (!(in >> m >> r >> num_edges) || m < 0 || r < 1 || num_edges < 0)
    throw FormatError("energy file: bad header", 1);
  std::vector<double> unary(static_cast<std::size_t>(m) * r);
  for (auto& v : unary)
    if (!(in >> v)) throw FormatError("energy file: truncated unary table");
  std::vector<Edge> edges(num_edges);
  std::vector<double> pairwise(static_cast<std::size_t>(num_edges) * r * r);
  for (int e = 0; e < num_edges; ++e) {
    if (!(in >> edges[e].s >> edges[e].t)) throw FormatError("energy file: truncated edge list");
    for (int i = 0; i < r * r; ++i)
      if (!(in >> pairwise[static_cast<std::size_t>(e) * r * r + i]))
        throw FormatError("energy file: truncated pairwise table");
  }
  auto energy = EnergyFunction::zeros(Graph(m, std::move(edges)), r);
  energy.unary = std::move(unary);
  energy.pairwise = std::move(pairwise);
  return energy;
}

/// UAI MARKOV network with factor values exp(-theta). Unary factors come
/// first (one per node), then one factor per edge.
inline void write_uai(const EnergyFunction& energy, std::ostream& out) {
  const int r = energy.num_labels, m = energy.num_nodes();
  out << "MARKOV\n" << m << '\n';
  for (int s = 0; s < m; ++s) out << (s ? " " : "") << r;
  out << '\n' << m + energy.num_edges() << '\n';
  for (int s = 0; s < m; ++s) out << "1 " << s << '\n';
  for (const auto& ed : energy.graph.edges()) out << "2 " << ed.s << ' ' << ed.t << '\n';
  out << std::setprecision(17);
  for (int s = 0; s < m; ++s) {
    out << '\n' << r << '\n';
    for (int j = 0; j < r; ++j) out << (j ? " " : "") << std::exp(-energy.node(s, j));
    out << '\n';
  }
  for (int e = 0; e < energy.num_edges(); ++e) {
    out << '\n' << r * r << '\n';
    for (int j = 0; j < r; ++j) {
      for (int k = 0; k < r; ++k) out << (k ? " " : "") << std::exp(-energy.edge(e, j, k));
      out << '\n';
    }
  }
}

}  // namespace lscrf
