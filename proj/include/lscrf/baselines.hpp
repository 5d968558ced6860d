#pragma once

// Classical log-linear CRF trainers used as reference points: per-node
// logistic regression, pseudolikelihood, piecewise (edge pieces), and exact
// conditional likelihood on trees.

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "lscrf/graph.hpp"
#include "lscrf/inference.hpp"
#include "lscrf/parallel.hpp"
#include "lscrf/regress.hpp"

namespace lscrf {

enum class Surrogate { logistic, pseudolikelihood, piecewise, conditional_likelihood };

inline std::string to_string(Surrogate s) {
  switch (s) {
    case Surrogate::logistic: return "logistic";
    case Surrogate::pseudolikelihood: return "pl";
    case Surrogate::piecewise: return "pw";
    case Surrogate::conditional_likelihood: return "tree-cll";
  }
  return "?";
}

inline Surrogate surrogate_from_string(const std::string& s) {
  if (s == "logistic") return Surrogate::logistic;
  if (s == "pl") return Surrogate::pseudolikelihood;
  if (s == "pw") return Surrogate::piecewise;
  if (s == "tree-cll") return Surrogate::conditional_likelihood;
  throw Error("unknown baseline method '" + s + "'");
}

/// E(x,y;w) = sum_s <w_unary[y_s], phi_s> + sum_st <w_pair[y_s*r + y_t], phi_st>.
struct LogLinearCRF {
  int num_labels = 0;
  Eigen::MatrixXd w_unary;  // r x D_node
  Eigen::MatrixXd w_pair;   // r^2 x D_edge
  Surrogate method = Surrogate::logistic;
  std::vector<std::string> label_names;
  Json provenance = Json::object();

  // Piecewise training only has node pieces for isolated nodes, so only
  // those receive unary terms at prediction time.
  bool unary_on_isolated_only() const { return method == Surrogate::piecewise; }
};

inline Eigen::VectorXd pack(const LogLinearCRF& crf) {
  Eigen::VectorXd w(crf.w_unary.size() + crf.w_pair.size());
  Eigen::Index at = 0;
  for (Eigen::Index i = 0; i < crf.w_unary.rows(); ++i)
    for (Eigen::Index d = 0; d < crf.w_unary.cols(); ++d) w[at++] = crf.w_unary(i, d);
  for (Eigen::Index i = 0; i < crf.w_pair.rows(); ++i)
    for (Eigen::Index d = 0; d < crf.w_pair.cols(); ++d) w[at++] = crf.w_pair(i, d);
  return w;
}

inline void unpack(const Eigen::VectorXd& w, LogLinearCRF& crf) {
  if (w.size() != crf.w_unary.size() + crf.w_pair.size()) throw Error("parameter vector has the wrong size");
  Eigen::Index at = 0;
  for (Eigen::Index i = 0; i < crf.w_unary.rows(); ++i)
    for (Eigen::Index d = 0; d < crf.w_unary.cols(); ++d) crf.w_unary(i, d) = w[at++];
  for (Eigen::Index i = 0; i < crf.w_pair.rows(); ++i)
    for (Eigen::Index d = 0; d < crf.w_pair.cols(); ++d) crf.w_pair(i, d) = w[at++];
}

inline EnergyFunction loglinear_energy(const LogLinearCRF& crf, const Instance& instance) {
  instance.validate();
  const int r = crf.num_labels;
  if (instance.node_features.cols() != crf.w_unary.cols() ||
      (instance.graph.num_edges() && instance.edge_features.cols() != crf.w_pair.cols()))
    throw Error("instance '" + instance.id + "': feature dimensions do not match the model");
  auto energy = EnergyFunction::zeros(instance.graph, r);
  const Eigen::MatrixXd unary = instance.node_features * crf.w_unary.transpose();
  for (int s = 0; s < instance.graph.num_nodes(); ++s) {
    if (crf.unary_on_isolated_only() && instance.graph.degree(s) > 0) continue;
    for (int j = 0; j < r; ++j) energy.node(s, j) = unary(s, j);
  }
  if (instance.graph.num_edges()) {
    const Eigen::MatrixXd pair = instance.edge_features * crf.w_pair.transpose();
    for (int e = 0; e < instance.graph.num_edges(); ++e)
      for (int p = 0; p < r * r; ++p) energy.pairwise[static_cast<std::size_t>(e) * r * r + p] = pair(e, p);
  }
  return energy;
}

/// Negative (surrogate) log-likelihood plus lambda ||w||^2 over a corpus.
class CrfObjective {
 public:
  CrfObjective(std::span<const Instance> instances, int num_labels, Surrogate surrogate, double lambda, int jobs = 1)
      : instances_(instances), r_(num_labels), surrogate_(surrogate), lambda_(lambda), jobs_(jobs) {
    if (instances.empty()) throw Error("no training instances");
    if (num_labels < 1) throw Error("need at least one label");
    if (lambda < 0.0) throw Error("lambda must be >= 0");
    node_dim_ = instances.front().node_features.cols();
    edge_dim_ = 0;
    for (const auto& inst : instances)
      if (inst.graph.num_edges()) {
        edge_dim_ = inst.edge_features.cols();
        break;
      }
    for (const auto& inst : instances) {
      inst.validate(num_labels);
      if (!inst.labels) throw Error("instance '" + inst.id + "' has no ground-truth labels");
      if (inst.node_features.cols() != node_dim_ || (inst.graph.num_edges() && inst.edge_features.cols() != edge_dim_))
        throw Error("instance '" + inst.id + "': inconsistent feature dimensions");
      if (surrogate == Surrogate::conditional_likelihood && !is_tree(inst.graph))
        throw GraphError("instance '" + inst.id + "' is not a tree; exact likelihood needs trees");
    }
  }

  Eigen::Index dim() const { return r_ * node_dim_ + r_ * r_ * edge_dim_; }

  LogLinearCRF make_model(const Eigen::VectorXd& w) const {
    LogLinearCRF crf;
    crf.num_labels = r_;
    crf.w_unary = Eigen::MatrixXd::Zero(r_, node_dim_);
    crf.w_pair = Eigen::MatrixXd::Zero(r_ * r_, edge_dim_);
    crf.method = surrogate_;
    unpack(w, crf);
    return crf;
  }

  /// Objective value; writes the gradient when `gradient` is non-null.
  double evaluate(const Eigen::VectorXd& w, Eigen::VectorXd* gradient) const {
    const LogLinearCRF crf = make_model(w);
    struct Partial {
      double value = 0.0;
      Eigen::MatrixXd g_unary, g_pair;
    };
    Partial zero{0.0, Eigen::MatrixXd::Zero(r_, node_dim_), Eigen::MatrixXd::Zero(r_ * r_, edge_dim_)};
    const Partial total = chunked_reduce(
        instances_.size(), 16, jobs_, zero,
        [&](std::size_t begin, std::size_t end) {
          Partial p = zero;
          for (std::size_t i = begin; i < end; ++i) p.value += accumulate(crf, instances_[i], p.g_unary, p.g_pair);
          return p;
        },
        [](Partial acc, const Partial& part) {
          acc.value += part.value;
          acc.g_unary += part.g_unary;
          acc.g_pair += part.g_pair;
          return acc;
        });
    if (gradient) {
      LogLinearCRF g = crf;
      g.w_unary = total.g_unary;
      g.w_pair = total.g_pair;
      *gradient = pack(g) + 2.0 * lambda_ * w;
    }
    return total.value + lambda_ * w.squaredNorm();
  }

 private:
  static double softmax_neg(const Eigen::Ref<const Eigen::VectorXd>& energies, Eigen::VectorXd& prob) {
    const double low = energies.minCoeff();
    prob = (-(energies.array() - low)).exp();
    const double z = prob.sum();
    prob /= z;
    return -low + std::log(z);  // log sum exp(-e)
  }

  // Adds one instance's loss gradient w.r.t. the energy tables, mapped back
  // to weights through the feature matrices; returns the loss.
  double accumulate(const LogLinearCRF& crf, const Instance& inst, Eigen::MatrixXd& g_unary,
                    Eigen::MatrixXd& g_pair) const {
    const int r = r_;
    const auto& graph = inst.graph;
    const auto& y = *inst.labels;
    const int m = graph.num_nodes(), num_edges = graph.num_edges();
    const Eigen::MatrixXd unary = inst.node_features * crf.w_unary.transpose();  // m x r
    Eigen::MatrixXd pair(num_edges, r * r);
    if (num_edges) pair = inst.edge_features * crf.w_pair.transpose();
    Eigen::MatrixXd c_unary = Eigen::MatrixXd::Zero(m, r);
    Eigen::MatrixXd c_pair = Eigen::MatrixXd::Zero(num_edges, r * r);
    auto pair_index = [&](const Graph::Incidence& inc, int own, int other) {
      return inc.is_source ? own * r + other : other * r + own;
    };
    double loss = 0.0;
    Eigen::VectorXd prob, local(r);

    auto logistic_node = [&](int s) {
      const double lse = softmax_neg(unary.row(s).transpose(), prob);
      loss += unary(s, y[s]) + lse;
      for (int j = 0; j < r; ++j) c_unary(s, j) += (j == y[s]) - prob[j];
    };

    switch (surrogate_) {
      case Surrogate::logistic:
        for (int s = 0; s < m; ++s) logistic_node(s);
        break;
      case Surrogate::pseudolikelihood:
        for (int s = 0; s < m; ++s) {
          for (int j = 0; j < r; ++j) {
            local[j] = unary(s, j);
            for (const auto& inc : graph.incident(s)) local[j] += pair(inc.edge, pair_index(inc, j, y[inc.neighbor]));
          }
          const double lse = softmax_neg(local, prob);
          loss += local[y[s]] + lse;
          for (int j = 0; j < r; ++j) {
            const double c = (j == y[s]) - prob[j];
            c_unary(s, j) += c;
            for (const auto& inc : graph.incident(s)) c_pair(inc.edge, pair_index(inc, j, y[inc.neighbor])) += c;
          }
        }
        break;
      case Surrogate::piecewise:
        for (int s = 0; s < m; ++s)
          if (graph.degree(s) == 0) logistic_node(s);
        for (int e = 0; e < num_edges; ++e) {
          const auto& ed = graph.edge(e);
          const int truth = y[ed.s] * r + y[ed.t];
          const double lse = softmax_neg(pair.row(e).transpose(), prob);
          loss += pair(e, truth) + lse;
          for (int p = 0; p < r * r; ++p) c_pair(e, p) += (p == truth) - prob[p];
        }
        break;
      case Surrogate::conditional_likelihood: {
        auto energy = EnergyFunction::zeros(graph, r);
        for (int s = 0; s < m; ++s)
          for (int j = 0; j < r; ++j) energy.node(s, j) = unary(s, j);
        for (int e = 0; e < num_edges; ++e)
          for (int p = 0; p < r * r; ++p) energy.pairwise[static_cast<std::size_t>(e) * r * r + p] = pair(e, p);
        const auto bp = tree_bp(energy);
        loss += energy_eval(energy, y) + bp.log_partition;
        for (int s = 0; s < m; ++s)
          for (int j = 0; j < r; ++j) c_unary(s, j) += (j == y[s]) - bp.marginals.node(s, j);
        for (int e = 0; e < num_edges; ++e) {
          const auto& ed = graph.edge(e);
          for (int j = 0; j < r; ++j)
            for (int k = 0; k < r; ++k)
              c_pair(e, j * r + k) += (j == y[ed.s] && k == y[ed.t]) - bp.marginals.edge(e, j, k);
        }
        break;
      }
    }
    if (node_dim_) g_unary.noalias() += c_unary.transpose() * inst.node_features;
    if (num_edges && edge_dim_) g_pair.noalias() += c_pair.transpose() * inst.edge_features;
    return loss;
  }

  std::span<const Instance> instances_;
  int r_;
  Surrogate surrogate_;
  double lambda_;
  int jobs_;
  Eigen::Index node_dim_ = 0;
  Eigen::Index edge_dim_ = 0;
};

struct BaselineOptions {
  double lambda = 1e-2;
  int max_iter = 2000;
  double tol = 1e-6;  // on ||grad|| relative to max(1, ||grad at start||)
  int jobs = 1;
};

struct OptimizeResult {
  Eigen::VectorXd w;
  double value = 0.0;
  double gradient_norm = 0.0;
  int iterations = 0;
  bool converged = false;
};

/// Full-batch gradient descent with Barzilai-Borwein trial steps and
/// Armijo backtracking, so the objective decreases monotonically.
template <class Objective>
OptimizeResult minimize_gradient_descent(const Objective& objective, Eigen::VectorXd w, int max_iter, double tol) {
  OptimizeResult result;
  Eigen::VectorXd g;
  double f = objective.evaluate(w, &g);
  const double threshold = tol * std::max(1.0, g.norm());
  double step = 1.0 / std::max(1.0, g.norm());
  Eigen::VectorXd w_next, g_next;
  for (int it = 0; it < max_iter; ++it) {
    result.gradient_norm = g.norm();
    if (result.gradient_norm <= threshold) {
      result.converged = true;
      break;
    }
    double trial = step;
    double f_next = 0.0;
    for (int backtrack = 0;; ++backtrack) {
      w_next = w - trial * g;
      f_next = objective.evaluate(w_next, &g_next);
      if (f_next <= f - 1e-4 * trial * g.squaredNorm()) break;
      trial *= 0.5;
      if (backtrack > 60) {
        result.w = w;
        result.value = f;
        result.iterations = it;
        return result;  // step underflow: no further progress possible
      }
    }
    const Eigen::VectorXd s = w_next - w, dy = g_next - g;
    const double sy = s.dot(dy);
    step = sy > 0.0 ? s.squaredNorm() / sy : trial * 2.0;
    w.swap(w_next);
    g.swap(g_next);
    f = f_next;
    result.iterations = it + 1;
  }
  result.gradient_norm = g.norm();
  result.converged = result.converged || result.gradient_norm <= threshold;
  result.w = std::move(w);
  result.value = f;
  return result;
}

struct BaselineFit {
  LogLinearCRF model;
  OptimizeResult optimization;
};

inline BaselineFit train_baseline(std::span<const Instance> instances, int num_labels, Surrogate surrogate,
                                  const BaselineOptions& options = {},
                                  const Eigen::VectorXd& init = Eigen::VectorXd()) {
  const CrfObjective objective(instances, num_labels, surrogate, options.lambda, options.jobs);
  Eigen::VectorXd w0 = init.size() ? init : Eigen::VectorXd::Zero(objective.dim());
  if (w0.size() != objective.dim()) throw Error("initial parameter vector has the wrong size");
  BaselineFit fit;
  fit.optimization = minimize_gradient_descent(objective, std::move(w0), options.max_iter, options.tol);
  fit.model = objective.make_model(fit.optimization.w);
  if (surrogate == Surrogate::logistic) fit.model.w_pair.setZero();
  return fit;
}

inline BaselineFit logistic_unary_train(std::span<const Instance> instances, int r, const BaselineOptions& o = {}) {
  return train_baseline(instances, r, Surrogate::logistic, o);
}
inline BaselineFit pseudolikelihood_train(std::span<const Instance> instances, int r, const BaselineOptions& o = {}) {
  return train_baseline(instances, r, Surrogate::pseudolikelihood, o);
}
inline BaselineFit piecewise_train(std::span<const Instance> instances, int r, const BaselineOptions& o = {}) {
  return train_baseline(instances, r, Surrogate::piecewise, o);
}
inline BaselineFit tree_cll_train(std::span<const Instance> instances, int r, const BaselineOptions& o = {}) {
  return train_baseline(instances, r, Surrogate::conditional_likelihood, o);
}

inline Json to_json(const LogLinearCRF& crf) {
  auto matrix = [](const Eigen::MatrixXd& m) {
    Json rows = Json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      std::vector<double> v(m.cols());
      for (Eigen::Index d = 0; d < m.cols(); ++d) v[d] = m(i, d);
      rows.push_back(v);
    }
    return rows;
  };
  Json j;
  j["format"] = "lscrf-model";
  j["version"] = 1;
  j["type"] = "loglinear-crf";
  j["method"] = to_string(crf.method);
  j["num_labels"] = crf.num_labels;
  j["label_names"] = crf.label_names;
  j["node_dim"] = crf.w_unary.cols();
  j["edge_dim"] = crf.w_pair.cols();
  j["w_unary"] = matrix(crf.w_unary);
  j["w_pair"] = matrix(crf.w_pair);
  j["provenance"] = crf.provenance;
  return j;
}

inline LogLinearCRF loglinear_from_json(const Json& j) {
  if (j.value("format", "") != "lscrf-model" || j.value("type", "") != "loglinear-crf")
    throw FormatError("not a log-linear CRF model file");
  LogLinearCRF crf;
  crf.method = surrogate_from_string(j.at("method").get<std::string>());
  crf.num_labels = j.at("num_labels").get<int>();
  crf.label_names = j.at("label_names").get<std::vector<std::string>>();
  const auto node_dim = j.at("node_dim").get<Eigen::Index>(), edge_dim = j.at("edge_dim").get<Eigen::Index>();
  auto matrix = [](const Json& rows, Eigen::Index n, Eigen::Index d) {
    if (static_cast<Eigen::Index>(rows.size()) != n) throw FormatError("weight matrix has the wrong row count");
    Eigen::MatrixXd m(n, d);
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto v = rows[i].get<std::vector<double>>();
      if (static_cast<Eigen::Index>(v.size()) != d) throw FormatError("weight matrix has the wrong column count");
      for (Eigen::Index k = 0; k < d; ++k) m(i, k) = v[k];
    }
    return m;
  };
  crf.w_unary = matrix(j.at("w_unary"), crf.num_labels, node_dim);
  crf.w_pair = matrix(j.at("w_pair"), static_cast<Eigen::Index>(crf.num_labels) * crf.num_labels, edge_dim);
  crf.provenance = j.value("provenance", Json::object());
  return crf;
}

}  // namespace lscrf
