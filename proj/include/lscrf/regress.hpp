#pragma once

// Regressors mapping feature vectors to (0,1): closed-form ridge regression
// with a reusable Cholesky factor, iterative least squares (CG, SGD), and
// gradient-boosted oblivious regression trees.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <numeric>
#include <random>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include "json.hpp"
#include "lscrf/error.hpp"
#include "lscrf/graph.hpp"
#include "lscrf/parallel.hpp"

namespace lscrf {

using Json = nlohmann::ordered_json;

/// N examples (rows of `features`) with targets in [0,1] and optional
/// non-negative per-example weights (empty = all ones). Features are shared
/// so that many target vectors can reuse one design matrix.
struct RegressionDataset {
  std::shared_ptr<const FeatureMatrix> features;
  Eigen::VectorXd targets;
  Eigen::VectorXd weights;

  Eigen::Index size() const { return features ? features->rows() : 0; }
  Eigen::Index dim() const { return features ? features->cols() : 0; }
  double weight(Eigen::Index i) const { return weights.size() ? weights[i] : 1.0; }

  void validate() const {
    if (!features || features->rows() < 1) throw Error("regression dataset is empty");
    if (targets.size() != features->rows()) throw Error("target count != example count");
    if (weights.size() && weights.size() != features->rows()) throw Error("weight count != example count");
    if (!features->allFinite() || !targets.allFinite()) throw Error("non-finite regression data");
    if ((targets.array() < 0.0).any() || (targets.array() > 1.0).any())
      throw Error("regression targets must lie in [0,1]");
    if (weights.size() && (weights.array() < 0.0).any()) throw Error("negative example weight");
  }
};

struct LinearModel {
  Eigen::VectorXd w;
};

struct ObliviousTree {
  std::vector<int> features;       // one split feature per level
  std::vector<double> thresholds;  // go right iff x[feature] > threshold
  std::vector<double> leaf_values;  // 2^depth values, already scaled by the learning rate

  int leaf_index(std::span<const double> x) const {
    int index = 0;
    for (std::size_t level = 0; level < features.size(); ++level)
      if (x[features[level]] > thresholds[level]) index |= 1 << level;
    return index;
  }
};

struct TreeEnsemble {
  std::vector<ObliviousTree> trees;
  double learning_rate = 0.1;
  double base_score = 0.0;
  int depth = 6;
  int dim = 0;
};

struct ConstantModel {
  double value = 0.0;
};

using Regressor = std::variant<ConstantModel, LinearModel, TreeEnsemble>;

inline double predict(const LinearModel& model, std::span<const double> x) {
  if (static_cast<Eigen::Index>(x.size()) != model.w.size())
    throw Error("feature dimension " + std::to_string(x.size()) + " != model dimension " +
                std::to_string(model.w.size()));
  return Eigen::Map<const Eigen::VectorXd>(x.data(), x.size()).dot(model.w);
}

inline double predict(const TreeEnsemble& model, std::span<const double> x) {
  if (static_cast<int>(x.size()) != model.dim)
    throw Error("feature dimension " + std::to_string(x.size()) + " != model dimension " +
                std::to_string(model.dim));
  double out = model.base_score;
  for (const auto& tree : model.trees) out += tree.leaf_values[tree.leaf_index(x)];
  return out;
}

inline double predict(const ConstantModel& model, std::span<const double>) { return model.value; }

inline double predict(const Regressor& model, std::span<const double> x) {
  return std::visit([&](const auto& m) { return predict(m, x); }, model);
}

inline std::span<const double> row(const FeatureMatrix& m, Eigen::Index i) {
  return {m.data() + i * m.cols(), static_cast<std::size_t>(m.cols())};
}

inline constexpr double kProbabilityFloor = 1e-9;

/// Clamps a raw regression output into [1e-9, 1].
inline double clamp01(double p) {
  if (std::isnan(p)) throw Error("clamp01: NaN prediction");
  return std::min(std::max(p, kProbabilityFloor), 1.0);
}

// ---------------------------------------------------------------------------
// Ridge regression

/// Cholesky factor L L^T = Phi W Phi^T + lambda I of the (weighted) Gram matrix.
struct RidgeFactor {
  Eigen::LLT<Eigen::MatrixXd> llt;
  double lambda = 0.0;
  Eigen::Index dim = 0;

  Eigen::MatrixXd reconstruct() const {
    Eigen::MatrixXd l = llt.matrixL();
    return l * l.transpose();
  }
};

inline constexpr std::size_t kRowChunk = 4096;

/// X^T W X, accumulated over fixed row chunks so the result does not depend on `jobs`.
inline Eigen::MatrixXd weighted_gram(const FeatureMatrix& x, const Eigen::VectorXd& weights, int jobs = 1) {
  const Eigen::Index d = x.cols();
  return chunked_reduce(
      static_cast<std::size_t>(x.rows()), kRowChunk, jobs, Eigen::MatrixXd(Eigen::MatrixXd::Zero(d, d)),
      [&](std::size_t begin, std::size_t end) {
        const auto block = x.middleRows(begin, end - begin);
        Eigen::MatrixXd g(d, d);
        if (weights.size())
          g.noalias() = block.transpose() * weights.segment(begin, end - begin).asDiagonal() * block;
        else
          g.noalias() = block.transpose() * block;
        return g;
      },
      [](Eigen::MatrixXd acc, const Eigen::MatrixXd& part) {
        acc += part;
        return acc;
      });
}

/// X^T W y over fixed row chunks.
inline Eigen::VectorXd weighted_moment(const FeatureMatrix& x, const Eigen::VectorXd& y,
                                       const Eigen::VectorXd& weights, int jobs = 1) {
  const Eigen::Index d = x.cols();
  return chunked_reduce(
      static_cast<std::size_t>(x.rows()), kRowChunk, jobs, Eigen::VectorXd(Eigen::VectorXd::Zero(d)),
      [&](std::size_t begin, std::size_t end) {
        const auto n = static_cast<Eigen::Index>(end - begin);
        Eigen::VectorXd v(d);
        if (weights.size())
          v.noalias() = x.middleRows(begin, n).transpose() *
                        weights.segment(begin, n).cwiseProduct(y.segment(begin, n));
        else
          v.noalias() = x.middleRows(begin, n).transpose() * y.segment(begin, n);
        return v;
      },
      [](Eigen::VectorXd acc, const Eigen::VectorXd& part) {
        acc += part;
        return acc;
      });
}

/// Factorizes the regularized Gram matrix. Throws SingularMatrixError when
/// lambda = 0 and the Gram matrix is (numerically) singular.
inline RidgeFactor ridge_factorize(const FeatureMatrix& features, double lambda,
                                   const Eigen::VectorXd& weights = {}, int jobs = 1) {
  if (lambda < 0.0 || !std::isfinite(lambda)) throw Error("ridge_factorize: lambda must be >= 0");
  if (features.rows() < 1 || features.cols() < 1) throw Error("ridge_factorize: empty feature matrix");
  Eigen::MatrixXd gram = weighted_gram(features, weights, jobs);
  gram.diagonal().array() += lambda;
  RidgeFactor factor{Eigen::LLT<Eigen::MatrixXd>(gram), lambda, gram.rows()};
  const double scale = gram.diagonal().maxCoeff();
  const Eigen::VectorXd pivots = Eigen::MatrixXd(factor.llt.matrixL()).diagonal();
  if (factor.llt.info() != Eigen::Success || !(scale > 0.0) || !pivots.allFinite() ||
      pivots.array().square().minCoeff() <= 1e-13 * scale)
    throw SingularMatrixError("Gram matrix is singular at lambda = " + std::to_string(lambda) +
                              "; add regularization");
  return factor;
}

/// w = (Phi W Phi^T + lambda I)^{-1} Phi W mu using a precomputed factor.
inline LinearModel ridge_solve(const RidgeFactor& factor, const FeatureMatrix& features,
                               const Eigen::VectorXd& targets, const Eigen::VectorXd& weights = {},
                               int jobs = 1) {
  if (features.cols() != factor.dim) throw Error("ridge_solve: feature dimension != factor dimension");
  if (targets.size() != features.rows()) throw Error("ridge_solve: target count != example count");
  return {factor.llt.solve(weighted_moment(features, targets, weights, jobs))};
}

/// lambda ||w||^2 + sum_i w_i (<w, phi_i> - mu_i)^2
inline double ridge_objective(const RegressionDataset& data, double lambda, const Eigen::VectorXd& w) {
  const Eigen::VectorXd residual = *data.features * w - data.targets;
  const double loss = data.weights.size() ? data.weights.dot(residual.cwiseAbs2()) : residual.squaredNorm();
  return lambda * w.squaredNorm() + loss;
}

enum class IterativeMethod { conjugate_gradient, sgd };

struct IterativeFit {
  LinearModel model;
  double residual = 0.0;  // ||grad|| / 2 = ||A w - b|| of the normal equations
  int iterations = 0;
  bool converged = false;
};

/// Minimizes the ridge objective without forming the Gram matrix.
/// Conjugate gradients stop when ||A w - b|| <= tol ||b||; SGD runs
/// `max_iter` shuffled epochs with constant step 0.5 / max ||phi||^2.
inline IterativeFit ridge_iterative(const RegressionDataset& data, double lambda, IterativeMethod method,
                                    double tol = 1e-12, int max_iter = 1000, std::uint64_t seed = 0) {
  data.validate();
  if (lambda < 0.0) throw Error("ridge_iterative: lambda must be >= 0");
  const FeatureMatrix& x = *data.features;
  const Eigen::Index d = x.cols(), n = x.rows();
  auto apply = [&](const Eigen::VectorXd& v) -> Eigen::VectorXd {
    Eigen::VectorXd xv = x * v;
    if (data.weights.size()) xv.array() *= data.weights.array();
    Eigen::VectorXd out = x.transpose() * xv;
    out += lambda * v;
    return out;
  };
  Eigen::VectorXd wy = data.targets;
  if (data.weights.size()) wy.array() *= data.weights.array();
  const Eigen::VectorXd b = x.transpose() * wy;
  const double b_norm = b.norm();

  IterativeFit fit;
  fit.model.w = Eigen::VectorXd::Zero(d);
  Eigen::VectorXd& w = fit.model.w;

  if (method == IterativeMethod::conjugate_gradient) {
    Eigen::VectorXd r = b;
    Eigen::VectorXd p = r;
    double rr = r.squaredNorm();
    fit.residual = std::sqrt(rr);
    if (fit.residual <= tol * b_norm) {
      fit.converged = true;
      return fit;
    }
    for (int it = 0; it < max_iter; ++it) {
      const Eigen::VectorXd ap = apply(p);
      const double curvature = p.dot(ap);
      if (!(curvature > 0.0)) break;
      const double alpha = rr / curvature;
      w += alpha * p;
      r -= alpha * ap;
      const double rr_next = r.squaredNorm();
      fit.iterations = it + 1;
      // Recompute the true residual periodically to avoid drift.
      if ((it + 1) % 50 == 0) {
        r = b - apply(w);
        fit.residual = r.norm();
      } else {
        fit.residual = std::sqrt(rr_next);
      }
      if (fit.residual <= tol * b_norm) {
        fit.residual = (b - apply(w)).norm();
        if (fit.residual <= tol * b_norm) {
          fit.converged = true;
          break;
        }
        r = b - apply(w);
      }
      p = r + (r.squaredNorm() / rr) * p;
      rr = r.squaredNorm();
    }
    if (!fit.converged) fit.residual = (b - apply(w)).norm();
    return fit;
  }

  // SGD on lambda/N ||w||^2 + w_i (<w,phi_i> - mu_i)^2 per example.
  double bound = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) bound = std::max(bound, x.row(i).squaredNorm() * data.weight(i));
  const double step = 0.5 / std::max(bound + lambda / n, 1e-300);
  std::vector<Eigen::Index> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  for (int epoch = 0; epoch < max_iter; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (Eigen::Index i : order) {
      const double err = x.row(i).dot(w) - data.targets[i];
      w -= step * (data.weight(i) * err * x.row(i).transpose() + (lambda / n) * w);
    }
    fit.iterations = epoch + 1;
  }
  fit.residual = (b - apply(w)).norm();
  fit.converged = fit.residual <= tol * b_norm;
  return fit;
}

// ---------------------------------------------------------------------------
// Gradient-boosted oblivious trees

struct GbtParams {
  int n_trees = 500;
  int depth = 6;
  double learning_rate = 0.1;
  double subsample = 1.0;  // fraction of rows drawn (without replacement) per tree
  int max_bins = 32;       // candidate thresholds per feature
  std::uint64_t seed = 0;
};

namespace detail {

/// Up to max_bins quantile thresholds per feature (split: x > threshold).
inline std::vector<std::vector<double>> quantile_borders(const FeatureMatrix& x, int max_bins) {
  std::vector<std::vector<double>> borders(x.cols());
  std::vector<double> column(x.rows());
  for (Eigen::Index f = 0; f < x.cols(); ++f) {
    for (Eigen::Index i = 0; i < x.rows(); ++i) column[i] = x(i, f);
    std::sort(column.begin(), column.end());
    std::vector<double> distinct;
    std::unique_copy(column.begin(), column.end(), std::back_inserter(distinct));
    auto& out = borders[f];
    if (static_cast<int>(distinct.size()) - 1 <= max_bins) {
      for (std::size_t i = 0; i + 1 < distinct.size(); ++i) out.push_back(0.5 * (distinct[i] + distinct[i + 1]));
    } else {
      for (int q = 1; q <= max_bins; ++q) {
        const auto pos = static_cast<std::size_t>((static_cast<double>(q) / (max_bins + 1)) * column.size());
        const double v = column[std::min(pos, column.size() - 1)];
        if (v < distinct.back() && (out.empty() || v > out.back())) out.push_back(v);
      }
    }
  }
  return borders;
}

}  // namespace detail

/// Stagewise least-squares boosting of oblivious trees. Every level of a tree
/// uses the (feature, threshold) pair with the largest squared-error gain
/// over all current leaves; leaves hold the shrunken mean residual.
inline TreeEnsemble gbt_train(const RegressionDataset& data, const GbtParams& params = {}) {
  data.validate();
  if (data.size() < 2) throw Error("gbt_train: need at least two examples");
  if (params.depth < 1 || params.depth > 16) throw Error("gbt_train: depth must be in [1, 16]");
  if (params.n_trees < 0 || !(params.learning_rate > 0.0)) throw Error("gbt_train: bad parameters");
  if (!(params.subsample > 0.0 && params.subsample <= 1.0)) throw Error("gbt_train: subsample in (0,1]");

  const FeatureMatrix& x = *data.features;
  const Eigen::Index n = x.rows(), d = x.cols();
  TreeEnsemble model;
  model.learning_rate = params.learning_rate;
  model.depth = params.depth;
  model.dim = static_cast<int>(d);

  double weight_sum = 0.0, weighted_target = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    weight_sum += data.weight(i);
    weighted_target += data.weight(i) * data.targets[i];
  }
  if (!(weight_sum > 0.0)) throw Error("gbt_train: all example weights are zero");
  model.base_score = weighted_target / weight_sum;

  const auto borders = detail::quantile_borders(x, params.max_bins);
  std::vector<int> bins_per_feature(d);
  std::vector<std::uint8_t> binned(static_cast<std::size_t>(n) * d);
  for (Eigen::Index f = 0; f < d; ++f) {
    const auto& b = borders[f];
    bins_per_feature[f] = static_cast<int>(b.size()) + 1;
    for (Eigen::Index i = 0; i < n; ++i)
      binned[i * d + f] = static_cast<std::uint8_t>(std::lower_bound(b.begin(), b.end(), x(i, f)) - b.begin());
  }
  const bool any_split = std::any_of(bins_per_feature.begin(), bins_per_feature.end(), [](int b) { return b > 1; });
  if (!any_split) return model;

  Eigen::VectorXd residual = data.targets.array() - model.base_score;
  std::vector<int> leaf(n);
  std::vector<Eigen::Index> rows(n);
  std::iota(rows.begin(), rows.end(), 0);
  std::mt19937_64 rng(params.seed);
  const int max_bin = *std::max_element(bins_per_feature.begin(), bins_per_feature.end());

  for (int t = 0; t < params.n_trees; ++t) {
    if (residual.cwiseAbs().maxCoeff() <= 1e-12) break;
    std::vector<Eigen::Index> active;
    if (params.subsample < 1.0) {
      std::shuffle(rows.begin(), rows.end(), rng);
      active.assign(rows.begin(), rows.begin() + std::max<Eigen::Index>(1, std::llround(params.subsample * n)));
      std::sort(active.begin(), active.end());
    } else {
      active = rows;
    }
    std::fill(leaf.begin(), leaf.end(), 0);
    ObliviousTree tree;
    for (int level = 0; level < params.depth; ++level) {
      const int num_leaves = 1 << level;
      // hist[(leaf * d + f) * max_bin + bin] = (sum of w*g, sum of w)
      std::vector<double> grad(static_cast<std::size_t>(num_leaves) * d * max_bin, 0.0);
      std::vector<double> mass(grad.size(), 0.0);
      for (Eigen::Index i : active) {
        const double w = data.weight(i);
        const double g = w * residual[i];
        const std::size_t base = static_cast<std::size_t>(leaf[i]) * d;
        for (Eigen::Index f = 0; f < d; ++f) {
          const std::size_t slot = (base + f) * max_bin + binned[i * d + f];
          grad[slot] += g;
          mass[slot] += w;
        }
      }
      double best_gain = -std::numeric_limits<double>::infinity();
      int best_feature = -1, best_border = -1;
      for (Eigen::Index f = 0; f < d; ++f) {
        const int nb = bins_per_feature[f];
        for (int k = 0; k + 1 < nb; ++k) {  // left: bins <= k
          double gain = 0.0;
          for (int l = 0; l < num_leaves; ++l) {
            const std::size_t base = (static_cast<std::size_t>(l) * d + f) * max_bin;
            double gl = 0.0, ml = 0.0, gt = 0.0, mt = 0.0;
            for (int b = 0; b < nb; ++b) {
              gt += grad[base + b];
              mt += mass[base + b];
              if (b <= k) {
                gl += grad[base + b];
                ml += mass[base + b];
              }
            }
            const double gr = gt - gl, mr = mt - ml;
            if (ml > 0.0) gain += gl * gl / ml;
            if (mr > 0.0) gain += gr * gr / mr;
          }
          if (gain > best_gain) {
            best_gain = gain;
            best_feature = static_cast<int>(f);
            best_border = k;
          }
        }
      }
      tree.features.push_back(best_feature);
      tree.thresholds.push_back(borders[best_feature][best_border]);
      for (Eigen::Index i = 0; i < n; ++i)
        if (binned[i * d + best_feature] > best_border) leaf[i] |= 1 << level;
    }
    const int num_leaves = 1 << params.depth;
    std::vector<double> sum(num_leaves, 0.0), mass(num_leaves, 0.0);
    for (Eigen::Index i : active) {
      sum[leaf[i]] += data.weight(i) * residual[i];
      mass[leaf[i]] += data.weight(i);
    }
    tree.leaf_values.assign(num_leaves, 0.0);
    for (int l = 0; l < num_leaves; ++l)
      if (mass[l] > 0.0) tree.leaf_values[l] = params.learning_rate * sum[l] / mass[l];
    for (Eigen::Index i = 0; i < n; ++i) residual[i] -= tree.leaf_values[leaf[i]];
    model.trees.push_back(std::move(tree));
  }
  return model;
}

// ---------------------------------------------------------------------------
// Serialization

inline Json to_json(const Regressor& model) {
  return std::visit(
      [](const auto& m) -> Json {
        using M = std::decay_t<decltype(m)>;
        Json j;
        if constexpr (std::is_same_v<M, ConstantModel>) {
          j["kind"] = "constant";
          j["value"] = m.value;
        } else if constexpr (std::is_same_v<M, LinearModel>) {
          j["kind"] = "linear";
          j["w"] = std::vector<double>(m.w.data(), m.w.data() + m.w.size());
        } else {
          j["kind"] = "gbt";
          j["dim"] = m.dim;
          j["depth"] = m.depth;
          j["learning_rate"] = m.learning_rate;
          j["base_score"] = m.base_score;
          Json trees = Json::array();
          for (const auto& t : m.trees)
            trees.push_back(Json{{"features", t.features}, {"thresholds", t.thresholds}, {"leaves", t.leaf_values}});
          j["trees"] = std::move(trees);
        }
        return j;
      },
      model);
}

inline Regressor regressor_from_json(const Json& j) {
  const auto kind = j.at("kind").get<std::string>();
  if (kind == "constant") return ConstantModel{j.at("value").get<double>()};
  if (kind == "linear") {
    const auto w = j.at("w").get<std::vector<double>>();
    return LinearModel{Eigen::Map<const Eigen::VectorXd>(w.data(), static_cast<Eigen::Index>(w.size()))};
  }
  if (kind == "gbt") {
    TreeEnsemble m;
    m.dim = j.at("dim").get<int>();
    m.depth = j.at("depth").get<int>();
    m.learning_rate = j.at("learning_rate").get<double>();
    m.base_score = j.at("base_score").get<double>();
    for (const auto& t : j.at("trees")) {
      ObliviousTree tree{t.at("features").get<std::vector<int>>(), t.at("thresholds").get<std::vector<double>>(),
                         t.at("leaves").get<std::vector<double>>()};
      if (tree.features.size() != tree.thresholds.size() ||
          tree.leaf_values.size() != (std::size_t{1} << tree.features.size()))
        throw FormatError("malformed oblivious tree");
      for (int f : tree.features)
        if (f < 0 || f >= m.dim) throw FormatError("tree feature index out of range");
      m.trees.push_back(std::move(tree));
    }
    return m;
  }
  throw FormatError("unknown regressor kind '" + kind + "'");
}

}  // namespace lscrf
