#pragma once

// LS-CRF training: every edge of every annotated graph becomes one example
// for each of the r^2 label-pair regression problems, with target
// 1{y_s = j and y_t = k}. The r^2 problems are independent.

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "lscrf/graph.hpp"
#include "lscrf/parallel.hpp"
#include "lscrf/regress.hpp"

namespace lscrf {

enum class RegressorKind { linear, gbt };

inline std::string to_string(RegressorKind kind) { return kind == RegressorKind::linear ? "linear" : "gbt"; }

inline RegressorKind regressor_kind_from_string(const std::string& s) {
  if (s == "linear") return RegressorKind::linear;
  if (s == "gbt") return RegressorKind::gbt;
  throw Error("unknown regressor kind '" + s + "'");
}

struct SamplingConfig {
  double unary_fraction = 1.0;
  double pair_fraction = 1.0;
  bool balance = true;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(unary_fraction > 0.0 && unary_fraction <= 1.0) || !(pair_fraction > 0.0 && pair_fraction <= 1.0))
      throw Error("sampling fractions must lie in (0, 1]");
  }
};

/// When to train per-node regressors f_j on node features.
enum class UnaryTraining { automatic, always, never };

struct TrainConfig {
  RegressorKind kind = RegressorKind::linear;
  SamplingConfig sampling;
  int min_pair_count = 20;
  double rare_pair_constant = 1e-3;
  double lambda = 0.0;  // 0: unregularized, with automatic fallback when singular
  GbtParams gbt;
  bool pairwise = true;  // false trains a unary-only model
  UnaryTraining unaries = UnaryTraining::automatic;
  // Adds every edge a second time with feature blocks [0,b) and [b,2b)
  // swapped and the pair label transposed. b = symmetric_block.
  bool augment_symmetric = false;
  int symmetric_block = 0;
  // Optional per-example weight by true label pair (r*r entries) or by true
  // node label (r entries); empty means unit weights.
  std::vector<double> pair_class_weights;
  std::vector<double> node_class_weights;
  int jobs = 1;
};

struct PairwiseModel {
  int num_labels = 0;
  RegressorKind kind = RegressorKind::linear;
  int node_dim = 0;
  int edge_dim = 0;
  std::vector<Regressor> pair_functions;   // r*r, row-major (j, k); empty for unary-only models
  std::vector<Regressor> unary_functions;  // r, or empty
  double rare_pair_constant = 1e-3;
  double lambda_used = 0.0;
  bool all_constant = false;  // every pair fell back to the constant
  std::vector<std::string> label_names;
  Json provenance = Json::object();

  bool has_pairwise() const { return !pair_functions.empty(); }
  bool has_unaries() const { return !unary_functions.empty(); }
  const Regressor& pair(int j, int k) const { return pair_functions[static_cast<std::size_t>(j) * num_labels + k]; }
};

struct LabeledPair {
  int source_label;
  int target_label;
};

namespace detail {

/// Splits `need` items over buckets with the given availability as evenly as
/// possible; buckets that run out pass their share to the others.
inline std::vector<std::size_t> even_quotas(const std::vector<std::size_t>& available, std::size_t need) {
  std::vector<std::size_t> quota(available.size(), 0);
  std::size_t total = 0;
  for (auto a : available) total += a;
  need = std::min(need, total);
  while (need > 0) {
    std::size_t open = 0;
    for (std::size_t b = 0; b < available.size(); ++b) open += quota[b] < available[b];
    const std::size_t share = std::max<std::size_t>(1, need / open);
    for (std::size_t b = 0; b < available.size() && need > 0; ++b) {
      const std::size_t give = std::min({share, available[b] - quota[b], need});
      quota[b] += give;
      need -= give;
    }
  }
  return quota;
}

inline void take_random(std::vector<std::size_t> bucket, std::size_t count, std::mt19937_64& rng,
                        std::vector<std::size_t>& out) {
  std::shuffle(bucket.begin(), bucket.end(), rng);
  out.insert(out.end(), bucket.begin(), bucket.begin() + static_cast<std::ptrdiff_t>(count));
}

inline std::size_t rounded(double v) { return static_cast<std::size_t>(std::llround(v)); }

}  // namespace detail

/// Subsamples a pool of labeled edges to about pair_fraction of its size.
/// The same-label / different-label ratio of the pool is preserved; with
/// `balance`, every label pair inside each group is equally likely up to
/// availability. Returns sorted pool indices.
inline std::vector<std::size_t> balanced_sample(std::span<const LabeledPair> pool, int num_labels,
                                                const SamplingConfig& sampling) {
  sampling.validate();
  std::vector<std::size_t> chosen;
  if (sampling.pair_fraction >= 1.0 || pool.empty()) {
    chosen.resize(pool.size());
    std::iota(chosen.begin(), chosen.end(), 0);
    return chosen;
  }
  const std::size_t r = static_cast<std::size_t>(num_labels);
  std::vector<std::vector<std::size_t>> buckets(r * r);
  std::size_t same_total = 0;
  for (std::size_t i = 0; i < pool.size(); ++i) {
    const auto& p = pool[i];
    if (p.source_label < 0 || p.source_label >= num_labels || p.target_label < 0 || p.target_label >= num_labels)
      throw Error("balanced_sample: label out of range");
    buckets[p.source_label * r + p.target_label].push_back(i);
    same_total += p.source_label == p.target_label;
  }
  const std::size_t target = std::max<std::size_t>(1, detail::rounded(sampling.pair_fraction * pool.size()));
  const std::size_t same_need = detail::rounded(static_cast<double>(target) * same_total / pool.size());
  const std::size_t diff_need = target - std::min(target, same_need);

  std::mt19937_64 rng(sampling.seed);
  for (const bool same : {true, false}) {
    const std::size_t need = same ? same_need : diff_need;
    std::vector<std::size_t> ids;
    for (std::size_t b = 0; b < r * r; ++b)
      if ((b / r == b % r) == same) ids.push_back(b);
    if (sampling.balance) {
      std::vector<std::size_t> available;
      for (auto b : ids) available.push_back(buckets[b].size());
      const auto quota = detail::even_quotas(available, need);
      for (std::size_t q = 0; q < ids.size(); ++q) detail::take_random(buckets[ids[q]], quota[q], rng, chosen);
    } else {
      std::vector<std::size_t> group;
      for (auto b : ids) group.insert(group.end(), buckets[b].begin(), buckets[b].end());
      std::sort(group.begin(), group.end());
      const std::size_t count = std::min(need, group.size());
      detail::take_random(std::move(group), count, rng, chosen);
    }
  }
  std::sort(chosen.begin(), chosen.end());
  return chosen;
}

/// Node subsample of about `fraction` of the pool; class-balanced when asked.
inline std::vector<std::size_t> sample_nodes(std::span<const int> labels, int num_labels, double fraction,
                                             bool balance, std::uint64_t seed) {
  std::vector<std::size_t> chosen;
  if (fraction >= 1.0 || labels.empty()) {
    chosen.resize(labels.size());
    std::iota(chosen.begin(), chosen.end(), 0);
    return chosen;
  }
  const std::size_t need = std::max<std::size_t>(1, detail::rounded(fraction * labels.size()));
  std::mt19937_64 rng(seed);
  if (!balance) {
    std::vector<std::size_t> all(labels.size());
    std::iota(all.begin(), all.end(), 0);
    detail::take_random(std::move(all), need, rng, chosen);
  } else {
    std::vector<std::vector<std::size_t>> buckets(num_labels);
    for (std::size_t i = 0; i < labels.size(); ++i) buckets.at(labels[i]).push_back(i);
    std::vector<std::size_t> available;
    for (const auto& b : buckets) available.push_back(b.size());
    const auto quota = detail::even_quotas(available, need);
    for (int j = 0; j < num_labels; ++j) detail::take_random(buckets[j], quota[j], rng, chosen);
  }
  std::sort(chosen.begin(), chosen.end());
  return chosen;
}

/// The r^2 regression problems share one feature matrix; targets[j*r+k] holds
/// the indicator targets of pair (j,k).
struct PairDatasets {
  int num_labels = 0;
  std::shared_ptr<const FeatureMatrix> features;
  std::vector<Eigen::VectorXd> targets;
  Eigen::VectorXd weights;
  std::vector<std::size_t> positives;  // per pair

  RegressionDataset dataset(int j, int k) const {
    return {features, targets[static_cast<std::size_t>(j) * num_labels + k], weights};
  }
};

namespace detail {

inline void check_training_corpus(std::span<const Instance> instances, int num_labels) {
  if (instances.empty()) throw Error("no training instances");
  if (num_labels < 2) throw Error("training needs at least two labels");
  const auto node_dim = instances.front().node_features.cols();
  const auto edge_dim = instances.front().edge_features.cols();
  for (const auto& inst : instances) {
    inst.validate(num_labels);
    if (!inst.labels) throw Error("instance '" + inst.id + "' has no ground-truth labels");
    if (inst.node_features.cols() != node_dim || (inst.graph.num_edges() && inst.edge_features.cols() != edge_dim))
      throw Error("instance '" + inst.id + "': feature dimension differs from the rest of the corpus");
  }
}

inline int corpus_edge_dim(std::span<const Instance> instances) {
  for (const auto& inst : instances)
    if (inst.graph.num_edges()) return static_cast<int>(inst.edge_features.cols());
  return static_cast<int>(instances.front().edge_features.cols());
}

}  // namespace detail

inline PairDatasets assemble_pair_datasets(std::span<const Instance> instances, int num_labels,
                                           const SamplingConfig& sampling, const TrainConfig& config = {}) {
  detail::check_training_corpus(instances, num_labels);
  sampling.validate();
  const int r = num_labels;
  const int edge_dim = detail::corpus_edge_dim(instances);

  struct EdgeRef {
    int instance;
    int edge;
  };
  std::vector<EdgeRef> refs;
  std::vector<LabeledPair> pool;
  for (int i = 0; i < static_cast<int>(instances.size()); ++i) {
    const auto& inst = instances[i];
    for (int e = 0; e < inst.graph.num_edges(); ++e) {
      const auto& ed = inst.graph.edge(e);
      refs.push_back({i, e});
      pool.push_back({(*inst.labels)[ed.s], (*inst.labels)[ed.t]});
    }
  }
  const auto kept = balanced_sample(pool, r, sampling);
  const bool augment = config.augment_symmetric;
  if (augment && (config.symmetric_block <= 0 || 2 * config.symmetric_block > edge_dim))
    throw Error("augment_symmetric needs 0 < 2 * symmetric_block <= edge feature dimension");
  if (!config.pair_class_weights.empty() && config.pair_class_weights.size() != static_cast<std::size_t>(r * r))
    throw Error("pair_class_weights must have r*r entries");

  const std::size_t rows = kept.size() * (augment ? 2 : 1);
  auto features = std::make_shared<FeatureMatrix>(rows, edge_dim);
  std::vector<LabeledPair> row_labels(rows);
  parallel_for(kept.size(), config.jobs, [&](std::size_t n) {
    const auto& ref = refs[kept[n]];
    features->row(n) = instances[ref.instance].edge_features.row(ref.edge);
    row_labels[n] = pool[kept[n]];
    if (augment) {
      const std::size_t m = kept.size() + n;
      const int b = config.symmetric_block;
      features->row(m) = features->row(n);
      features->row(m).segment(0, b) = features->row(n).segment(b, b);
      features->row(m).segment(b, b) = features->row(n).segment(0, b);
      row_labels[m] = {pool[kept[n]].target_label, pool[kept[n]].source_label};
    }
  });

  PairDatasets out;
  out.num_labels = r;
  out.features = std::move(features);
  out.targets.assign(static_cast<std::size_t>(r) * r, Eigen::VectorXd::Zero(static_cast<Eigen::Index>(rows)));
  out.positives.assign(static_cast<std::size_t>(r) * r, 0);
  if (!config.pair_class_weights.empty()) out.weights.resize(static_cast<Eigen::Index>(rows));
  for (std::size_t n = 0; n < rows; ++n) {
    const std::size_t pair = static_cast<std::size_t>(row_labels[n].source_label) * r + row_labels[n].target_label;
    out.targets[pair][static_cast<Eigen::Index>(n)] = 1.0;
    ++out.positives[pair];
    if (out.weights.size()) out.weights[static_cast<Eigen::Index>(n)] = config.pair_class_weights[pair];
  }
  return out;
}

namespace detail {

struct FitOutcome {
  std::vector<Regressor> functions;
  double lambda_used = 0.0;
};

/// Fits one regressor per target vector (shared features); targets with
/// fewer than min_count positives get the constant fallback.
inline FitOutcome fit_indicator_problems(const std::shared_ptr<const FeatureMatrix>& features,
                                         const std::vector<Eigen::VectorXd>& targets,
                                         const Eigen::VectorXd& weights, const std::vector<std::size_t>& positives,
                                         const TrainConfig& config, std::uint64_t seed_offset) {
  FitOutcome out;
  out.functions.assign(targets.size(), ConstantModel{config.rare_pair_constant});
  std::vector<std::size_t> active;
  for (std::size_t p = 0; p < targets.size(); ++p)
    if (positives[p] >= static_cast<std::size_t>(std::max(config.min_pair_count, 1))) active.push_back(p);
  if (active.empty()) return out;

  if (config.kind == RegressorKind::linear) {
    // One factorization serves every label pair.
    double lambda = config.lambda;
    RidgeFactor factor = [&] {
      try {
        return ridge_factorize(*features, lambda, weights, config.jobs);
      } catch (const SingularMatrixError&) {
        if (lambda > 0.0) throw;
        const Eigen::MatrixXd gram = weighted_gram(*features, weights, config.jobs);
        lambda = 1e-6 * gram.trace() / static_cast<double>(gram.rows());
        if (!(lambda > 0.0)) lambda = 1e-6;
        return ridge_factorize(*features, lambda, weights, config.jobs);
      }
    }();
    out.lambda_used = lambda;
    parallel_for(active.size(), config.jobs, [&](std::size_t a) {
      const auto p = active[a];
      out.functions[p] = ridge_solve(factor, *features, targets[p], weights);
    });
  } else {
    parallel_for(active.size(), config.jobs, [&](std::size_t a) {
      const auto p = active[a];
      GbtParams params = config.gbt;
      params.seed = stream_seed(config.gbt.seed, seed_offset + p);
      out.functions[p] = gbt_train(RegressionDataset{features, targets[p], weights}, params);
    });
  }
  return out;
}

}  // namespace detail

/// Trains the per-pair regressors f_jk (and, when needed, per-label node
/// regressors f_j). Pairs seen fewer than min_pair_count times get the
/// constant `rare_pair_constant`. When `phase_times` is given, wall-clock
/// seconds for dataset assembly and regression are appended to it.
inline PairwiseModel train_lscrf(std::span<const Instance> instances, int num_labels, const TrainConfig& config,
                                 std::vector<std::pair<std::string, double>>* phase_times = nullptr) {
  using Clock = std::chrono::steady_clock;
  double assemble_seconds = 0.0, regress_seconds = 0.0;
  auto elapsed = [](Clock::time_point since) { return std::chrono::duration<double>(Clock::now() - since).count(); };
  detail::check_training_corpus(instances, num_labels);
  config.sampling.validate();
  if (!(config.rare_pair_constant > 0.0 && config.rare_pair_constant < 1.0))
    throw Error("rare_pair_constant must lie in (0,1)");
  const int r = num_labels;
  PairwiseModel model;
  model.num_labels = r;
  model.kind = config.kind;
  model.rare_pair_constant = config.rare_pair_constant;
  model.node_dim = static_cast<int>(instances.front().node_features.cols());
  model.edge_dim = detail::corpus_edge_dim(instances);

  std::size_t total_edges = 0;
  bool isolated = false;
  for (const auto& inst : instances) {
    total_edges += inst.graph.num_edges();
    for (int s = 0; s < inst.graph.num_nodes() && !isolated; ++s) isolated = inst.graph.degree(s) == 0;
  }

  if (config.pairwise && total_edges > 0) {
    auto start = Clock::now();
    const auto data = assemble_pair_datasets(instances, r, config.sampling, config);
    assemble_seconds += elapsed(start);
    start = Clock::now();
    auto fit = detail::fit_indicator_problems(data.features, data.targets, data.weights, data.positives, config, 0);
    regress_seconds += elapsed(start);
    model.pair_functions = std::move(fit.functions);
    model.lambda_used = fit.lambda_used;
    model.all_constant = std::all_of(model.pair_functions.begin(), model.pair_functions.end(),
                                     [](const Regressor& f) { return std::holds_alternative<ConstantModel>(f); });
  }

  const bool want_unaries = !config.pairwise || total_edges == 0 || config.unaries == UnaryTraining::always ||
                            (config.unaries == UnaryTraining::automatic && isolated);
  if (want_unaries && config.unaries != UnaryTraining::never) {
    if (!config.node_class_weights.empty() && config.node_class_weights.size() != static_cast<std::size_t>(r))
      throw Error("node_class_weights must have r entries");
    auto start = Clock::now();
    std::vector<int> labels;
    std::vector<std::pair<int, int>> refs;
    for (int i = 0; i < static_cast<int>(instances.size()); ++i)
      for (int s = 0; s < instances[i].graph.num_nodes(); ++s) {
        labels.push_back((*instances[i].labels)[s]);
        refs.emplace_back(i, s);
      }
    const auto kept = sample_nodes(labels, r, config.sampling.unary_fraction, config.sampling.balance,
                                   stream_seed(config.sampling.seed, 1));
    auto features = std::make_shared<FeatureMatrix>(static_cast<Eigen::Index>(kept.size()), model.node_dim);
    std::vector<Eigen::VectorXd> targets(r, Eigen::VectorXd::Zero(static_cast<Eigen::Index>(kept.size())));
    std::vector<std::size_t> positives(r, 0);
    Eigen::VectorXd weights;
    if (!config.node_class_weights.empty()) weights.resize(static_cast<Eigen::Index>(kept.size()));
    for (std::size_t n = 0; n < kept.size(); ++n) {
      const auto [i, s] = refs[kept[n]];
      features->row(static_cast<Eigen::Index>(n)) = instances[i].node_features.row(s);
      const int y = labels[kept[n]];
      targets[y][static_cast<Eigen::Index>(n)] = 1.0;
      ++positives[y];
      if (weights.size()) weights[static_cast<Eigen::Index>(n)] = config.node_class_weights[y];
    }
    assemble_seconds += elapsed(start);
    start = Clock::now();
    auto fit = detail::fit_indicator_problems(features, targets, weights, positives, config,
                                              static_cast<std::uint64_t>(r) * r);
    regress_seconds += elapsed(start);
    model.unary_functions = std::move(fit.functions);
    if (!model.has_pairwise()) model.lambda_used = fit.lambda_used;
  }
  if (phase_times) {
    phase_times->emplace_back("assemble", assemble_seconds);
    phase_times->emplace_back("regress", regress_seconds);
  }
  return model;
}

/// Node marginal implied by the pair regressors on one edge: for the source
/// side f_s;j = sum_k clamp01(f_jk(phi)), for the target side sum over j.
inline std::vector<double> unary_from_pairwise(const PairwiseModel& model, std::span<const double> edge_features,
                                               bool source_side) {
  if (!model.has_pairwise()) throw Error("unary_from_pairwise: model has no pairwise regressors");
  const int r = model.num_labels;
  std::vector<double> out(r, 0.0);
  for (int j = 0; j < r; ++j)
    for (int k = 0; k < r; ++k) {
      const double f = clamp01(predict(model.pair(j, k), edge_features));
      out[source_side ? j : k] += f;
    }
  return out;
}

// ---------------------------------------------------------------------------
// Serialization

inline Json to_json(const PairwiseModel& model) {
  Json j;
  j["format"] = "lscrf-model";
  j["version"] = 1;
  j["type"] = "lscrf";
  j["num_labels"] = model.num_labels;
  j["label_names"] = model.label_names;
  j["regressor_kind"] = to_string(model.kind);
  j["node_dim"] = model.node_dim;
  j["edge_dim"] = model.edge_dim;
  j["rare_pair_constant"] = model.rare_pair_constant;
  j["lambda_used"] = model.lambda_used;
  j["all_constant"] = model.all_constant;
  Json pairs = Json::array();
  for (const auto& f : model.pair_functions) pairs.push_back(to_json(f));
  j["pair_functions"] = std::move(pairs);
  Json unaries = Json::array();
  for (const auto& f : model.unary_functions) unaries.push_back(to_json(f));
  j["unary_functions"] = std::move(unaries);
  j["provenance"] = model.provenance;
  return j;
}

inline PairwiseModel pairwise_model_from_json(const Json& j) {
  if (j.value("format", "") != "lscrf-model" || j.value("type", "") != "lscrf")
    throw FormatError("not an LS-CRF model file");
  if (j.at("version").get<int>() != 1) throw FormatError("unsupported model version");
  PairwiseModel model;
  model.num_labels = j.at("num_labels").get<int>();
  model.label_names = j.at("label_names").get<std::vector<std::string>>();
  model.kind = regressor_kind_from_string(j.at("regressor_kind").get<std::string>());
  model.node_dim = j.at("node_dim").get<int>();
  model.edge_dim = j.at("edge_dim").get<int>();
  model.rare_pair_constant = j.at("rare_pair_constant").get<double>();
  model.lambda_used = j.at("lambda_used").get<double>();
  model.all_constant = j.at("all_constant").get<bool>();
  for (const auto& f : j.at("pair_functions")) model.pair_functions.push_back(regressor_from_json(f));
  for (const auto& f : j.at("unary_functions")) model.unary_functions.push_back(regressor_from_json(f));
  if (model.num_labels < 1 ||
      (!model.pair_functions.empty() &&
       model.pair_functions.size() != static_cast<std::size_t>(model.num_labels) * model.num_labels) ||
      (!model.unary_functions.empty() && model.unary_functions.size() != static_cast<std::size_t>(model.num_labels)))
    throw FormatError("model regressor counts do not match the label count");
  model.provenance = j.value("provenance", Json::object());
  return model;
}

}  // namespace lscrf
