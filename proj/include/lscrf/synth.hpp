#pragma once

// Synthetic corpora: random trees with a known conditional pair distribution,
// and Potts grids with noisy label-indicator features.

#include <cmath>
#include <cstdio>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "lscrf/corpus.hpp"
#include "lscrf/graph.hpp"
#include "lscrf/inference.hpp"
#include "lscrf/parallel.hpp"
#include "lscrf/predict.hpp"

namespace lscrf {

enum class PairGenerator { linear, logistic, xor_sign };

inline PairGenerator pair_generator_from_string(const std::string& s) {
  if (s == "linear") return PairGenerator::linear;
  if (s == "logistic") return PairGenerator::logistic;
  if (s == "xor") return PairGenerator::xor_sign;
  throw Error("unknown generator '" + s + "' (expected linear, logistic or xor)");
}

inline std::string to_string(PairGenerator g) {
  switch (g) {
    case PairGenerator::linear: return "linear";
    case PairGenerator::logistic: return "logistic";
    case PairGenerator::xor_sign: return "xor";
  }
  return "?";
}

namespace detail {

inline std::string padded_id(const char* prefix, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s%06zu", prefix, i);
  return buf;
}

inline std::vector<std::string> default_label_names(int r) {
  std::vector<std::string> names;
  for (int j = 0; j < r; ++j) names.push_back("label" + std::to_string(j));
  return names;
}

}  // namespace detail

/// Ground-truth f*(phi) over the r*r label pairs of a parent-to-child edge.
///
/// An edge feature vector is [x, mu_s]: x holds `dim` signal features (last
/// one constant 1) and mu_s is the marginal of the parent s. The family
/// shapes a raw table from x:
///   linear:   1/r^2 + W x, floored at 0.05/r^2 (W doubly centered)
///   logistic: softmax(sharpness * W x)
///   xor:      softmax(sharpness * sign(x_0 x_1) * (+1 on the diagonal, -1 off it))
/// whose rows, normalized and mixed with the uniform distribution at rate
/// `noise`, give P(y_t | y_s). Then f*_jk = mu_s(j) P(k | j). The child's
/// marginal is the column sum, so tables of a tree agree on every node and
/// the tree CRF built from them has exactly these pair marginals.
struct PairDistribution {
  PairGenerator generator = PairGenerator::logistic;
  int num_labels = 2;
  int dim = 1;
  Eigen::MatrixXd weights;  // r^2 x dim
  double noise = 0.0;
  double sharpness = 1.0;

  int feature_dim() const { return dim + num_labels; }

  std::vector<double> raw_table(std::span<const double> x) const {
    const int q = num_labels * num_labels;
    std::vector<double> p(q);
    const Eigen::Map<const Eigen::VectorXd> v(x.data(), dim);
    if (generator == PairGenerator::linear) {
      double total = 0.0;
      for (int i = 0; i < q; ++i) total += p[i] = std::max(1.0 / q + weights.row(i).dot(v), 0.05 / q);
      for (auto& e : p) e /= total;
      return p;
    }
    std::vector<double> score(q);
    if (generator == PairGenerator::logistic) {
      for (int i = 0; i < q; ++i) score[i] = sharpness * weights.row(i).dot(v);
    } else {
      const double sign = x[0] * x[1] < 0 ? -1.0 : 1.0;
      for (int j = 0; j < num_labels; ++j)
        for (int k = 0; k < num_labels; ++k) score[j * num_labels + k] = sharpness * sign * (j == k ? 1.0 : -1.0);
    }
    const double hi = *std::max_element(score.begin(), score.end());
    double total = 0.0;
    for (int i = 0; i < q; ++i) total += p[i] = std::exp(score[i] - hi);
    for (auto& e : p) e /= total;
    return p;
  }

  std::vector<double> probabilities(std::span<const double> phi) const {
    if (static_cast<int>(phi.size()) != feature_dim()) throw Error("PairDistribution: feature dimension mismatch");
    const int r = num_labels;
    auto p = raw_table(phi.first(dim));
    for (int j = 0; j < r; ++j) {
      double row_sum = 0.0;
      for (int k = 0; k < r; ++k) row_sum += p[j * r + k];
      for (int k = 0; k < r; ++k)
        p[j * r + k] = phi[dim + j] * ((1.0 - noise) * p[j * r + k] / row_sum + noise / r);
    }
    return p;
  }

  /// Marginal of a root node with latent scores u (r values).
  std::vector<double> root_marginal(std::span<const double> u) const {
    std::vector<double> mu(num_labels, 1.0 / num_labels);
    if (generator == PairGenerator::linear) return mu;  // uniform margins keep f* linear in x
    const double hi = sharpness * *std::max_element(u.begin(), u.end());
    double total = 0.0;
    for (int j = 0; j < num_labels; ++j) total += mu[j] = std::exp(sharpness * u[j] - hi);
    for (auto& v : mu) v /= total;
    return mu;
  }
};

inline PairDistribution make_pair_distribution(PairGenerator generator, int r, int dim, double noise,
                                               std::uint64_t seed, double sharpness = 1.0) {
  LSCRF_REQUIRE(r >= 1 && dim >= 1, "make_pair_distribution: r and dim must be positive");
  LSCRF_REQUIRE(noise >= 0.0 && noise <= 1.0, "make_pair_distribution: noise must lie in [0, 1]");
  if (generator == PairGenerator::xor_sign && dim < 3)
    throw Error("xor generator needs at least 3 edge features (two signals and the constant)");
  PairDistribution f;
  f.generator = generator;
  f.num_labels = r;
  f.dim = dim;
  f.noise = noise;
  f.sharpness = sharpness;
  const int q = r * r;
  std::mt19937_64 rng(splitmix64(seed ^ 0x5eedf00dULL));
  std::normal_distribution<double> normal(0.0, 1.0);
  f.weights = Eigen::MatrixXd::Zero(q, dim);
  for (int i = 0; i < q; ++i)
    for (int d = 0; d < dim; ++d) f.weights(i, d) = normal(rng);
  if (generator == PairGenerator::linear) {
    // Zero row and column sums in every feature slice keep the margins of the
    // unclipped table uniform; the scale keeps the floor inactive for nearly
    // all standard-normal inputs.
    for (int d = 0; d < dim; ++d) {
      Eigen::MatrixXd w(r, r);
      for (int i = 0; i < q; ++i) w(i / r, i % r) = f.weights(i, d);
      const Eigen::VectorXd row_mean = w.rowwise().mean();
      const Eigen::RowVectorXd col_mean = w.colwise().mean();
      const double mean = w.mean();
      w = (w.colwise() - row_mean).rowwise() - col_mean;
      w.array() += mean;
      for (int i = 0; i < q; ++i) f.weights(i, d) = w(i / r, i % r);
    }
    f.weights *= 0.25 / (q * std::sqrt(static_cast<double>(dim)));
  }
  return f;
}

struct TreeCorpusParams {
  std::size_t n_instances = 100;
  int m = 10;
  int r = 2;
  int edge_dim = 4;  // signal features including the constant 1; the parent marginal is appended
  PairGenerator generator = PairGenerator::logistic;
  double noise = 0.0;
  double sharpness = 1.0;
  std::uint64_t seed = 0;
  bool chain = false;            // path graphs instead of random recursive trees
  bool shared_features = false;  // one signal vector per instance, reused on every edge
  int jobs = 1;
};

inline Json to_json(const TreeCorpusParams& p) {
  Json j;
  j["kind"] = "tree";
  j["n_instances"] = p.n_instances;
  j["m"] = p.m;
  j["r"] = p.r;
  j["edge_dim"] = p.edge_dim;
  j["generator"] = to_string(p.generator);
  j["noise"] = p.noise;
  j["sharpness"] = p.sharpness;
  j["seed"] = p.seed;
  j["chain"] = p.chain;
  j["shared_features"] = p.shared_features;
  return j;
}

/// Pair tables f*(phi_e) for every edge, edge-major.
inline std::vector<double> true_pair_tables(const PairDistribution& f, const Instance& instance) {
  std::vector<double> tables;
  tables.reserve(static_cast<std::size_t>(instance.graph.num_edges()) * f.num_labels * f.num_labels);
  for (int e = 0; e < instance.graph.num_edges(); ++e)
    for (double v : f.probabilities(row(instance.edge_features, e))) tables.push_back(v);
  return tables;
}

/// Exact marginals of the generating model of a synthetic tree instance:
/// node marginals are the first r node features, pair marginals are f*.
inline MarginalTables true_marginals(const PairDistribution& f, const Instance& instance) {
  MarginalTables mu;
  mu.num_labels = f.num_labels;
  for (int s = 0; s < instance.graph.num_nodes(); ++s)
    for (int j = 0; j < f.num_labels; ++j) mu.unary.push_back(instance.node_features(s, j));
  mu.pairwise = true_pair_tables(f, instance);
  return mu;
}

/// The tree CRF whose marginals are exactly the true ones.
inline EnergyFunction true_tree_energy(const PairDistribution& f, const Instance& instance) {
  return tree_ml_params(true_marginals(f, instance), instance.graph, 0.0, 1e-9);
}

inline Corpus synth_tree_corpus(const TreeCorpusParams& p, PairDistribution* truth = nullptr) {
  LSCRF_REQUIRE(p.n_instances > 0 && p.m >= 1 && p.r >= 1 && p.edge_dim >= 1,
                "synth_tree_corpus: parameters must be positive");
  const auto f = make_pair_distribution(p.generator, p.r, p.edge_dim, p.noise, p.seed, p.sharpness);
  if (truth) *truth = f;
  const int r = p.r;
  Corpus corpus;
  corpus.label_names = detail::default_label_names(r);
  corpus.schema.node_dim = r + 1;
  corpus.schema.edge_dim = f.feature_dim();
  for (int j = 0; j < r; ++j) corpus.schema.node_names.push_back("true_marginal_" + std::to_string(j));
  corpus.schema.node_names.push_back("bias");
  for (int d = 0; d + 1 < p.edge_dim; ++d) corpus.schema.edge_names.push_back("z" + std::to_string(d));
  corpus.schema.edge_names.push_back("bias");
  for (int j = 0; j < r; ++j) corpus.schema.edge_names.push_back("source_marginal_" + std::to_string(j));
  corpus.provenance = to_json(p);
  corpus.instances.resize(p.n_instances);

  parallel_for(p.n_instances, p.jobs, [&](std::size_t i) {
    std::mt19937_64 rng(stream_seed(p.seed, i));
    std::normal_distribution<double> normal(0.0, 1.0);
    // Every node's parent has a smaller index, so edge v-1 is (parent(v), v)
    // and a single pass in index order sees parents first.
    std::vector<Edge> edges;
    for (int v = 1; v < p.m; ++v) {
      const int parent = p.chain ? v - 1 : std::uniform_int_distribution<int>(0, v - 1)(rng);
      edges.push_back({parent, v});
    }
    Instance inst;
    inst.id = detail::padded_id("tree", i);
    inst.graph = Graph(p.m, edges);
    inst.node_features = FeatureMatrix(p.m, r + 1);
    inst.node_features.col(r).setOnes();
    inst.edge_features = FeatureMatrix(p.m - 1, f.feature_dim());
    std::vector<double> u(r);
    for (auto& v : u) v = normal(rng);
    const auto root = f.root_marginal(u);
    for (int j = 0; j < r; ++j) inst.node_features(0, j) = root[j];
    for (int v = 1; v < p.m; ++v) {
      const int e = v - 1, parent = edges[e].s;
      for (int d = 0; d + 1 < p.edge_dim; ++d)
        inst.edge_features(e, d) = (p.shared_features && e > 0) ? inst.edge_features(0, d) : normal(rng);
      inst.edge_features(e, p.edge_dim - 1) = 1.0;
      for (int j = 0; j < r; ++j) inst.edge_features(e, p.edge_dim + j) = inst.node_features(parent, j);
      const auto table = f.probabilities(row(inst.edge_features, e));
      for (int k = 0; k < r; ++k) {
        double column = 0.0;
        for (int j = 0; j < r; ++j) column += table[j * r + k];
        inst.node_features(v, k) = column;
      }
    }
    inst.labels = tree_sample(true_tree_energy(f, inst), 1, rng()).front();
    corpus.instances[i] = std::move(inst);
  });
  return corpus;
}

struct GridCorpusParams {
  std::size_t n_instances = 100;
  int h = 12;
  int w = 12;
  int r = 2;
  double coupling = 0.8;    // Potts reward for equal neighbouring labels
  double unary_snr = 0.5;   // feature noise standard deviation is 1 / unary_snr
  double field = 0.5;       // scale of the random per-node label preference
  int burn_in = 50;
  std::uint64_t seed = 0;
  int jobs = 1;
};

inline Json to_json(const GridCorpusParams& p) {
  Json j;
  j["kind"] = "grid";
  j["n_instances"] = p.n_instances;
  j["h"] = p.h;
  j["w"] = p.w;
  j["r"] = p.r;
  j["coupling"] = p.coupling;
  j["unary_snr"] = p.unary_snr;
  j["field"] = p.field;
  j["burn_in"] = p.burn_in;
  j["seed"] = p.seed;
  return j;
}

inline Graph grid_graph(int h, int w) {
  std::vector<Edge> edges;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const int i = y * w + x;
      if (x + 1 < w) edges.push_back({i, i + 1});
      if (y + 1 < h) edges.push_back({i, i + w});
    }
  return Graph(h * w, std::move(edges));
}

inline Corpus synth_grid_corpus(const GridCorpusParams& p) {
  LSCRF_REQUIRE(p.n_instances > 0 && p.h >= 1 && p.w >= 1 && p.r >= 1 && p.unary_snr > 0,
                "synth_grid_corpus: parameters must be positive");
  Corpus corpus;
  corpus.label_names = detail::default_label_names(p.r);
  corpus.schema.node_dim = p.r + 1;
  corpus.schema.edge_dim = 2 * p.r + 1;
  for (int j = 0; j < p.r; ++j) corpus.schema.node_names.push_back("noisy_indicator_" + std::to_string(j));
  corpus.schema.node_names.push_back("bias");
  for (const char* side : {"source_", "target_"})
    for (int j = 0; j < p.r; ++j) corpus.schema.edge_names.push_back(side + std::to_string(j));
  corpus.schema.edge_names.push_back("bias");
  corpus.provenance = to_json(p);
  corpus.instances.resize(p.n_instances);
  const Graph graph = grid_graph(p.h, p.w);
  const double sigma = 1.0 / p.unary_snr;

  parallel_for(p.n_instances, p.jobs, [&](std::size_t i) {
    std::mt19937_64 rng(stream_seed(p.seed, i));
    std::normal_distribution<double> normal(0.0, 1.0);
    auto energy = EnergyFunction::zeros(graph, p.r);
    for (int s = 0; s < graph.num_nodes(); ++s)
      for (int j = 0; j < p.r; ++j) energy.node(s, j) = p.field * normal(rng);
    for (int e = 0; e < graph.num_edges(); ++e)
      for (int j = 0; j < p.r; ++j) energy.edge(e, j, j) = -p.coupling;
    GibbsOptions gibbs;
    gibbs.burn_in = p.burn_in;
    Instance inst;
    inst.id = detail::padded_id("grid", i);
    inst.graph = graph;
    inst.labels = gibbs_sample(energy, 1, rng(), gibbs).front();
    inst.node_features = FeatureMatrix(graph.num_nodes(), p.r + 1);
    for (int s = 0; s < graph.num_nodes(); ++s) {
      for (int j = 0; j < p.r; ++j) inst.node_features(s, j) = ((*inst.labels)[s] == j ? 1.0 : 0.0) + sigma * normal(rng);
      inst.node_features(s, p.r) = 1.0;
    }
    inst.edge_features = FeatureMatrix(graph.num_edges(), 2 * p.r + 1);
    for (int e = 0; e < graph.num_edges(); ++e) {
      const auto& ed = graph.edge(e);
      for (int j = 0; j < p.r; ++j) {
        inst.edge_features(e, j) = inst.node_features(ed.s, j);
        inst.edge_features(e, p.r + j) = inst.node_features(ed.t, j);
      }
      inst.edge_features(e, 2 * p.r) = 1.0;
    }
    corpus.instances[i] = std::move(inst);
  });
  return corpus;
}

}  // namespace lscrf
