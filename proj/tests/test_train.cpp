#include <gtest/gtest.h>

#include <map>

#include "support.hpp"

using namespace lscrf;
using namespace testing_support;

namespace {

Instance labeled(const Graph& g, Labeling y, int node_dim, int edge_dim, std::mt19937_64& rng) {
  auto inst = make_instance(g, node_dim, edge_dim, rng);
  inst.labels = std::move(y);
  if (edge_dim) inst.edge_features.col(edge_dim - 1).setOnes();
  if (node_dim) inst.node_features.col(node_dim - 1).setOnes();
  return inst;
}

std::vector<LabeledPair> skewed_pool(std::size_t same, std::size_t different, int r, std::mt19937_64& rng) {
  std::vector<LabeledPair> pool;
  for (std::size_t i = 0; i < same; ++i) {
    const int j = std::uniform_int_distribution<int>(0, r - 1)(rng);
    pool.push_back({j, j});
  }
  for (std::size_t i = 0; i < different; ++i) {
    const int j = std::uniform_int_distribution<int>(0, r - 1)(rng);
    pool.push_back({j, (j + 1 + std::uniform_int_distribution<int>(0, r - 2)(rng)) % r});
  }
  std::shuffle(pool.begin(), pool.end(), rng);
  return pool;
}

}  // namespace

TEST(Assemble, SingleEdgeIndicators) {
  std::mt19937_64 rng(1);
  const std::vector<Instance> corpus{labeled(Graph(2, {{0, 1}}), {0, 1}, 2, 3, rng)};
  const auto data = assemble_pair_datasets(corpus, 2, SamplingConfig{});
  ASSERT_EQ(data.features->rows(), 1);
  EXPECT_EQ(data.dataset(0, 1).targets[0], 1.0);
  EXPECT_EQ(data.dataset(0, 0).targets[0], 0.0);
  EXPECT_EQ(data.dataset(1, 0).targets[0], 0.0);
  EXPECT_EQ(data.dataset(1, 1).targets[0], 0.0);
  EXPECT_TRUE(data.features->row(0) == corpus[0].edge_features.row(0));
}

TEST(Assemble, PartitionOfUnity) {
  std::mt19937_64 rng(2);
  std::vector<Instance> corpus;
  std::size_t edges = 0;
  for (int i = 0; i < 30; ++i) {
    const auto g = random_loopy(8, 3, rng);
    Labeling y(8);
    for (auto& v : y) v = std::uniform_int_distribution<int>(0, 2)(rng);
    corpus.push_back(labeled(g, y, 2, 4, rng));
    edges += g.num_edges();
  }
  const auto data = assemble_pair_datasets(corpus, 3, SamplingConfig{});
  std::size_t positives = 0;
  for (auto p : data.positives) positives += p;
  EXPECT_EQ(positives, edges);
  for (Eigen::Index n = 0; n < data.features->rows(); ++n) {
    double sum = 0.0;
    for (const auto& t : data.targets) {
      EXPECT_TRUE(t[n] == 0.0 || t[n] == 1.0);
      sum += t[n];
    }
    EXPECT_EQ(sum, 1.0);
  }
}

TEST(Assemble, ErrorsOnMissingLabelsAndDimensionMismatch) {
  std::mt19937_64 rng(3);
  std::vector<Instance> corpus{labeled(Graph(2, {{0, 1}}), {0, 1}, 2, 3, rng),
                               labeled(Graph(2, {{0, 1}}), {1, 1}, 2, 3, rng)};
  corpus[1].labels.reset();
  EXPECT_THROW(assemble_pair_datasets(corpus, 2, SamplingConfig{}), Error);
  corpus[1] = labeled(Graph(2, {{0, 1}}), {1, 1}, 2, 4, rng);
  EXPECT_THROW(assemble_pair_datasets(corpus, 2, SamplingConfig{}), Error);
  EXPECT_THROW(train_lscrf(std::vector<Instance>{}, 2, TrainConfig{}), Error);
}

TEST(BalancedSample, FullFractionIsIdentity) {
  std::mt19937_64 rng(4);
  const auto pool = skewed_pool(70, 30, 3, rng);
  const auto chosen = balanced_sample(pool, 3, SamplingConfig{});
  ASSERT_EQ(chosen.size(), pool.size());
  for (std::size_t i = 0; i < chosen.size(); ++i) EXPECT_EQ(chosen[i], i);
}

TEST(BalancedSample, PreservesSameDifferentRatio) {
  std::mt19937_64 rng(5);
  const auto pool = skewed_pool(9000, 1000, 4, rng);
  SamplingConfig cfg;
  cfg.pair_fraction = 0.1;
  const auto chosen = balanced_sample(pool, 4, cfg);
  std::size_t same = 0;
  for (auto i : chosen) same += pool[i].source_label == pool[i].target_label;
  EXPECT_NEAR(static_cast<double>(chosen.size()), 1000.0, 1.0);
  EXPECT_NEAR(static_cast<double>(same), 900.0, 1.0);
  EXPECT_NEAR(static_cast<double>(chosen.size() - same), 100.0, 1.0);
}

TEST(BalancedSample, SameLabelPairsEquallyLikelyUpToAvailability) {
  // Same-label pairs: label 0 is abundant, label 1 moderately common, label 2 rare.
  std::vector<LabeledPair> pool;
  for (int i = 0; i < 5000; ++i) pool.push_back({0, 0});
  for (int i = 0; i < 3000; ++i) pool.push_back({1, 1});
  for (int i = 0; i < 100; ++i) pool.push_back({2, 2});
  for (int i = 0; i < 900; ++i) pool.push_back({0, 1});
  SamplingConfig cfg;
  cfg.pair_fraction = 0.5;
  cfg.seed = 3;
  const auto chosen = balanced_sample(pool, 3, cfg);
  std::map<int, std::size_t> same;
  std::size_t different = 0;
  for (auto i : chosen) {
    if (pool[i].source_label == pool[i].target_label)
      ++same[pool[i].source_label];
    else
      ++different;
  }
  // 4050 same-label picks: label 2 contributes all 100 it has, the rest split evenly.
  EXPECT_EQ(same[2], 100u);
  EXPECT_NEAR(static_cast<double>(same[0]), static_cast<double>(same[1]), 1.0);
  EXPECT_EQ(same[0] + same[1] + same[2], 4050u);
  EXPECT_EQ(different, 450u);
  EXPECT_EQ(chosen, balanced_sample(pool, 3, cfg));
  cfg.seed = 4;
  EXPECT_NE(chosen, balanced_sample(pool, 3, cfg));
}

TEST(BalancedSample, UnbalancedModeIsUniform) {
  std::mt19937_64 rng(6);
  const auto pool = skewed_pool(8000, 2000, 2, rng);
  SamplingConfig cfg;
  cfg.pair_fraction = 0.25;
  cfg.balance = false;
  const auto chosen = balanced_sample(pool, 2, cfg);
  std::size_t same = 0;
  for (auto i : chosen) same += pool[i].source_label == pool[i].target_label;
  EXPECT_EQ(chosen.size(), 2500u);
  EXPECT_NEAR(static_cast<double>(same) / chosen.size(), 0.8, 0.01);
}

TEST(Train, NeverSeenPairGetsConstant) {
  std::mt19937_64 rng(7);
  std::vector<Instance> corpus;
  for (int i = 0; i < 200; ++i) {
    Labeling y(4);
    for (auto& v : y) v = std::uniform_int_distribution<int>(0, 2)(rng);  // label 3 never occurs
    corpus.push_back(labeled(Graph(4, {{0, 1}, {1, 2}, {2, 3}}), y, 2, 3, rng));
  }
  const auto model = train_lscrf(corpus, 4, TrainConfig{});
  ASSERT_TRUE(std::holds_alternative<ConstantModel>(model.pair(2, 3)));
  EXPECT_EQ(std::get<ConstantModel>(model.pair(2, 3)).value, 1e-3);
  EXPECT_TRUE(std::holds_alternative<LinearModel>(model.pair(0, 1)));
  EXPECT_FALSE(model.all_constant);
  EXPECT_FALSE(model.has_unaries());
}

TEST(Train, MinPairCountThreshold) {
  std::mt19937_64 rng(8);
  std::vector<Instance> corpus;
  for (int i = 0; i < 30; ++i) corpus.push_back(labeled(Graph(2, {{0, 1}}), {0, i < 25 ? 0 : 1}, 2, 2, rng));
  TrainConfig cfg;
  cfg.min_pair_count = 20;
  auto model = train_lscrf(corpus, 2, cfg);
  EXPECT_TRUE(std::holds_alternative<LinearModel>(model.pair(0, 0)));
  EXPECT_TRUE(std::holds_alternative<ConstantModel>(model.pair(0, 1)));
  cfg.min_pair_count = 26;
  model = train_lscrf(corpus, 2, cfg);
  EXPECT_TRUE(model.all_constant);
}

TEST(Train, SingleNodeGraphsTrainUnariesOnly) {
  std::mt19937_64 rng(9);
  std::vector<Instance> corpus;
  for (int i = 0; i < 100; ++i) corpus.push_back(labeled(Graph(1, {}), {i % 2}, 3, 0, rng));
  const auto model = train_lscrf(corpus, 2, TrainConfig{});
  EXPECT_FALSE(model.has_pairwise());
  EXPECT_EQ(model.unary_functions.size(), 2u);
}

TEST(Train, IsolatedNodesTriggerUnaryTraining) {
  std::mt19937_64 rng(10);
  std::vector<Instance> with_isolated, without;
  for (int i = 0; i < 50; ++i) {
    with_isolated.push_back(labeled(Graph(3, {{0, 1}}), {i % 2, 0, 1}, 2, 2, rng));
    without.push_back(labeled(Graph(3, {{0, 1}, {1, 2}}), {i % 2, 0, 1}, 2, 2, rng));
  }
  EXPECT_TRUE(train_lscrf(with_isolated, 2, TrainConfig{}).has_unaries());
  EXPECT_FALSE(train_lscrf(without, 2, TrainConfig{}).has_unaries());
  TrainConfig always;
  always.unaries = UnaryTraining::always;
  EXPECT_TRUE(train_lscrf(without, 2, always).has_unaries());
  TrainConfig never;
  never.unaries = UnaryTraining::never;
  EXPECT_FALSE(train_lscrf(with_isolated, 2, never).has_unaries());
}

TEST(Train, LinearTruthIsRecovered) {
  TreeCorpusParams p;
  p.n_instances = 100000;
  p.m = 2;
  p.r = 2;
  p.edge_dim = 4;
  p.generator = PairGenerator::linear;
  p.seed = 21;
  PairDistribution truth;
  const auto corpus = synth_tree_corpus(p, &truth);
  const auto model = train_lscrf(corpus.instances, 2, TrainConfig{});
  std::mt19937_64 rng(22);
  std::normal_distribution<double> g(0.0, 1.0);
  for (int j = 0; j < 2; ++j)
    for (int k = 0; k < 2; ++k) {
      std::vector<double> predicted, expected;
      for (int i = 0; i < 2000; ++i) {
        const std::vector<double> phi{g(rng), g(rng), g(rng), 1.0, 0.5, 0.5};
        predicted.push_back(predict(model.pair(j, k), phi));
        expected.push_back(truth.probabilities(phi)[j * 2 + k]);
      }
      double mean = 0.0, ss_res = 0.0, ss_tot = 0.0;
      for (double v : expected) mean += v / expected.size();
      for (std::size_t i = 0; i < expected.size(); ++i) {
        ss_res += (predicted[i] - expected[i]) * (predicted[i] - expected[i]);
        ss_tot += (expected[i] - mean) * (expected[i] - mean);
      }
      EXPECT_GE(1.0 - ss_res / ss_tot, 0.9) << "pair " << j << k;
    }
}

TEST(Train, GbtRecoversConditionalFrequenciesOnReplicatedFeatures) {
  // Five distinct feature vectors, each replicated over many single-edge instances.
  std::mt19937_64 rng(11);
  std::vector<std::vector<double>> designs;
  for (int d = 0; d < 5; ++d) designs.push_back({d * 0.5 - 1.0, std::sin(d * 1.3), 1.0});
  std::vector<Instance> corpus;
  std::vector<std::array<double, 4>> counts(5, {0, 0, 0, 0});
  for (int i = 0; i < 20000; ++i) {
    const int d = i % 5;
    Instance inst;
    inst.id = std::to_string(i);
    inst.graph = Graph(2, {{0, 1}});
    inst.node_features = FeatureMatrix::Ones(2, 1);
    inst.edge_features = FeatureMatrix(1, 3);
    for (int c = 0; c < 3; ++c) inst.edge_features(0, c) = designs[d][c];
    const double p_same = 0.2 + 0.15 * d;
    const double u = std::uniform_real_distribution<double>(0, 1)(rng);
    const int j = u < p_same / 2 ? 0 : u < p_same ? 1 : u < p_same + (1 - p_same) / 2 ? 2 : 3;
    inst.labels = Labeling{j == 1 || j == 3 ? 1 : 0, j == 1 || j == 2 ? 1 : 0};
    counts[d][(*inst.labels)[0] * 2 + (*inst.labels)[1]] += 1.0;
    corpus.push_back(std::move(inst));
  }
  TrainConfig cfg;
  cfg.kind = RegressorKind::gbt;
  cfg.gbt.n_trees = 200;
  cfg.gbt.depth = 3;
  cfg.gbt.learning_rate = 0.2;
  const auto model = train_lscrf(corpus, 2, cfg);
  double mse = 0.0;
  for (int d = 0; d < 5; ++d)
    for (int pair = 0; pair < 4; ++pair) {
      const double empirical = counts[d][pair] / 4000.0;
      const double e = predict(model.pair(pair / 2, pair % 2), designs[d]) - empirical;
      mse += e * e / 20.0;
    }
  EXPECT_LT(mse, 1e-6);
}

TEST(Train, DeterministicAcrossJobs) {
  GridCorpusParams p;
  p.n_instances = 40;
  p.h = p.w = 6;
  p.seed = 5;
  const auto corpus = synth_grid_corpus(p);
  for (auto kind : {RegressorKind::linear, RegressorKind::gbt}) {
    TrainConfig cfg;
    cfg.kind = kind;
    cfg.gbt.n_trees = 20;
    cfg.sampling.pair_fraction = 0.5;
    cfg.unaries = UnaryTraining::always;
    cfg.jobs = 1;
    const auto a = to_json(train_lscrf(corpus.instances, 2, cfg)).dump();
    cfg.jobs = 4;
    const auto b = to_json(train_lscrf(corpus.instances, 2, cfg)).dump();
    EXPECT_EQ(a, b);
  }
}

TEST(Train, ModelJsonRoundTrip) {
  GridCorpusParams p;
  p.n_instances = 20;
  p.h = p.w = 5;
  const auto corpus = synth_grid_corpus(p);
  TrainConfig cfg;
  cfg.unaries = UnaryTraining::always;
  auto model = train_lscrf(corpus.instances, 2, cfg);
  model.label_names = corpus.label_names;
  const auto text = to_json(model).dump();
  const auto back = pairwise_model_from_json(Json::parse(text));
  EXPECT_EQ(to_json(back).dump(), text);
  EXPECT_THROW(pairwise_model_from_json(Json::parse(R"({"format":"other"})")), Error);
}

TEST(UnaryFromPairwise, Examples) {
  PairwiseModel model;
  model.num_labels = 2;
  model.pair_functions = {ConstantModel{0.5}, ConstantModel{0.3}, ConstantModel{0.1}, ConstantModel{0.1}};
  const std::vector<double> phi{1.0};
  const auto s = unary_from_pairwise(model, phi, true);
  EXPECT_NEAR(s[0], 0.8, 1e-15);
  EXPECT_NEAR(s[1], 0.2, 1e-15);
  const auto t = unary_from_pairwise(model, phi, false);
  EXPECT_NEAR(t[0], 0.6, 1e-15);
  EXPECT_NEAR(t[1], 0.4, 1e-15);
  model.num_labels = 3;
  model.pair_functions.assign(9, ConstantModel{1.0 / 9.0});
  for (double v : unary_from_pairwise(model, phi, true)) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
}
