#include <gtest/gtest.h>

#include <sstream>

#include "support.hpp"

using namespace lscrf;
using namespace testing_support;

namespace {

std::string serialize(const Corpus& corpus) {
  std::ostringstream out;
  write_corpus(corpus, out);
  return out.str();
}

double neighbour_agreement(const Corpus& corpus) {
  std::size_t agree = 0, total = 0;
  for (const auto& inst : corpus.instances)
    for (const auto& e : inst.graph.edges()) {
      agree += (*inst.labels)[e.s] == (*inst.labels)[e.t];
      ++total;
    }
  return static_cast<double>(agree) / total;
}

}  // namespace

TEST(PairGenerators, Names) {
  for (auto g : {PairGenerator::linear, PairGenerator::logistic, PairGenerator::xor_sign})
    EXPECT_EQ(pair_generator_from_string(to_string(g)), g);
  EXPECT_THROW(pair_generator_from_string("cubic"), Error);
  EXPECT_THROW(make_pair_distribution(PairGenerator::xor_sign, 2, 2, 0.0, 1), Error);
  EXPECT_THROW(make_pair_distribution(PairGenerator::logistic, 2, 3, 1.5, 1), Error);
}

TEST(PairGenerators, TablesAreDistributionsWithTheParentMargin) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> g(0.0, 1.0);
  for (auto gen : {PairGenerator::linear, PairGenerator::logistic, PairGenerator::xor_sign}) {
    const auto f = make_pair_distribution(gen, 3, 4, 0.1, 7, 2.0);
    for (int trial = 0; trial < 50; ++trial) {
      std::vector<double> phi{g(rng), g(rng), g(rng), 1.0};
      const std::vector<double> u{g(rng), g(rng), g(rng)};
      const auto mu = f.root_marginal(u);
      phi.insert(phi.end(), mu.begin(), mu.end());
      const auto p = f.probabilities(phi);
      double total = 0.0;
      for (int j = 0; j < 3; ++j) {
        double row_sum = 0.0;
        for (int k = 0; k < 3; ++k) {
          EXPECT_GT(p[j * 3 + k], 0.0);
          row_sum += p[j * 3 + k];
        }
        EXPECT_NEAR(row_sum, mu[j], 1e-14);
        total += row_sum;
      }
      EXPECT_NEAR(total, 1.0, 1e-14);
    }
  }
}

TEST(PairGenerators, LinearFamilyIsLinearWithUniformMargins) {
  const auto f = make_pair_distribution(PairGenerator::linear, 2, 3, 0.0, 3);
  const std::vector<double> a{0.3, -0.2, 1.0, 0.5, 0.5}, b{-0.1, 0.4, 1.0, 0.5, 0.5};
  std::vector<double> mid(5);
  for (int d = 0; d < 5; ++d) mid[d] = 0.5 * (a[d] + b[d]);
  const auto pa = f.probabilities(a), pb = f.probabilities(b), pm = f.probabilities(mid);
  for (int i = 0; i < 4; ++i) EXPECT_NEAR(pm[i], 0.5 * (pa[i] + pb[i]), 1e-15);
  EXPECT_NEAR(pa[0] + pa[2], 0.5, 1e-15);  // column margin stays uniform
  const std::vector<double> u{3.0, -1.0};
  EXPECT_EQ(f.root_marginal(u), (std::vector<double>{0.5, 0.5}));
}

TEST(TreeCorpus, ShapesAndFeatureLayout) {
  TreeCorpusParams p;
  p.n_instances = 20;
  p.m = 8;
  p.r = 3;
  p.edge_dim = 5;
  p.seed = 4;
  const auto corpus = synth_tree_corpus(p);
  EXPECT_NO_THROW(corpus.validate());
  EXPECT_EQ(corpus.schema.edge_dim, 8);
  EXPECT_EQ(corpus.schema.edge_names.size(), 8u);
  EXPECT_EQ(corpus.instances[3].id, "tree000003");
  for (const auto& inst : corpus.instances) {
    EXPECT_TRUE(is_tree(inst.graph));
    EXPECT_EQ(inst.graph.num_edges(), 7);
    for (int e = 0; e < 7; ++e) {
      EXPECT_EQ(inst.edge_features(e, 4), 1.0);
      for (int j = 0; j < 3; ++j) EXPECT_EQ(inst.edge_features(e, 5 + j), inst.node_features(inst.graph.edge(e).s, j));
    }
    for (int s = 0; s < 8; ++s) {
      EXPECT_EQ(inst.node_features(s, 3), 1.0);
      EXPECT_NEAR(inst.node_features.row(s).head(3).sum(), 1.0, 1e-12);
    }
  }
}

TEST(TreeCorpus, DeterministicBySeedAndAcrossJobs) {
  TreeCorpusParams p;
  p.n_instances = 30;
  p.seed = 5;
  const auto a = serialize(synth_tree_corpus(p));
  EXPECT_EQ(a, serialize(synth_tree_corpus(p)));
  p.jobs = 4;
  EXPECT_EQ(a, serialize(synth_tree_corpus(p)));
  p.seed = 6;
  EXPECT_NE(a, serialize(synth_tree_corpus(p)));
}

TEST(TreeCorpus, ChainsAndSharedFeatures) {
  TreeCorpusParams p;
  p.n_instances = 5;
  p.chain = true;
  p.shared_features = true;
  const auto corpus = synth_tree_corpus(p);
  for (const auto& inst : corpus.instances)
    for (int e = 0; e < inst.graph.num_edges(); ++e) {
      EXPECT_EQ(inst.graph.edge(e).s, e);
      EXPECT_EQ(inst.graph.edge(e).t, e + 1);
      for (int d = 0; d < p.edge_dim; ++d) EXPECT_EQ(inst.edge_features(e, d), inst.edge_features(0, d));
    }
}

TEST(TreeCorpus, GeneratingModelHasExactlyTheTrueMarginals) {
  for (auto gen : {PairGenerator::linear, PairGenerator::logistic, PairGenerator::xor_sign}) {
    TreeCorpusParams p;
    p.n_instances = 5;
    p.m = 6;
    p.r = 3;
    p.generator = gen;
    p.noise = 0.2;
    p.sharpness = 1.5;
    p.seed = 8;
    PairDistribution f;
    const auto corpus = synth_tree_corpus(p, &f);
    for (const auto& inst : corpus.instances) {
      const auto mu = true_marginals(f, inst);
      EXPECT_LE(marginal_inconsistency(mu, inst.graph), 1e-12);
      const auto exact = brute_force(true_tree_energy(f, inst));
      EXPECT_LE(max_abs_diff(exact.marginals.pairwise, mu.pairwise), 1e-10) << to_string(gen);
      EXPECT_LE(max_abs_diff(exact.marginals.unary, mu.unary), 1e-10) << to_string(gen);
    }
  }
}

TEST(TreeCorpus, SampledMarginalsMatchTruthWithinFourSigma) {
  TreeCorpusParams p;
  p.n_instances = 1;
  p.m = 7;
  p.r = 2;
  p.sharpness = 1.5;
  p.seed = 9;
  PairDistribution f;
  const auto corpus = synth_tree_corpus(p, &f);
  const auto& inst = corpus.instances[0];
  // Replicates: same graph and features, fresh label draws.
  const int n = 10000;
  const auto samples = tree_sample(true_tree_energy(f, inst), n, 77);
  const auto empirical = empirical_marginals(samples, inst.graph, 2);
  const auto truth = true_pair_tables(f, inst);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const double sigma = std::sqrt(truth[i] * (1.0 - truth[i]) / n);
    EXPECT_LE(std::abs(empirical.pairwise[i] - truth[i]), 4.0 * sigma + 1e-12) << "entry " << i;
  }
}

TEST(TreeCorpus, SharpTruthReproducesArgmaxPairsOnChains) {
  TreeCorpusParams p;
  p.n_instances = 50;
  p.m = 6;
  p.chain = true;
  p.generator = PairGenerator::xor_sign;
  p.sharpness = 60.0;
  p.seed = 10;
  PairDistribution f;
  const auto corpus = synth_tree_corpus(p, &f);
  int deterministic = 0, edges = 0;
  for (const auto& inst : corpus.instances) {
    const auto tables = true_pair_tables(f, inst);
    for (int e = 0; e < inst.graph.num_edges(); ++e, ++edges) {
      const auto first = tables.begin() + 4 * e;
      const int best = static_cast<int>(std::max_element(first, first + 4) - first);
      // A near-tie in the root's scores can leave a whole chain undecided.
      if (*(first + best) < 1.0 - 1e-9) continue;
      ++deterministic;
      const auto& ed = inst.graph.edge(e);
      EXPECT_EQ((*inst.labels)[ed.s] * 2 + (*inst.labels)[ed.t], best);
    }
  }
  EXPECT_GE(deterministic, 0.75 * edges);
}

TEST(GridCorpus, ShapesAndFeatures) {
  GridCorpusParams p;
  p.n_instances = 10;
  p.h = 4;
  p.w = 5;
  p.r = 3;
  p.unary_snr = 4.0;
  const auto corpus = synth_grid_corpus(p);
  EXPECT_NO_THROW(corpus.validate());
  EXPECT_EQ(corpus.schema.edge_dim, 7);
  double on = 0.0, off = 0.0;
  std::size_t n_on = 0, n_off = 0;
  for (const auto& inst : corpus.instances) {
    EXPECT_EQ(inst.graph.num_edges(), 4 * 4 + 3 * 5);
    for (int s = 0; s < 20; ++s)
      for (int j = 0; j < 3; ++j) ((*inst.labels)[s] == j ? (++n_on, on) : (++n_off, off)) += inst.node_features(s, j);
    for (int e = 0; e < inst.graph.num_edges(); ++e) {
      const auto& ed = inst.graph.edge(e);
      EXPECT_EQ(inst.edge_features(e, 1), inst.node_features(ed.s, 1));
      EXPECT_EQ(inst.edge_features(e, 5), inst.node_features(ed.t, 2));
      EXPECT_EQ(inst.edge_features(e, 6), 1.0);
    }
  }
  EXPECT_NEAR(on / n_on, 1.0, 0.1);
  EXPECT_NEAR(off / n_off, 0.0, 0.1);
}

TEST(GridCorpus, DeterministicBySeedAndAcrossJobs) {
  GridCorpusParams p;
  p.n_instances = 8;
  p.h = p.w = 5;
  p.seed = 2;
  const auto a = serialize(synth_grid_corpus(p));
  EXPECT_EQ(a, serialize(synth_grid_corpus(p)));
  p.jobs = 4;
  EXPECT_EQ(a, serialize(synth_grid_corpus(p)));
  p.seed = 3;
  EXPECT_NE(a, serialize(synth_grid_corpus(p)));
}

TEST(GridCorpus, ZeroCouplingGivesChanceAgreement) {
  for (int r : {2, 3}) {
    GridCorpusParams p;
    p.n_instances = 50;
    p.r = r;
    p.coupling = 0.0;
    p.field = 0.0;
    p.seed = 4;
    const auto corpus = synth_grid_corpus(p);
    const double n = 50.0 * corpus.instances[0].graph.num_edges();
    const double chance = 1.0 / r;
    EXPECT_NEAR(neighbour_agreement(corpus), chance, 4.0 * std::sqrt(chance * (1 - chance) / n)) << r;
  }
}

TEST(GridCorpus, StrongCouplingGivesHighAgreement) {
  GridCorpusParams p;
  p.n_instances = 20;
  p.coupling = 2.0;
  p.seed = 5;
  EXPECT_GT(neighbour_agreement(synth_grid_corpus(p)), 0.9);
  p.coupling = 0.8;
  const double moderate = neighbour_agreement(synth_grid_corpus(p));
  EXPECT_GT(moderate, 0.6);
  EXPECT_LT(moderate, 0.9);
}
