#include <gtest/gtest.h>

#include "support.hpp"

using namespace lscrf;
using namespace testing_support;

namespace {

std::vector<Instance> random_labeled(int count, int r, bool trees, std::mt19937_64& rng) {
  std::vector<Instance> out;
  for (int i = 0; i < count; ++i) {
    auto inst = make_instance(trees ? random_forest(5, rng) : random_loopy(5, 2, rng), 3, 2, rng);
    inst.id = "i" + std::to_string(i);
    Labeling y(5);
    for (auto& v : y) v = std::uniform_int_distribution<int>(0, r - 1)(rng);
    inst.labels = y;
    out.push_back(std::move(inst));
  }
  return out;
}

double central_difference_error(const CrfObjective& objective, const Eigen::VectorXd& w) {
  Eigen::VectorXd grad;
  objective.evaluate(w, &grad);
  double worst = 0.0;
  const double h = 1e-5;
  for (Eigen::Index i = 0; i < w.size(); ++i) {
    Eigen::VectorXd plus = w, minus = w;
    plus[i] += h;
    minus[i] -= h;
    const double fd = (objective.evaluate(plus, nullptr) - objective.evaluate(minus, nullptr)) / (2 * h);
    worst = std::max(worst, std::abs(fd - grad[i]) / std::max(1.0, std::abs(fd)));
  }
  return worst;
}

double accuracy(const std::vector<Labeling>& pred, std::span<const Instance> truth) {
  std::size_t hit = 0, total = 0;
  for (std::size_t i = 0; i < pred.size(); ++i)
    for (std::size_t s = 0; s < pred[i].size(); ++s) {
      hit += pred[i][s] == (*truth[i].labels)[s];
      ++total;
    }
  return static_cast<double>(hit) / total;
}

}  // namespace

class SurrogateGradient : public ::testing::TestWithParam<Surrogate> {};

TEST_P(SurrogateGradient, MatchesCentralDifferences) {
  std::mt19937_64 rng(1);
  const bool trees = GetParam() == Surrogate::conditional_likelihood;
  const auto data = random_labeled(6, 3, trees, rng);
  const CrfObjective objective(data, 3, GetParam(), 0.05);
  std::normal_distribution<double> g(0.0, 0.7);
  for (int point = 0; point < 5; ++point) {
    Eigen::VectorXd w(objective.dim());
    for (auto& v : w) v = g(rng);
    EXPECT_LE(central_difference_error(objective, w), 1e-6) << to_string(GetParam());
  }
}

INSTANTIATE_TEST_SUITE_P(All, SurrogateGradient,
                         ::testing::Values(Surrogate::logistic, Surrogate::pseudolikelihood, Surrogate::piecewise,
                                           Surrogate::conditional_likelihood));

TEST(Surrogates, NamesRoundTrip) {
  for (auto s : {Surrogate::logistic, Surrogate::pseudolikelihood, Surrogate::piecewise,
                 Surrogate::conditional_likelihood})
    EXPECT_EQ(surrogate_from_string(to_string(s)), s);
  EXPECT_THROW(surrogate_from_string("crf"), Error);
}

TEST(Surrogates, ZeroWeightsGiveUniformValues) {
  // With w = 0 every conditional is uniform over r labels.
  std::mt19937_64 rng(2);
  const auto data = random_labeled(4, 3, true, rng);
  std::size_t nodes = 0;
  for (const auto& inst : data) nodes += inst.graph.num_nodes();
  const CrfObjective logistic(data, 3, Surrogate::logistic, 0.0);
  EXPECT_NEAR(logistic.evaluate(Eigen::VectorXd::Zero(logistic.dim()), nullptr), nodes * std::log(3.0), 1e-10);
  const CrfObjective pl(data, 3, Surrogate::pseudolikelihood, 0.0);
  EXPECT_NEAR(pl.evaluate(Eigen::VectorXd::Zero(pl.dim()), nullptr), nodes * std::log(3.0), 1e-10);
  const CrfObjective cll(data, 3, Surrogate::conditional_likelihood, 0.0);
  EXPECT_NEAR(cll.evaluate(Eigen::VectorXd::Zero(cll.dim()), nullptr), nodes * std::log(3.0), 1e-10);
}

TEST(Surrogates, ConditionalLikelihoodMatchesEnumeration) {
  std::mt19937_64 rng(3);
  const auto data = random_labeled(3, 2, true, rng);
  const CrfObjective objective(data, 2, Surrogate::conditional_likelihood, 0.0);
  Eigen::VectorXd w(objective.dim());
  std::normal_distribution<double> g(0.0, 1.0);
  for (auto& v : w) v = g(rng);
  const auto crf = objective.make_model(w);
  double expected = 0.0;
  for (const auto& inst : data) {
    const auto e = loglinear_energy(crf, inst);
    expected += brute_energy(e, *inst.labels) + brute_force(e).log_z;
  }
  EXPECT_NEAR(objective.evaluate(w, nullptr), expected, 1e-10);
  std::vector<Instance> loopy = random_labeled(1, 2, false, rng);
  EXPECT_THROW(CrfObjective(loopy, 2, Surrogate::conditional_likelihood, 0.0), GraphError);
}

TEST(Surrogates, AllCoincideWithoutEdges) {
  std::mt19937_64 rng(12);
  std::vector<Instance> data;
  for (int i = 0; i < 8; ++i) {
    auto inst = make_instance(Graph(4, {}), 3, 2, rng);
    inst.id = std::to_string(i);
    inst.labels = Labeling{i % 3, 0, 2, (i + 1) % 3};
    data.push_back(std::move(inst));
  }
  const CrfObjective logistic(data, 3, Surrogate::logistic, 0.1);
  Eigen::VectorXd w(logistic.dim());
  std::normal_distribution<double> g(0.0, 1.0);
  for (auto& v : w) v = g(rng);
  for (auto s : {Surrogate::pseudolikelihood, Surrogate::piecewise, Surrogate::conditional_likelihood}) {
    const CrfObjective other(data, 3, s, 0.1);
    EXPECT_NEAR(other.evaluate(w, nullptr), logistic.evaluate(w, nullptr), 1e-12) << to_string(s);
  }
  const auto a = logistic_unary_train(data, 3), b = pseudolikelihood_train(data, 3);
  EXPECT_LE((a.model.w_unary - b.model.w_unary).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(Surrogates, InputErrors) {
  std::mt19937_64 rng(4);
  auto data = random_labeled(2, 2, true, rng);
  EXPECT_THROW(CrfObjective({}, 2, Surrogate::logistic, 0.0), Error);
  EXPECT_THROW(CrfObjective(data, 2, Surrogate::logistic, -1.0), Error);
  data[1].labels.reset();
  EXPECT_THROW(CrfObjective(data, 2, Surrogate::logistic, 0.0), Error);
}

TEST(Training, ObjectiveDecreasesAndConverges) {
  std::mt19937_64 rng(5);
  const auto data = random_labeled(20, 2, false, rng);
  const CrfObjective objective(data, 2, Surrogate::pseudolikelihood, 0.1);
  const double start = objective.evaluate(Eigen::VectorXd::Zero(objective.dim()), nullptr);
  const auto fit = pseudolikelihood_train(data, 2, {.lambda = 0.1, .max_iter = 2000, .tol = 1e-8});
  EXPECT_TRUE(fit.optimization.converged);
  EXPECT_LT(fit.optimization.value, start);
  EXPECT_NEAR(objective.evaluate(fit.optimization.w, nullptr), fit.optimization.value, 1e-12);
}

TEST(Training, LogisticHasNoPairTerms) {
  std::mt19937_64 rng(6);
  const auto data = random_labeled(10, 2, false, rng);
  const auto fit = logistic_unary_train(data, 2);
  EXPECT_EQ(fit.model.w_pair.norm(), 0.0);
}

TEST(Training, AttractiveGridsGiveDiagonalPairWeights) {
  GridCorpusParams p;
  p.n_instances = 40;
  p.h = p.w = 8;
  p.coupling = 0.8;
  p.seed = 3;
  const auto corpus = synth_grid_corpus(p);
  for (auto fit : {pseudolikelihood_train(corpus.instances, 2), piecewise_train(corpus.instances, 2)}) {
    double agree = 0.0, disagree = 0.0;
    for (const auto& inst : corpus.instances) {
      const auto e = loglinear_energy(fit.model, inst);
      for (int ed = 0; ed < inst.graph.num_edges(); ++ed) {
        agree += e.edge(ed, 0, 0) + e.edge(ed, 1, 1);
        disagree += e.edge(ed, 0, 1) + e.edge(ed, 1, 0);
      }
    }
    EXPECT_LT(agree, disagree) << to_string(fit.model.method);
  }
}

TEST(Training, DeterministicAcrossJobs) {
  std::mt19937_64 rng(7);
  const auto data = random_labeled(40, 3, true, rng);
  for (auto s : {Surrogate::pseudolikelihood, Surrogate::conditional_likelihood}) {
    const auto one = train_baseline(data, 3, s, {.jobs = 1});
    const auto four = train_baseline(data, 3, s, {.jobs = 4});
    EXPECT_EQ(to_json(one.model).dump(), to_json(four.model).dump());
  }
}

TEST(Training, TreeCllAndLsCrfAgreeOnChains) {
  TreeCorpusParams p;
  p.n_instances = 5500;
  p.m = 10;
  p.r = 2;
  p.chain = true;
  p.seed = 11;
  auto corpus = synth_tree_corpus(p);
  std::span<const Instance> all(corpus.instances);
  const auto train = all.subspan(0, 5000), test = all.subspan(5000);
  const auto cll = tree_cll_train(train, 2);
  const auto ls = train_lscrf(train, 2, TrainConfig{});
  std::vector<Labeling> y_cll, y_ls;
  for (const auto& inst : test) {
    y_cll.push_back(tree_map(loglinear_energy(cll.model, inst)).labeling);
    y_ls.push_back(predict_labeling(ls, inst, Solver::tree));
  }
  const double a_cll = accuracy(y_cll, test), a_ls = accuracy(y_ls, test);
  EXPECT_GT(a_ls, a_cll - 0.03) << "lscrf " << a_ls << " cll " << a_cll;
  EXPECT_GT(a_cll, 0.55);
}

TEST(Serialization, JsonRoundTrip) {
  std::mt19937_64 rng(8);
  const auto data = random_labeled(10, 3, false, rng);
  auto fit = piecewise_train(data, 3);
  fit.model.label_names = {"a", "b", "c"};
  const auto back = loglinear_from_json(Json::parse(to_json(fit.model).dump()));
  EXPECT_EQ(back.method, Surrogate::piecewise);
  EXPECT_EQ(back.w_unary, fit.model.w_unary);
  EXPECT_EQ(back.w_pair, fit.model.w_pair);
  EXPECT_EQ(back.label_names, fit.model.label_names);
  const auto e0 = loglinear_energy(fit.model, data[0]), e1 = loglinear_energy(back, data[0]);
  EXPECT_EQ(e0.unary, e1.unary);
  EXPECT_EQ(e0.pairwise, e1.pairwise);
}

TEST(Piecewise, UnariesOnlyOnIsolatedNodes) {
  std::mt19937_64 rng(9);
  auto data = random_labeled(10, 2, true, rng);
  const auto fit = piecewise_train(data, 2);
  const auto inst = make_instance(Graph(3, {{0, 1}}), 3, 2, rng);
  const auto e = loglinear_energy(fit.model, inst);
  EXPECT_EQ(e.node(0, 0), 0.0);
  EXPECT_EQ(e.node(1, 1), 0.0);
  EXPECT_NE(e.node(2, 0), 0.0);
}
