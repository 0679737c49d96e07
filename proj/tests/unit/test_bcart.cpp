#include <gtest/gtest.h>

#include <map>

#include "bnt/bcart.hpp"
#include "oracles.hpp"
#include "synthetic.hpp"

using namespace bnt;

namespace {

Dataset four_point() {
  Matrix x(4, 1);
  x << 1, 2, 3, 4;
  Vector y(4);
  y << 0, 0, 10, 10;
  return synth::make(x, y);
}

}  // namespace

TEST(TreePriorTerms, SplitProbability) {
  EXPECT_DOUBLE_EQ(log_p_split(0, {0.7, 3.0}), std::log(0.7));
  EXPECT_NEAR(log_p_split(1, {0.95, 2.0}), std::log(0.2375), 1e-15);
  for (int depth : {0, 1, 5}) EXPECT_DOUBLE_EQ(log_p_split(depth, {0.4, 0.0}), std::log(0.4));
  for (int depth = 0; depth < 6; ++depth) EXPECT_LT(log_p_split(depth + 1, {0.95, 2.0}), log_p_split(depth, {0.95, 2.0}));
}

TEST(TreePriorTerms, SingleLeaf) {
  EXPECT_NEAR(log_tree_prior(RegressionTree(1), {0.5, 0.0}, four_point()), std::log(0.5), 1e-15);
}

TEST(TreePriorTerms, RootSplitHandValue) {
  RegressionTree t(1);
  t.split(0, {0, 2.0});
  const double want = std::log(0.5) + std::log(1.0) + std::log(0.25) + 2.0 * std::log(0.75);
  EXPECT_NEAR(log_tree_prior(t, {0.5, 1.0}, four_point()), want, 1e-14);
}

TEST(TreePriorTerms, InvalidThresholdRejected) {
  RegressionTree t(1);
  t.split(0, {0, 2.5});
  EXPECT_THROW(log_tree_prior(t, {0.5, 1.0}, four_point()), DataError);
}

TEST(TreePriorTerms, SplitTermsNonIncreasingInBeta) {
  // Leaf terms log(1 - P_split) grow with beta, so only the split events
  // are monotone for every beta; the whole prior falls once beta is large.
  auto ds = synth::smooth(40, 0.1, 3);
  RegressionTree t(2);
  auto [l, r] = t.split(0, {0, ds.features(0, 0)});
  t.split(r, {1, ds.features(1, 1)});
  (void)l;
  BcartSampler s(ds, {}, LeafPrior{});
  ASSERT_TRUE(s.score(t).valid);
  double prev_split = std::numeric_limits<double>::infinity();
  for (double beta : {0.0, 1.0, 2.0, 4.0, 8.0}) {
    const TreePrior tp{0.95, beta};
    double leaves = 0.0;
    for (int leaf : t.leaves()) leaves += log_p_stop(t.node(leaf).depth, tp);
    const double split_part = log_tree_prior(t, tp, ds) - leaves;
    EXPECT_LE(split_part, prev_split);
    prev_split = split_part;
  }
  double prev = std::numeric_limits<double>::infinity();
  for (double beta : {4.0, 8.0, 16.0, 32.0}) {
    const double lp = log_tree_prior(t, {0.95, beta}, ds);
    EXPECT_LT(lp, prev);
    prev = lp;
  }
  EXPECT_LT(prev, -20.0);
}

TEST(TreePriorTerms, EnumeratedMassAtMostOne) {
  auto ds = synth::tiny();
  double mass = 0.0;
  for (const auto& t : synth::tiny_tree_space()) mass += std::exp(log_tree_prior(t, {0.95, 2.0}, ds));
  EXPECT_GT(mass, 0.0);
  EXPECT_LE(mass, 1.0);
}

TEST(LeafMarginal, MatchesQuadrature) {
  LeafPrior p{0.0, 1.0, 3.0, 2.0};
  EXPECT_NEAR(leaf_log_marginal(std::vector<double>{0.0}, p), oracle::nig_log_marginal_quadrature({0.0}, p), 1e-6);
  Rng rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t n = 1 + rng.index(5);
    std::vector<double> y(n);
    for (auto& v : y) v = rng.normal();
    LeafPrior q{rng.uniform(-1, 1), rng.uniform(0.3, 2), rng.uniform(1, 5), rng.uniform(0.2, 3)};
    EXPECT_NEAR(leaf_log_marginal(y, q), oracle::nig_log_marginal_quadrature(y, q), 1e-6) << "trial " << trial;
  }
}

TEST(LeafMarginal, MatchesSequentialPredictive) {
  Rng rng(6);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> y(1 + rng.index(30));
    for (auto& v : y) v = 3.0 * rng.normal();
    LeafPrior q{rng.uniform(-1, 1), rng.uniform(0.1, 3), rng.uniform(0.5, 6), rng.uniform(0.1, 4)};
    EXPECT_NEAR(leaf_log_marginal(y, q), oracle::nig_log_marginal_sequential(y, q), 1e-9);
  }
}

TEST(LeafMarginal, SymmetryAndShift) {
  LeafPrior p{0.0, 1.0, 3.0, 1.0};
  std::vector<double> a{0.3, -0.2, 1.0}, b{1.0, 0.3, -0.2};
  EXPECT_DOUBLE_EQ(leaf_log_marginal(a, p), leaf_log_marginal(b, p));
  std::vector<double> far{100.3, 99.8, 101.0};
  EXPECT_LT(leaf_log_marginal(far, p), leaf_log_marginal(a, p));
  EXPECT_THROW(leaf_log_marginal(std::vector<double>{}, p), DataError);
}

TEST(LeafMarginal, TreeSumsLeaves) {
  auto ds = four_point();
  LeafPrior p = LeafPrior::from_response(ds.response);
  RegressionTree t(1);
  t.split(0, {0, 2.0});
  const double want = leaf_log_marginal(std::vector<double>{0, 0}, p) + leaf_log_marginal(std::vector<double>{10, 10}, p);
  EXPECT_NEAR(log_marginal_likelihood(t, ds, p), want, 1e-12);
}

TEST(Proposal, SingleLeafOnlyGrows) {
  auto ds = four_point();
  BcartSampler s(ds, {}, LeafPrior::from_response(ds.response));
  Rng rng(1);
  RegressionTree root(1);
  EXPECT_FALSE(s.propose(root, rng, MoveType::prune).feasible);
  EXPECT_FALSE(s.propose(root, rng, MoveType::change).feasible);
  EXPECT_FALSE(s.propose(root, rng, MoveType::swap).feasible);
  EXPECT_TRUE(s.propose(root, rng, MoveType::grow).feasible);
}

TEST(Proposal, GrowPruneHastingsIdentity) {
  // Five rows, two features.
  Matrix x(5, 2);
  x << 1, 5, 2, 4, 3, 4, 4, 2, 5, 1;
  Vector y(5);
  y << 0.1, 0.4, 0.3, 1.0, 1.2;
  auto ds = synth::make(x, y);
  BcartSampler s(ds, {}, LeafPrior::from_response(y));
  MoveProbabilities mp;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    RegressionTree start(2);
    auto grown = s.propose(start, rng, MoveType::grow, mp);
    ASSERT_TRUE(grown.feasible);
    const auto& rule = *grown.tree.node(0).rule;
    // Explicit densities: one leaf to pick, two available features, and the
    // chosen feature's distinct values at the root.
    const double v = rule.feature == 0 ? 5.0 : 4.0;
    const double q_fwd = mp.grow * 1.0 * 0.5 * (1.0 / v);
    const double q_rev = mp.prune * 1.0;  // one prunable node
    EXPECT_NEAR(q_fwd * std::exp(grown.log_ratio), q_rev, 1e-14);

    auto pruned = s.propose(grown.tree, rng, MoveType::prune, mp);
    ASSERT_TRUE(pruned.feasible);
    EXPECT_NEAR(pruned.log_ratio, -grown.log_ratio, 1e-12);
    EXPECT_EQ(pruned.tree.structure_key(), start.structure_key());
  }
}

TEST(Proposal, ChangeAndSwapAreSymmetric) {
  auto ds = synth::smooth(30, 0.1, 2);
  BcartSampler s(ds, {}, LeafPrior::from_response(ds.response));
  auto chain = s.run({300, 100, 1}, 4);
  Rng rng(9);
  for (const auto& t : chain.samples) {
    if (t.split_count() == 0) continue;
    EXPECT_EQ(s.propose(t, rng, MoveType::change).log_ratio, 0.0);
    EXPECT_EQ(s.propose(t, rng, MoveType::swap).log_ratio, 0.0);
  }
}

TEST(Chain, SampleBookkeeping) {
  auto ds = four_point();
  auto res = run_chain(ds, {}, LeafPrior::from_response(ds.response), {11, 10, 1}, 3);
  EXPECT_EQ(res.samples.size(), 1u);
  auto res2 = run_chain(ds, {}, LeafPrior::from_response(ds.response), {7000, 2000, 5}, 3);
  EXPECT_EQ(res2.samples.size(), 1000u);
}

TEST(Chain, DeterministicGivenSeed) {
  auto ds = synth::smooth(60, 0.2, 1);
  auto lp = LeafPrior::from_response(ds.response);
  auto a = run_chain(ds, {}, lp, {500, 100, 5}, 42);
  auto b = run_chain(ds, {}, lp, {500, 100, 5}, 42);
  ASSERT_EQ(a.samples.size(), b.samples.size());
  for (std::size_t i = 0; i < a.samples.size(); ++i) EXPECT_EQ(a.samples[i].structure_key(), b.samples[i].structure_key());
  EXPECT_EQ(a.best_log_posterior, b.best_log_posterior);
}

TEST(Chain, StateLogPosteriorStaysConsistent) {
  auto ds = synth::smooth(50, 0.2, 3);
  auto lp = LeafPrior::from_response(ds.response);
  BcartSampler s(ds, {}, lp);
  auto st = s.initial_state(8);
  for (int i = 0; i < 400; ++i) {
    s.step(st);
    ASSERT_TRUE(std::isfinite(st.log_posterior));
    if (i % 50 == 0) {
      const double want = log_marginal_likelihood(st.tree, ds, lp) + log_tree_prior(st.tree, {}, ds);
      EXPECT_NEAR(st.log_posterior, want, 1e-9);
    }
  }
}

TEST(Chain, BestBeatsSingleLeafOnStep) {
  auto ds = four_point();
  auto lp = LeafPrior::from_response(ds.response);
  auto res = run_chain(ds, {}, lp, {2000, 500, 1}, 1);
  BcartSampler s(ds, {}, lp);
  EXPECT_GE(res.best_log_posterior, s.log_posterior(RegressionTree(1)));
}

TEST(Chain, MatchesEnumeratedPosterior) {
  auto ds = synth::tiny();
  const TreePrior tp{};
  const auto lp = LeafPrior::from_response(ds.response);
  std::map<std::string, double> exact;
  double norm = 0.0;
  for (const auto& t : synth::tiny_tree_space()) {
    const double w = std::exp(oracle::log_tree_density(t, ds, tp, lp));
    exact[t.structure_key()] = w;
    norm += w;
  }
  for (auto& [k, w] : exact) w /= norm;

  BcartSampler s(ds, tp, lp);
  auto st = s.initial_state(2024);
  std::map<std::string, double> freq;
  const int iters = 50000;
  for (int i = 0; i < iters; ++i) {
    s.step(st);
    freq[st.tree.structure_key()] += 1.0 / iters;
  }
  double tv = 0.0;
  for (const auto& [k, p] : exact) tv += std::abs(p - freq[k]);
  for (const auto& [k, f] : freq) {
    EXPECT_TRUE(exact.count(k)) << "chain visited an invalid tree " << k;
  }
  EXPECT_LT(0.5 * tv, 0.05);
}

TEST(Prediction, SingleLeafGivesPosteriorMean) {
  auto ds = four_point();
  auto lp = LeafPrior::from_response(ds.response);
  BcartSampler s(ds, {}, lp);
  RegressionTree t(1);
  s.refresh_leaves(t);
  const double want = (lp.a * lp.mu0 + 4.0 * ds.response.mean()) / (lp.a + 4.0);
  std::vector<double> x{100.0};
  EXPECT_NEAR(predict_bcart(t, x), want, 1e-12);
}

TEST(Prediction, StepLowSideNearZero) {
  auto ds = synth::step(100, 1, 0, 2.0, 0.2, 11);
  auto res = run_chain(ds, {}, LeafPrior::from_response(ds.response), {3000, 1000, 5}, 5);
  std::vector<double> x{0.2};
  EXPECT_NEAR(predict_bcart(res.best, x), 0.0, 0.5);
  EXPECT_NEAR(predict_bcart_average(res.samples, x), 0.0, 0.5);
}

TEST(Prediction, ConstantResponse) {
  auto ds = synth::null(50, 2, 4);
  ds.response.setConstant(3.0);
  auto res = run_chain(ds, {}, LeafPrior::from_response(ds.response), {1000, 200, 5}, 1);
  std::vector<double> x{0.5, 0.5};
  EXPECT_NEAR(predict_bcart(res.best, x), 3.0, 0.1);
}

TEST(Inclusion, Definitions) {
  RegressionTree leaf(4);
  auto zero = inclusion_proportions(std::vector<RegressionTree>{leaf, leaf}, 4);
  EXPECT_EQ(zero.proportions, std::vector<double>(4, 0.0));

  RegressionTree on2(4);
  on2.split(0, {2, 0.5});
  auto only2 = inclusion_proportions(std::vector<RegressionTree>{on2, on2}, 4);
  EXPECT_EQ(only2.proportions, (std::vector<double>{0, 0, 1, 0}));

  RegressionTree on0(4), on1(4);
  on0.split(0, {0, 0.5});
  on1.split(0, {1, 0.5});
  auto mixed = inclusion_proportions(std::vector<RegressionTree>{on0, on1}, 4);
  EXPECT_EQ(mixed.proportions, (std::vector<double>{0.5, 0.5, 0, 0}));

  EXPECT_THROW(inclusion_proportions(std::vector<RegressionTree>{on0}, 3), DataError);
}

TEST(Inclusion, BoundedAndPerSampleSumsToOne) {
  auto ds = synth::smooth(80, 0.2, 2);
  auto res = run_chain(ds, {}, LeafPrior::from_response(ds.response), {1500, 500, 10}, 2);
  auto p = inclusion_proportions(res.samples, 2);
  for (double v : p.proportions) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
  for (const auto& t : res.samples) {
    if (t.split_count() == 0) continue;
    auto one = inclusion_proportions(std::vector<RegressionTree>{t}, 2);
    EXPECT_NEAR(one.proportions[0] + one.proportions[1], 1.0, 1e-12);
  }
}

