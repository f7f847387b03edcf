#include <gtest/gtest.h>

#include <random>

#include "harmonrank/losses.hpp"
#include "oracles.hpp"

using namespace harmonrank;

namespace {

struct RandomBatch {
  std::vector<double> scores;
  BatchLabels labels;
};

// Every objective gets at least one positive and one negative.
RandomBatch random_batch(std::mt19937_64& rng, std::size_t n, std::size_t m, bool ties = false) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_int_distribution<int> small(0, 4);
  std::bernoulli_distribution coin(0.35);
  RandomBatch b{std::vector<double>(n), BatchLabels(n, m)};
  for (double& s : b.scores) s = ties ? small(rng) : normal(rng);
  for (std::size_t j = 0; j < m; ++j) {
    for (std::size_t i = 0; i < n; ++i) b.labels(i, j) = coin(rng);
    b.labels(0, j) = 1;
    b.labels(1, j) = 0;
  }
  return b;
}

LossWeights random_weights(std::mt19937_64& rng, std::size_t m) {
  std::uniform_real_distribution<double> u(0.2, 2.0);
  LossWeights w;
  for (std::size_t j = 0; j < m; ++j) w.w.push_back(u(rng));
  return w;
}

}  // namespace

TEST(ExactAuc, Examples) {
  const std::vector<double> s = {0.1, 0.4, 0.35, 0.8};
  const std::vector<std::uint8_t> y = {0, 0, 1, 1};
  EXPECT_DOUBLE_EQ(exact_auc(s, y), 0.75);
  EXPECT_DOUBLE_EQ(exact_auc(std::vector<double>{0, 1, 2, 3}, y), 1.0);
  EXPECT_DOUBLE_EQ(exact_auc(std::vector<double>{1, 1, 1, 1}, std::vector<std::uint8_t>{0, 1, 0, 1}), 0.5);
  EXPECT_DOUBLE_EQ(
      exact_auc(std::vector<double>{1, 1, 1, 1}, std::vector<std::uint8_t>{0, 1, 0, 1}, TieCredit::strict_ge), 1.0);
  EXPECT_THROW(exact_auc(s, std::vector<std::uint8_t>{0, 0, 0, 0}), std::invalid_argument);
  EXPECT_THROW(exact_auc(s, std::vector<std::uint8_t>{0, 1}), std::invalid_argument);
}

TEST(ExactAuc, MatchesPairwiseOracleWithTies) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 300; ++trial) {
    const auto b = random_batch(rng, 2 + trial % 63, 1, trial % 2 == 0);
    const auto y = b.labels.column(0);
    EXPECT_NEAR(exact_auc(b.scores, y), oracle::pairwise_auc(b.scores, y), 1e-12);
  }
}

TEST(AucReport, SumsAndDegenerateColumns) {
  BatchLabels labels(4, 3);
  const std::vector<double> s = {0, 1, 2, 3};
  labels(2, 0) = labels(3, 0) = 1;
  labels(3, 1) = 1;
  const AUCReport r = auc_report(s, labels);
  EXPECT_DOUBLE_EQ(*r.per_objective[0], 1.0);
  EXPECT_DOUBLE_EQ(*r.per_objective[1], 1.0);
  EXPECT_FALSE(r.per_objective[2].has_value());
  EXPECT_TRUE(r.degenerate);
  EXPECT_DOUBLE_EQ(r.sum, 2.0);

  std::mt19937_64 rng(2);
  const auto b = random_batch(rng, 16, 4, true);
  const AUCReport rr = auc_report(b.scores, b.labels);
  double sum = 0.0;
  for (std::size_t m = 0; m < 4; ++m) {
    EXPECT_NEAR(*rr.per_objective[m], oracle::pairwise_auc(b.scores, b.labels.column(m)), 1e-12);
    sum += *rr.per_objective[m];
  }
  EXPECT_DOUBLE_EQ(rr.sum, sum);
  EXPECT_FALSE(rr.degenerate);
}

TEST(RankAucLoss, HardRankLimitIsMinusWeightedAucSum) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const auto b = random_batch(rng, 2 + trial % 40, 3);
    const auto w = random_weights(rng, 3);
    const LossResult l = rank_auc_loss(b.scores, b.labels, w, {1e-6});
    const AUCReport r = auc_report(b.scores, b.labels);
    double target = 0.0;
    for (std::size_t m = 0; m < 3; ++m) target += w.at(m) * *r.per_objective[m];
    EXPECT_NEAR(-l.loss, target, 1e-6);
  }
}

TEST(RankAucLoss, FiniteDifferences) {
  const BatchLabels two = [] {
    BatchLabels l(2, 1);
    l(1, 0) = 1;
    return l;
  }();
  // At eps = 1 the scores [0, 1] sit exactly where the two soft ranks start
  // to pool, a kink of the projection. Ties are pooled, so the gradient is
  // the one-sided derivative taken towards a smaller gap.
  const std::vector<double> s2 = {0.0, 1.0};
  const auto f2 = [&](std::vector<double> x) { return rank_auc_loss(x, two, {}, {1.0}).loss; };
  const auto g2 = rank_auc_loss(s2, two, {}, {1.0}).grad;
  const double h = 1e-6;
  EXPECT_NEAR(g2[0], (f2({h, 1.0}) - f2(s2)) / h, 1e-5);
  EXPECT_NEAR(g2[1], (f2(s2) - f2({0.0, 1.0 - h})) / h, 1e-5);
  // Away from the kink both sides agree.
  const std::vector<double> s3 = {0.0, 0.6};
  EXPECT_LT(oracle::rel_error(rank_auc_loss(s3, two, {}, {1.0}).grad, oracle::fd_gradient(f2, s3, 1e-6)), 1e-5);

  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 40; ++trial) {
    const auto b = random_batch(rng, 3 + trial % 20, 3);
    const auto w = random_weights(rng, 3);
    const SoftRankConfig cfg{2.0};
    const auto f = [&](const std::vector<double>& x) { return rank_auc_loss(x, b.labels, w, cfg).loss; };
    const auto g = rank_auc_loss(b.scores, b.labels, w, cfg).grad;
    EXPECT_LT(oracle::rel_error(g, oracle::fd_gradient(f, b.scores, 1e-6)), 1e-4);
  }
}

TEST(RankAucLoss, DegenerateObjectiveContributesNothing) {
  std::mt19937_64 rng(5);
  auto b = random_batch(rng, 12, 2);
  BatchLabels only_first(12, 1);
  for (std::size_t i = 0; i < 12; ++i) {
    b.labels(i, 1) = 0;
    only_first(i, 0) = b.labels(i, 0);
  }
  const LossResult both = rank_auc_loss(b.scores, b.labels, {}, {0.7});
  const LossResult one = rank_auc_loss(b.scores, only_first, {}, {0.7});
  EXPECT_DOUBLE_EQ(both.loss, one.loss);
  EXPECT_EQ(both.grad, one.grad);
}

TEST(RankAucLoss, LinearInWeights) {
  std::mt19937_64 rng(6);
  const auto b = random_batch(rng, 30, 3);
  const LossWeights w1{{1.0, 0.5, 2.0}}, w2{{0.3, 1.5, 0.1}}, w12{{1.3, 2.0, 2.1}};
  const SoftRankConfig cfg{0.5};
  const auto l1 = rank_auc_loss(b.scores, b.labels, w1, cfg);
  const auto l2 = rank_auc_loss(b.scores, b.labels, w2, cfg);
  const auto l12 = rank_auc_loss(b.scores, b.labels, w12, cfg);
  EXPECT_NEAR(l12.loss, l1.loss + l2.loss, 1e-12);
  for (std::size_t i = 0; i < 30; ++i) EXPECT_NEAR(l12.grad[i], l1.grad[i] + l2.grad[i], 1e-12);
}

TEST(RankAucLoss, Errors) {
  BatchLabels l(3, 1);
  EXPECT_THROW(rank_auc_loss(std::vector<double>{1, 2}, l, {}, {}), std::invalid_argument);
  EXPECT_THROW(rank_auc_loss(std::vector<double>{1, NAN, 2}, l, {}, {}), std::invalid_argument);
  EXPECT_THROW(rank_auc_loss(std::vector<double>{1, 2, 3}, l, LossWeights{{1.0, 1.0}}, {}), std::invalid_argument);
  EXPECT_THROW(rank_auc_loss(std::vector<double>{1, 2, 3}, l, LossWeights{{-1.0}}, {}), std::invalid_argument);
}

TEST(Mbce, ExamplesAndFiniteDifferences) {
  BatchLabels one(1, 1);
  one(0, 0) = 1;
  EXPECT_NEAR(mbce_loss(std::vector<double>{0.0}, one, {}, BceHeads::identity(1)).loss, std::log(2.0), 1e-15);
  EXPECT_LT(mbce_loss(std::vector<double>{60.0}, one, {}, BceHeads::identity(1)).loss, 1e-20);

  std::mt19937_64 rng(7);
  const auto b = random_batch(rng, 8, 3);
  const auto w = random_weights(rng, 3);
  BceHeads heads{{0.8, 1.3, -0.4}, {0.1, -0.2, 0.3}};
  const auto f = [&](const std::vector<double>& x) { return mbce_loss(x, b.labels, w, heads).loss; };
  const MbceResult r = mbce_loss(b.scores, b.labels, w, heads);
  EXPECT_LT(oracle::rel_error(r.grad_scores, oracle::fd_gradient(f, b.scores, 1e-6)), 1e-5);
  std::vector<double> hv = heads.scale;
  hv.insert(hv.end(), heads.bias.begin(), heads.bias.end());
  const auto fh = [&](const std::vector<double>& x) {
    BceHeads h{{x[0], x[1], x[2]}, {x[3], x[4], x[5]}};
    return mbce_loss(b.scores, b.labels, w, h).loss;
  };
  std::vector<double> gh = r.grad_heads.scale;
  gh.insert(gh.end(), r.grad_heads.bias.begin(), r.grad_heads.bias.end());
  EXPECT_LT(oracle::rel_error(gh, oracle::fd_gradient(fh, hv, 1e-6)), 1e-5);
}

TEST(LabelAgg, ExamplesAndFiniteDifferences) {
  BatchLabels l(1, 2);
  l(0, 0) = l(0, 1) = 1;
  const LossResult r = label_agg_loss(std::vector<double>{0.0}, l, LossWeights{{1.0, 1.0}});
  EXPECT_DOUBLE_EQ(r.loss, 4.0);
  EXPECT_DOUBLE_EQ(r.grad[0], -4.0);
  EXPECT_DOUBLE_EQ(label_agg_loss(std::vector<double>{2.0}, l, {}).loss, 0.0);

  std::mt19937_64 rng(8);
  const auto b = random_batch(rng, 10, 3);
  const auto w = random_weights(rng, 3);
  const auto f = [&](const std::vector<double>& x) { return label_agg_loss(x, b.labels, w).loss; };
  EXPECT_LT(oracle::rel_error(label_agg_loss(b.scores, b.labels, w).grad, oracle::fd_gradient(f, b.scores, 1e-6)),
            1e-5);
}

TEST(Pairwise, ExamplesAndFiniteDifferences) {
  BatchLabels l(2, 1);
  l(0, 0) = 1;
  EXPECT_NEAR(pairwise_logistic_loss(std::vector<double>{0.5, 0.5}, l, {}).loss, std::log(2.0), 1e-15);
  EXPECT_LT(pairwise_logistic_loss(std::vector<double>{80.0, 0.0}, l, {}).loss, 1e-30);
  EXPECT_DOUBLE_EQ(pairwise_square_loss(std::vector<double>{0.5, 0.5}, l, {}).loss, 1.0);
  EXPECT_DOUBLE_EQ(pairwise_square_loss(std::vector<double>{1.5, 0.5}, l, {}).loss, 0.0);

  std::mt19937_64 rng(9);
  const auto b = random_batch(rng, 8, 3);
  const auto w = random_weights(rng, 3);
  const auto fl = [&](const std::vector<double>& x) { return pairwise_logistic_loss(x, b.labels, w).loss; };
  const auto fs = [&](const std::vector<double>& x) { return pairwise_square_loss(x, b.labels, w).loss; };
  EXPECT_LT(oracle::rel_error(pairwise_logistic_loss(b.scores, b.labels, w).grad,
                              oracle::fd_gradient(fl, b.scores, 1e-6)),
            1e-5);
  EXPECT_LT(
      oracle::rel_error(pairwise_square_loss(b.scores, b.labels, w).grad, oracle::fd_gradient(fs, b.scores, 1e-6)),
      1e-5);
}

TEST(Pairwise, SumNormalizationScalesByPairCount) {
  std::mt19937_64 rng(13);
  const auto b = random_batch(rng, 25, 2);
  for (auto loss : {pairwise_logistic_loss, pairwise_square_loss}) {
    double expected = 0.0;
    for (std::size_t m = 0; m < 2; ++m) {
      BatchLabels one(25, 1);
      for (std::size_t i = 0; i < 25; ++i) one(i, 0) = b.labels(i, m);
      const double pairs = static_cast<double>(one.positives(0)) * static_cast<double>(25 - one.positives(0));
      expected += pairs * loss(b.scores, one, {}, PairNormalization::mean).loss;
    }
    EXPECT_NEAR(loss(b.scores, b.labels, {}, PairNormalization::sum).loss, expected, 1e-9);
  }
}

TEST(Aucm, ZeroConfigurationAndProjection) {
  std::mt19937_64 rng(10);
  const auto b = random_batch(rng, 20, 2);
  AUCMState state = AUCMState::init(b.labels);
  const std::vector<double> zeros(20, 0.0);
  // With alpha = 0 and zero scores only the margin coupling could contribute, and it is gated by alpha.
  EXPECT_DOUBLE_EQ(aucm_objective(zeros, b.labels, {}, state).loss, 0.0);

  // Scores that make the alpha gradient negative: positives far above negatives.
  std::vector<double> s(20);
  for (std::size_t i = 0; i < 20; ++i) s[i] = b.labels(i, 0) ? 10.0 : -10.0;
  AUCMState st = AUCMState::init(b.labels);
  aucm_step(s, b.labels, {}, st, 5.0);
  EXPECT_EQ(st.alpha[0], 0.0);
}

TEST(Aucm, FiniteDifferences) {
  std::mt19937_64 rng(11);
  const auto b = random_batch(rng, 8, 3);
  const auto w = random_weights(rng, 3);
  AUCMState state = AUCMState::init(b.labels, 0.7);
  state.a = {0.2, -0.1, 0.4};
  state.b = {-0.3, 0.1, 0.0};
  state.alpha = {0.5, 0.2, 1.1};
  const auto f = [&](const std::vector<double>& x) { return aucm_objective(x, b.labels, w, state).loss; };
  AucmGradients g;
  const LossResult r = aucm_objective(b.scores, b.labels, w, state, &g);
  EXPECT_LT(oracle::rel_error(r.grad, oracle::fd_gradient(f, b.scores, 1e-6)), 1e-5);

  std::vector<double> aux = state.a;
  aux.insert(aux.end(), state.b.begin(), state.b.end());
  aux.insert(aux.end(), state.alpha.begin(), state.alpha.end());
  const auto fa = [&](const std::vector<double>& x) {
    AUCMState s = state;
    s.a = {x[0], x[1], x[2]};
    s.b = {x[3], x[4], x[5]};
    s.alpha = {x[6], x[7], x[8]};
    return aucm_objective(b.scores, b.labels, w, s).loss;
  };
  std::vector<double> ga = g.a;
  ga.insert(ga.end(), g.b.begin(), g.b.end());
  ga.insert(ga.end(), g.alpha.begin(), g.alpha.end());
  EXPECT_LT(oracle::rel_error(ga, oracle::fd_gradient(fa, aux, 1e-6)), 1e-5);
}

TEST(Aucm, ScoreGradientIsShiftFree) {
  // A common shift of every score moves a and b, not the ranking; with a and b
  // at the class means the score gradient has no net push.
  std::mt19937_64 rng(12);
  const auto b = random_batch(rng, 30, 2);
  AUCMState state = AUCMState::init(b.labels);
  state.alpha = {0.8, 0.3};
  for (std::size_t m = 0; m < 2; ++m) {
    double sp = 0, sn = 0, np = 0, nn = 0;
    for (std::size_t i = 0; i < 30; ++i) (b.labels(i, m) ? sp : sn) += b.scores[i], (b.labels(i, m) ? np : nn) += 1;
    state.a[m] = sp / np;
    state.b[m] = sn / nn;
  }
  const LossResult r = aucm_objective(b.scores, b.labels, {}, state);
  EXPECT_NEAR(std::accumulate(r.grad.begin(), r.grad.end(), 0.0), 0.0, 1e-12);
}

TEST(Aucm, ExcludesConstantObjectives) {
  BatchLabels l(4, 2);
  l(0, 0) = 1;
  const AUCMState s = AUCMState::init(l);
  EXPECT_EQ(s.excluded(), std::vector<std::size_t>{1});
}
