#include <gtest/gtest.h>

#include "bnt/metrics.hpp"
#include "bnt/random.hpp"
#include "oracles.hpp"

using namespace bnt;

namespace {

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out[i++] = x;
  return out;
}

std::vector<double> to_std(const Vector& v) { return {v.data(), v.data() + v.size()}; }

}  // namespace

TEST(Metrics, PerfectFit) {
  auto m = compute_metrics(vec({1, 2, 3}), vec({1, 2, 3}), 1);
  EXPECT_EQ(m.mae, 0.0);
  EXPECT_EQ(m.mape, 0.0);
  EXPECT_EQ(m.rmse, 0.0);
  EXPECT_EQ(*m.r2, 1.0);
}

TEST(Metrics, HandExample) {
  auto m = compute_metrics(vec({1, 2, 3}), vec({2, 2, 2}), 1);
  EXPECT_NEAR(m.mae, 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(m.rmse, std::sqrt(2.0 / 3.0), 1e-15);
  EXPECT_NEAR(m.mape, 4.0 / 9.0, 1e-15);
  EXPECT_NEAR(*m.r2, 0.0, 1e-15);
  EXPECT_NEAR(*m.adj_r2, -1.0, 1e-15);
}

TEST(Metrics, MeanPredictorHasZeroR2) {
  Rng rng(1);
  Vector y(50);
  for (auto& v : y) v = rng.normal() + 3.0;
  Vector yhat = Vector::Constant(50, y.mean());
  EXPECT_NEAR(*compute_metrics(y, yhat, 2).r2, 0.0, 1e-12);
}

TEST(Metrics, ConstantResponseLeavesR2Undefined) {
  auto m = compute_metrics(vec({2, 2, 2}), vec({1, 2, 3}), 1);
  EXPECT_FALSE(m.r2);
  EXPECT_FALSE(m.adj_r2);
  EXPECT_NEAR(m.mae, 2.0 / 3.0, 1e-15);
}

TEST(Metrics, AdjustedUndefinedForSmallN) {
  auto m = compute_metrics(vec({1, 2, 3}), vec({1, 2, 2}), 2);
  EXPECT_TRUE(m.r2);
  EXPECT_FALSE(m.adj_r2);
}

TEST(Metrics, ZeroResponsesSkippedInMape) {
  auto m = compute_metrics(vec({0, 2, 4}), vec({1, 1, 4}), 0);
  EXPECT_EQ(m.mape_skipped, 1u);
  EXPECT_NEAR(m.mape, 0.25, 1e-15);
}

TEST(Metrics, Errors) {
  EXPECT_THROW(compute_metrics(vec({1, 2}), vec({1}), 0), DataError);
  EXPECT_THROW(compute_metrics(vec({1}), vec({1}), 0), DataError);
}

TEST(Metrics, AgreesWithBruteForceAndProperties) {
  Rng rng(7);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 5 + rng.index(200), d = rng.index(4);
    Vector y(n), yhat(n);
    for (std::size_t i = 0; i < n; ++i) {
      y[i] = 10.0 + 5.0 * rng.normal();
      yhat[i] = y[i] + rng.normal();
    }
    auto m = compute_metrics(y, yhat, d);
    auto b = oracle::metrics(to_std(y), to_std(yhat), d);
    EXPECT_NEAR(m.mae, b.mae, 1e-12 * std::max(1.0, b.mae));
    EXPECT_NEAR(m.mape, b.mape, 1e-12 * std::max(1.0, b.mape));
    EXPECT_NEAR(m.rmse, b.rmse, 1e-12 * std::max(1.0, b.rmse));
    EXPECT_NEAR(*m.r2, b.r2, 1e-12);
    EXPECT_NEAR(*m.adj_r2, b.adj_r2, 1e-12);
    EXPECT_GE(m.rmse, m.mae);
    if (d >= 1) {
      EXPECT_LE(*m.adj_r2, *m.r2);
    }

    const double c = 3.7;
    Vector ys = y * c, yhs = yhat * c;
    auto s = compute_metrics(ys, yhs, d);
    EXPECT_NEAR(s.mae, c * m.mae, 1e-12 * c * m.mae);
    EXPECT_NEAR(s.rmse, c * m.rmse, 1e-12 * c * m.rmse);
    EXPECT_NEAR(s.mape, m.mape, 1e-12);
    EXPECT_NEAR(*s.r2, *m.r2, 1e-12);
    EXPECT_NEAR(*s.adj_r2, *m.adj_r2, 1e-12);

    Vector yt = y.array() + 50.0, yht = yhat.array() + 50.0;
    auto t = compute_metrics(yt, yht, d);
    EXPECT_NEAR(t.mae, m.mae, 1e-11);
    EXPECT_NEAR(t.rmse, m.rmse, 1e-11);
    EXPECT_NE(t.mape, m.mape);
  }
}

TEST(Metrics, EqualAbsoluteResidualsGiveEquality) {
  auto m = compute_metrics(vec({1, 2, 3, 4}), vec({2, 1, 4, 3}), 0);
  EXPECT_NEAR(m.rmse, m.mae, 1e-15);
}

TEST(Metrics, RecoversPublishedRowScale) {
  // A predictor with residual RMSE 3.033 on a response of AutoMPG-like
  // spread lands at the published R^2 neighbourhood.
  Rng rng(2);
  const std::size_t n = 118;
  Vector y(n), yhat(n);
  for (std::size_t i = 0; i < n; ++i) y[i] = 23.5 + 7.8 * rng.normal();
  Vector e(n);
  for (std::size_t i = 0; i < n; ++i) e[i] = rng.normal();
  e *= 3.033 / std::sqrt(e.squaredNorm() / n);
  yhat = y + e;
  auto m = compute_metrics(y, yhat, 4);
  EXPECT_NEAR(m.rmse, 3.033, 1e-9);
  EXPECT_NEAR(*m.r2, 0.869, 0.05);
}
