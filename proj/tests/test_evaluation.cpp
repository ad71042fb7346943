#include <algorithm>
#include <random>

#include <gtest/gtest.h>

#include "latentcast/evaluation.hpp"

using namespace latentcast;

namespace {

EvaluationItem item(std::vector<double> z, std::vector<double> pi) {
  EvaluationItem it;
  it.actual = Eigen::Map<Eigen::VectorXd>(z.data(), static_cast<Eigen::Index>(z.size()));
  it.in_stock = Eigen::Map<Eigen::VectorXd>(pi.data(), static_cast<Eigen::Index>(pi.size()));
  return it;
}

ForecastSamples constant_samples(Eigen::Index H, double value, int n = 10) {
  ForecastSamples s;
  s.paths = Eigen::MatrixXd::Constant(n, H, value);
  return s;
}

}  // namespace

TEST(QuantileLoss, MedianIsAbsoluteError) {
  EXPECT_EQ(quantile_loss(7, 3, 0.5), 4.0);
  EXPECT_EQ(quantile_loss(3, 7, 0.5), 4.0);
}

TEST(QuantileLoss, DirectFormula) {
  EXPECT_NEAR(quantile_loss(10, 8, 0.9), 3.6, 1e-15);
  EXPECT_NEAR(quantile_loss(8, 10, 0.9), 0.4, 1e-15);
}

TEST(QuantileLoss, ZeroAtTruthAndNonnegative) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-50, 50), r(0.01, 0.99);
  for (int k = 0; k < 1000; ++k) {
    const double z = u(rng), zh = u(rng), rho = r(rng);
    EXPECT_EQ(quantile_loss(z, z, rho), 0.0);
    EXPECT_GE(quantile_loss(z, zh, rho), 0.0);
  }
  EXPECT_THROW(quantile_loss(1, 2, 0.0), ConfigError);
  EXPECT_THROW(quantile_loss(1, 2, 1.0), ConfigError);
}

TEST(QuantileLoss, EmpiricalMinimizerIsQuantile) {
  // Over Gamma(2, 3) draws the minimizer of the mean loss is the empirical
  // rho-quantile; it must fall within the sampling band of the true quantile.
  const int n = 100000;
  std::mt19937_64 rng(2);
  std::gamma_distribution<double> gd(2.0, 3.0);
  std::vector<double> z(n);
  for (auto& v : z) v = gd(rng);
  std::vector<double> sorted = z;
  std::sort(sorted.begin(), sorted.end());
  for (double rho : {0.5, 0.9}) {
    auto mean_loss = [&](double zh) {
      double s = 0.0;
      for (double v : z) s += quantile_loss(v, zh, rho);
      return s / n;
    };
    // Golden-section search on the convex mean loss.
    double lo = sorted.front(), hi = sorted.back();
    const double g = (std::sqrt(5.0) - 1.0) / 2.0;
    for (int it = 0; it < 80; ++it) {
      const double a = hi - g * (hi - lo), b = lo + g * (hi - lo);
      if (mean_loss(a) < mean_loss(b)) hi = b;
      else lo = a;
    }
    const double zh = 0.5 * (lo + hi);
    // True Gamma(2, 3) quantiles; band is 4 standard errors of the sample quantile.
    const double q = rho == 0.5 ? 5.035040 : 11.669160;
    const double dens = q / 9.0 * std::exp(-q / 3.0);
    const double band = 4.0 * std::sqrt(rho * (1 - rho) / n) / dens;
    EXPECT_NEAR(zh, q, band) << rho;
    const auto k = static_cast<size_t>(std::ceil(rho * n)) - 1;
    EXPECT_LE(mean_loss(sorted[k]), mean_loss(zh) + 1e-12);
  }
}

TEST(Risk, PerfectForecastIsZero) {
  std::vector<EvaluationItem> items = {item({1, 2, 3, 4}, {1, 1, 1, 1}), item({0, 0, 5, 1}, {1, 1, 1, 1})};
  const Span s{1, 3};
  const auto r = risk(items, std::vector<double>{span_total(items[0], s), span_total(items[1], s)}, s, 0.9);
  ASSERT_TRUE(r);
  EXPECT_EQ(r->value, 0.0);
  EXPECT_EQ(r->n_items, 2);
}

TEST(Risk, InStockFilterAtEightyPercent) {
  // S = 10: 7 in-stock days is excluded, 8 is retained.
  std::vector<double> z(10, 1.0);
  std::vector<double> seven(10, 1.0), eight(10, 1.0);
  std::fill(seven.begin(), seven.begin() + 3, 0.0);
  std::fill(eight.begin(), eight.begin() + 2, 0.0);
  const Span s{0, 10};
  const std::vector<EvaluationItem> only7 = {item(z, seven)};
  EXPECT_FALSE(risk(only7, std::vector<double>{0.0}, s, 0.5).has_value());
  const std::vector<EvaluationItem> both = {item(z, seven), item(z, eight)};
  const auto r = risk(both, std::vector<double>{100.0, 6.0}, s, 0.5);
  ASSERT_TRUE(r);
  EXPECT_EQ(r->n_items, 1);
  EXPECT_EQ(r->value, 2.0);
}

TEST(Risk, HandComputedThreeItems) {
  // Span (1, 2). Z = sum pi z over days 1..2.
  //   item 0: z = 4 + 2 = 6, prediction 5, rho 0.9 -> 2 * 1 * 0.9 = 1.8
  //   item 1: z = 0 + 3 = 3, prediction 7        -> 2 * 4 * 0.1 = 0.8
  //   item 2: pi = 0.5 on day 2 (still in stock), z = 1 + 0.5 * 4 = 3, prediction 3 -> 0
  const std::vector<EvaluationItem> items = {item({9, 4, 2, 0}, {1, 1, 1, 1}), item({9, 0, 3, 0}, {0, 1, 1, 0}),
                                             item({9, 1, 4, 0}, {1, 1, 0.5, 1})};
  const auto r = risk(items, std::vector<double>{5.0, 7.0, 3.0}, Span{1, 2}, 0.9);
  ASSERT_TRUE(r);
  EXPECT_EQ(r->n_items, 3);
  EXPECT_NEAR(r->value, (1.8 + 0.8 + 0.0) / 3.0, 1e-15);
  EXPECT_EQ(span_total(items[2], Span{1, 2}), 3.0);
}

TEST(Risk, EmptyRetainedSetIsSignalled) {
  const std::vector<EvaluationItem> items = {item({1, 1}, {0, 0})};
  EXPECT_FALSE(risk(items, std::vector<double>{1.0}, Span{0, 2}, 0.5).has_value());
  const std::vector<EvaluationItem> none;
  EXPECT_FALSE(risk(none, std::vector<double>{}, Span{0, 1}, 0.5).has_value());
}

TEST(Risk, ScaleEquivariant) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0, 10);
  std::vector<EvaluationItem> items;
  std::vector<double> pred;
  for (int i = 0; i < 20; ++i) {
    std::vector<double> z(6), pi(6, 1.0);
    for (auto& v : z) v = u(rng);
    items.push_back(item(z, pi));
    pred.push_back(u(rng) * 3);
  }
  const Span s{1, 4};
  for (double c : {0.5, 3.0, 17.0}) {
    std::vector<EvaluationItem> scaled = items;
    std::vector<double> sp = pred;
    for (auto& it : scaled) it.actual *= c;
    for (auto& v : sp) v *= c;
    for (double rho : {0.5, 0.9}) {
      const double base = risk(items, pred, s, rho)->value;
      EXPECT_NEAR(risk(scaled, sp, s, rho)->value, c * base, 1e-12 * c * base);
    }
  }
}

TEST(Risk, ErrorsOnMisalignedInput) {
  const std::vector<EvaluationItem> items = {item({1, 2, 3}, {1, 1, 1})};
  EXPECT_THROW(risk(items, std::vector<double>{1.0, 2.0}, Span{0, 1}, 0.5), DataError);
  EXPECT_THROW(risk(items, std::vector<double>{1.0}, Span{2, 2}, 0.5), RangeError);
  const std::vector<EvaluationItem> bad = {item({1, 2, 3}, {1, 1})};
  EXPECT_THROW(risk(bad, std::vector<double>{1.0}, Span{0, 1}, 0.5), DataError);
}

TEST(Risk, FromSamplesUsesSpanQuantile) {
  ForecastSamples s;
  s.paths.resize(10, 3);
  for (int i = 0; i < 10; ++i) s.paths.row(i) << i, 0, 1;
  const std::vector<EvaluationItem> items = {item({4, 0, 1}, {1, 1, 1})};
  // Span (0, 2): path sums 0..9, median order statistic is 4 -> zero loss.
  EXPECT_EQ(risk(items, std::vector<ForecastSamples>{s}, Span{0, 2}, 0.5)->value, 0.0);
  // rho 0.9 picks 8; truth 4 -> 2 * 4 * 0.1.
  EXPECT_NEAR(risk(items, std::vector<ForecastSamples>{s}, Span{0, 2}, 0.9)->value, 0.8, 1e-15);
}

TEST(Reducers, DailyAndWeeklySpans) {
  const auto dy = daily_spans();
  ASSERT_EQ(dy.size(), 8u);
  EXPECT_EQ(dy.back().lead, 7);
  EXPECT_EQ(dy.back().length, 1);
  const auto wk = weekly_spans();
  ASSERT_EQ(wk.size(), 33u);
  EXPECT_EQ(wk.back().lead, 224);
  EXPECT_EQ(wk.back().length, 7);
}

TEST(Reducers, AverageOverSpans) {
  // Actual 1 every day, forecast constant 0: daily loss at rho = 0.5 is 1 for
  // every lead, weekly loss is 7.
  const Eigen::Index H = 231;
  std::vector<double> z(H, 1.0), pi(H, 1.0);
  const std::vector<EvaluationItem> items = {item(z, pi)};
  const std::vector<ForecastSamples> samples = {constant_samples(H, 0.0)};
  EXPECT_NEAR(average_risk(items, samples, daily_spans(), 0.5)->value, 1.0, 1e-15);
  EXPECT_NEAR(average_risk(items, samples, weekly_spans(), 0.5)->value, 7.0, 1e-15);
  // Out of stock during the first week only: that span is skipped, not counted as zero.
  std::vector<double> pi2 = pi;
  std::fill(pi2.begin(), pi2.begin() + 7, 0.0);
  const std::vector<EvaluationItem> items2 = {item(z, pi2)};
  EXPECT_NEAR(average_risk(items2, samples, weekly_spans(), 0.5)->value, 7.0, 1e-15);
  EXPECT_NEAR(average_risk(items2, samples, daily_spans(), 0.5)->value, 1.0, 1e-15);
}

TEST(Evaluate, RecordsPerSpanAndQuantile) {
  const Eigen::Index H = 10;
  std::vector<double> z(H, 2.0), pi(H, 1.0);
  const std::vector<EvaluationItem> items = {item(z, pi), item(z, std::vector<double>(H, 0.0))};
  const std::vector<ForecastSamples> samples = {constant_samples(H, 2.0), constant_samples(H, 5.0)};
  EvaluationSpec spec;
  spec.spans = {{0, 1}, {2, 5}};
  const auto recs = evaluate(items, samples, spec);
  // Two spans plus the dy8 reducer for each of the two default quantiles.
  ASSERT_EQ(recs.size(), 6u);
  EXPECT_EQ(recs[0].metric, "P50_risk");
  EXPECT_EQ(recs[2].metric, "P50_risk_dy8");
  EXPECT_EQ(recs[3].metric, "P90_risk");
  for (const auto& r : recs) {
    ASSERT_TRUE(r.value);
    EXPECT_EQ(*r.value, 0.0);
    EXPECT_EQ(r.n_items, 1);
  }
  spec.quantiles = {1.5};
  EXPECT_THROW(evaluate(items, samples, spec), ConfigError);
  spec.quantiles = {0.5};
  spec.in_stock_fraction = 0.0;
  EXPECT_THROW(evaluate(items, samples, spec), ConfigError);
}
