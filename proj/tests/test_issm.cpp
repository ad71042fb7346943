#include <random>

#include <gtest/gtest.h>

#include "latentcast/issm.hpp"

using namespace latentcast;

namespace {

ModelParameters params_with(const CompositeIssm& m, std::initializer_list<double> strengths) {
  ModelParameters p = m.default_parameters();
  int k = 0;
  for (double s : strengths) p.strengths[k++] = s;
  return p;
}

// Innovation shape of a single-component seasonal model over a design.
IssmCoefficients seasonal_coefs(const SeasonalityPattern& pat, const SeriesDesign& d) {
  const auto m = compose({make_seasonality(pat)});
  return m.materialize(params_with(m, {1.0}), d);
}

}  // namespace

TEST(Level, InnovationIsAlpha) {
  const auto m = compose({make_level()});
  const auto c = m.materialize(params_with(m, {0.5}), SeriesDesign::plain(10));
  for (Eigen::Index t = 0; t < 10; ++t) {
    EXPECT_EQ(c.g(t, 0), 0.5);
    EXPECT_EQ(c.a(t, 0), 1.0);
  }
  EXPECT_EQ(c.F(0, 0), 1.0);
}

TEST(Level, ForwardRecursion) {
  const auto m = compose({make_level()});
  const auto c = m.materialize(params_with(m, {1.0}), SeriesDesign::plain(3));
  Eigen::VectorXd l(1);
  l << 2.0;
  const double eps[2] = {1.0, -1.0};
  std::vector<double> path;
  for (int t = 0; t < 2; ++t) {
    l = c.F * l + c.g.row(t).transpose() * eps[t];
    path.push_back(l[0]);
  }
  EXPECT_EQ(path, (std::vector<double>{3.0, 2.0}));
}

TEST(LevelTrend, UndampedMatrices) {
  const auto c = make_level_trend();
  Eigen::Matrix2d F;
  F << 1, 1, 0, 1;
  EXPECT_EQ(c.transition, Eigen::MatrixXd(F));
  EXPECT_EQ(c.base_selector, Eigen::Vector2d(1, 1));
  EXPECT_EQ(c.num_strengths(), 2);
}

TEST(LevelTrend, DeterministicPropagation) {
  const auto m = compose({make_level_trend()});
  const auto c = m.materialize(params_with(m, {0.1, 0.1}), SeriesDesign::plain(2));
  const Eigen::Vector2d l0(1.0, 0.5);
  const Eigen::VectorXd l1 = c.F * l0;
  EXPECT_DOUBLE_EQ(c.a.row(1).dot(l1), 2.0);
}

TEST(LevelTrend, DampingReplacesOnes) {
  const auto c = make_level_trend({}, {}, 0.9);
  EXPECT_EQ(c.transition(0, 1), 0.9);
  EXPECT_EQ(c.transition(0, 0), 1.0);
  EXPECT_EQ(c.transition(1, 1), 1.0);
  EXPECT_EQ(c.base_selector[1], 0.9);
  EXPECT_THROW(make_level_trend({}, {}, 0.0), ConfigError);
  EXPECT_THROW(make_level_trend({}, {}, 1.2), ConfigError);
}

TEST(Seasonality, DayOfWeekShapeEqualsSelector) {
  const auto c = seasonal_coefs(SeasonalityPattern::day_of_week(), SeriesDesign::plain(30, 3));
  EXPECT_EQ(c.g, c.a);
}

TEST(Seasonality, WorkdayWeekendGrouping) {
  const auto pat = SeasonalityPattern::workday_weekend();
  EXPECT_EQ(pat.nominal_counts(), (std::vector<double>{5, 1, 1}));
  EXPECT_EQ(make_seasonality(pat).dim, 3);
}

TEST(Seasonality, HourOfWeekDims) {
  EXPECT_EQ(make_seasonality(SeasonalityPattern::hour_of_week()).dim, 168);
  EXPECT_EQ(make_seasonality(SeasonalityPattern::hour_of_week_grouped()).dim, 72);
}

TEST(Seasonality, NonContiguousGroupingRejected) {
  auto pat = SeasonalityPattern::day_of_week();
  pat.grouping = {0, 0, 0, 0, 0, 2, 2};
  EXPECT_THROW(make_seasonality(pat), ConfigError);
  pat.grouping = {0, 1};
  EXPECT_THROW(make_seasonality(pat), ConfigError);
}

TEST(Seasonality, SelectorIsOneHot) {
  std::mt19937 rng(4);
  for (const auto& pat : {SeasonalityPattern::day_of_week(), SeasonalityPattern::workday_weekend(),
                          SeasonalityPattern::hour_of_week_grouped(), SeasonalityPattern::day_of_week(24, 5)}) {
    const auto c = seasonal_coefs(pat, SeriesDesign::plain(500, static_cast<long>(rng() % 1000)));
    for (Eigen::Index t = 0; t < c.length(); ++t) {
      ASSERT_EQ(c.a.row(t).sum(), 1.0);
      ASSERT_EQ((c.a.row(t).array() == 1.0).count(), 1);
    }
  }
}

TEST(Seasonality, CycleBudgetSumsToOne) {
  for (const auto& pat : {SeasonalityPattern::day_of_week(), SeasonalityPattern::workday_weekend(),
                          SeasonalityPattern::hour_of_week_grouped(), SeasonalityPattern::day_of_week(24)}) {
    const long P = pat.period();
    for (long start : {0L, 3L, 17L}) {
      const auto c = seasonal_coefs(pat, SeriesDesign::plain(3 * P, start));
      // Any window of one full period covers every group exactly one cycle's worth.
      for (long w0 : {0L, P / 2, P}) {
        const Eigen::VectorXd sums = c.g.middleRows(w0, P).colwise().sum().transpose();
        for (Eigen::Index h = 0; h < sums.size(); ++h) ASSERT_NEAR(sums[h], 1.0, 1e-12) << pat.name;
      }
    }
  }
}

TEST(Seasonality, CalendarColumnUsesActualInteriorCounts) {
  // Day-of-week from a calendar column with a "leap" day: the second cycle
  // repeats day 3, so that day's factor is used twice within the cycle.
  auto pat = SeasonalityPattern::day_of_week();
  pat.calendar_column = 0;
  std::vector<int> col = {4, 5, 6, 0, 1, 2, 3, 3, 4, 5, 6, 0, 1, 2, 3, 4, 5, 6, 0, 1};
  SeriesDesign d = SeriesDesign::plain(static_cast<Eigen::Index>(col.size()));
  d.calendar = {col};
  const auto c = seasonal_coefs(pat, d);
  EXPECT_DOUBLE_EQ(c.g(6, 3), 0.5);
  EXPECT_DOUBLE_EQ(c.g(7, 3), 0.5);
  EXPECT_DOUBLE_EQ(c.g(3, 0), 1.0);
  // Budget of the interior cycle holds for every group.
  const Eigen::VectorXd sums = c.g.middleRows(3, 8).colwise().sum().transpose();
  for (Eigen::Index h = 0; h < 7; ++h) EXPECT_NEAR(sums[h], 1.0, 1e-15);
  // Partial edge cycles fall back to nominal counts.
  EXPECT_DOUBLE_EQ(c.g(0, 4), 1.0);
  EXPECT_DOUBLE_EQ(c.g(19, 1), 1.0);
}

TEST(Seasonality, CalendarValueOutOfRangeIsDataError) {
  auto pat = SeasonalityPattern::day_of_week();
  pat.calendar_column = 0;
  SeriesDesign d = SeriesDesign::plain(3);
  d.calendar = {{0, 9, 1}};
  EXPECT_THROW(seasonal_coefs(pat, d), DataError);
  d.calendar.clear();
  EXPECT_THROW(seasonal_coefs(pat, d), DataError);
}

TEST(Compose, Dimensions) {
  const auto a = compose({make_level(), make_level_trend()});
  EXPECT_EQ(a.dim(), 3);
  Eigen::Matrix3d F;
  F << 1, 0, 0, 0, 1, 1, 0, 0, 1;
  EXPECT_EQ(a.transition(), Eigen::MatrixXd(F));
  EXPECT_EQ(compose({make_level(), make_seasonality(SeasonalityPattern::day_of_week())}).dim(), 8);
  EXPECT_THROW(compose({}), ConfigError);
}

TEST(Compose, SingleComponentMatchesComponent) {
  const auto c = make_level_trend({}, {}, 0.8, 0.95);
  const auto m = compose({c});
  const auto co = m.materialize(params_with(m, {0.2, 0.07}), SeriesDesign::plain(5));
  EXPECT_EQ(co.F, c.transition);
  for (Eigen::Index t = 0; t < 5; ++t) {
    EXPECT_EQ(Eigen::VectorXd(co.a.row(t).transpose()), c.base_selector);
    EXPECT_EQ(co.g(t, 0), 0.2);
    EXPECT_EQ(co.g(t, 1), 0.07);
  }
}

TEST(Compose, StackedInnovations) {
  const auto m = compose({make_level(), make_seasonality(SeasonalityPattern::workday_weekend())});
  const auto co = m.materialize(params_with(m, {0.3, 0.6}), SeriesDesign::plain(7));
  for (Eigen::Index t = 0; t < 7; ++t) {
    EXPECT_EQ(co.g(t, 0), 0.3);
    const double shape = t < 5 ? 0.2 : 1.0;
    EXPECT_DOUBLE_EQ(co.g.row(t).tail(3).sum(), 0.6 * shape);
  }
}

TEST(Compose, BlockIndependence) {
  std::mt19937_64 rng(9);
  std::normal_distribution<double> nd;
  std::vector<IssmComponent> comps = {make_level(), make_level_trend({}, {}, 0.9, 0.8),
                                      make_seasonality(SeasonalityPattern::workday_weekend())};
  const auto m = compose(comps);
  for (int rep = 0; rep < 20; ++rep) {
    Eigen::VectorXd l(m.dim());
    for (auto& v : l) v = nd(rng);
    const Eigen::VectorXd joint = m.transition() * l;
    for (size_t c = 0; c < comps.size(); ++c) {
      const Eigen::VectorXd part = comps[c].transition * l.segment(m.dim_offset(c), comps[c].dim);
      EXPECT_EQ(Eigen::VectorXd(joint.segment(m.dim_offset(c), comps[c].dim)), part);
    }
  }
}

TEST(Compose, TransitionIsInvertible) {
  const auto m = compose({make_level(), make_level_trend({}, {}, 0.5, 0.3),
                          make_seasonality(SeasonalityPattern::hour_of_week_grouped())});
  const Eigen::MatrixXd I = m.transition() * m.transition_inverse();
  EXPECT_LT((I - Eigen::MatrixXd::Identity(m.dim(), m.dim())).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(Coefficients, AssemblyAtOneStep) {
  const auto m = compose({make_level()}, 1);
  ModelParameters p = params_with(m, {0.3});
  p.weights[0] = 2.0;
  Eigen::VectorXd x(1);
  x << 1.0;
  const auto s = m.coefficients_at(0, p, x);
  EXPECT_EQ(s.a, Eigen::VectorXd::Ones(1));
  EXPECT_EQ(s.g, Eigen::VectorXd::Constant(1, 0.3));
  EXPECT_EQ(s.F, Eigen::MatrixXd::Ones(1, 1));
  EXPECT_EQ(s.b, 2.0);
  p.weights.setZero();
  EXPECT_EQ(m.coefficients_at(5, p, x).b, 0.0);
  EXPECT_THROW(m.coefficients_at(0, p, Eigen::VectorXd::Ones(2)), DataError);
}

TEST(Coefficients, StaticLevelHasNoInnovation) {
  const auto m = compose({make_static_level()}, 2);
  EXPECT_EQ(m.num_strengths(), 0);
  SeriesDesign d = SeriesDesign::plain(4);
  d.features = Eigen::MatrixXd::Ones(4, 2);
  const auto c = m.materialize(m.default_parameters(), d);
  EXPECT_EQ(c.g.cwiseAbs().maxCoeff(), 0.0);
}
