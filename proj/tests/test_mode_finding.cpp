#include <numbers>
#include <random>

#include <gtest/gtest.h>

#include "dense_oracle.hpp"
#include "latentcast/mode_finding.hpp"

using namespace latentcast;

namespace {

Eigen::VectorXd stack(const LatentPath& s) {
  Eigen::VectorXd v(s.eps.size() + s.l0.size());
  v << s.eps, s.l0;
  return v;
}

LatentPath unstack(const Eigen::VectorXd& v, Eigen::Index T) { return {v.head(T - 1), v.tail(v.size() - (T - 1))}; }

double objective(const IssmCoefficients& c, const LikelihoodData& data, const LatentPath& s) {
  return inner_objective(c, data, s, project_path(c, s.eps, s.l0));
}

// Dense Newton step -(H)^{-1} grad, skipping rows whose curvature is below the floor.
Eigen::VectorXd dense_newton(const IssmCoefficients& c, const LikelihoodData& data, const LatentPath& s) {
  const auto dm = oracle::build(c);
  const Eigen::VectorXd sv = stack(s);
  const Eigen::VectorXd y = dm.M * sv + dm.b;
  Eigen::VectorXd grad = (sv - dm.mu).cwiseQuotient(dm.var);
  Eigen::MatrixXd H = dm.var.cwiseInverse().asDiagonal();
  for (Eigen::Index i = 0; i < c.length(); ++i) {
    if (!data.observed[static_cast<size_t>(i)]) continue;
    const auto p = data.lik.phi_derivs(data.z[i], y[i], data.rho[i]);
    if (p.d2 < kCurvatureFloor) continue;
    grad += dm.M.row(i).transpose() * p.d1;
    H += p.d2 * dm.M.row(i).transpose() * dm.M.row(i);
  }
  return -H.ldlt().solve(grad);
}

Eigen::VectorXd fd_gradient(const IssmCoefficients& c, const LikelihoodData& data, const LatentPath& s, double h) {
  const Eigen::Index T = c.length();
  Eigen::VectorXd v = stack(s), g(v.size());
  for (Eigen::Index k = 0; k < v.size(); ++k) {
    Eigen::VectorXd a = v, b = v;
    a[k] += h;
    b[k] -= h;
    g[k] = (objective(c, data, unstack(a, T)) - objective(c, data, unstack(b, T))) / (2.0 * h);
  }
  return g;
}

CompositeIssm level_dow() { return compose({make_level(), make_seasonality(SeasonalityPattern::day_of_week())}); }

Eigen::VectorXd poisson_counts(std::mt19937_64& rng, Eigen::Index T, double rate) {
  std::poisson_distribution<int> pd(rate);
  Eigen::VectorXd z(T);
  for (auto& v : z) v = pd(rng);
  return z;
}

// Level changes every 25 steps between zero-ish and bursts.
Eigen::VectorXd burst_series(std::mt19937_64& rng, Eigen::Index T) {
  std::poisson_distribution<int> burst(6.0), quiet(0.05);
  Eigen::VectorXd z(T);
  for (Eigen::Index i = 0; i < T; ++i) z[i] = (i / 25) % 3 == 1 ? burst(rng) : quiet(rng);
  return z;
}

}  // namespace

TEST(Objective, ClosedFormAtZero) {
  const auto m = compose({make_level()});
  const Eigen::Index T = 9;
  const auto c = m.materialize(m.default_parameters(0.5, 1.0), SeriesDesign::plain(T));
  const auto data = LikelihoodData::fully_observed(LikelihoodPotential::gaussian(1.0), Eigen::VectorXd::Zero(T));
  const LatentPath s{Eigen::VectorXd::Zero(T - 1), Eigen::VectorXd::Zero(1)};
  EXPECT_NEAR(objective(c, data, s), T * std::log(2.0 * std::numbers::pi), 1e-12);
}

TEST(Objective, MissingDayValueIsIgnored) {
  std::mt19937_64 rng(1);
  const auto m = level_dow();
  const auto c = m.materialize(m.default_parameters(0.3, 1.0), SeriesDesign::plain(20));
  auto data = LikelihoodData::fully_observed(LikelihoodPotential::poisson(), poisson_counts(rng, 20, 2.0));
  data.observed[7] = false;
  const LatentPath s = initial_point(c, 0.4);
  data.z[7] = 0.0;
  const double f0 = objective(c, data, s);
  data.z[7] = 999.0;
  EXPECT_EQ(objective(c, data, s), f0);
  EXPECT_EQ(find_mode(c, data).F, [&] {
    data.z[7] = 0.0;
    return find_mode(c, data).F;
  }());
}

TEST(Objective, NonFiniteTermNamesStep) {
  const auto m = compose({make_level()});
  const auto c = m.materialize(m.default_parameters(0.3, 1.0), SeriesDesign::plain(5));
  const auto data =
      LikelihoodData::fully_observed(LikelihoodPotential::poisson(TransferFunction::exponential()), Eigen::VectorXd::Ones(5));
  LatentPath s = initial_point(c, 0.0);
  s.eps[2] = 1e4;
  try {
    objective(c, data, s);
    FAIL() << "expected NumericalError";
  } catch (const NumericalError& e) {
    EXPECT_EQ(e.step(), 3);
  }
}

TEST(Newton, GaussianIsExactInOneStep) {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> nd;
  const auto m = level_dow();
  const Eigen::Index T = 40;
  const auto c = m.materialize(m.default_parameters(0.3, 1.0), SeriesDesign::plain(T));
  Eigen::VectorXd z(T);
  for (auto& v : z) v = nd(rng);
  const auto data = LikelihoodData::fully_observed(LikelihoodPotential::gaussian(0.5), z);
  const LatentPath s0 = initial_point(c, 0.0);
  const auto y0 = project_path(c, s0.eps, s0.l0);
  const LatentPath d = newton_direction(c, data, s0, y0);
  const LatentPath s1 = {s0.eps + d.eps, s0.l0 + d.l0};
  const LatentPath d2 = newton_direction(c, data, s1, project_path(c, s1.eps, s1.l0));
  EXPECT_LT(stack(d2).cwiseAbs().maxCoeff(), 1e-10);

  const Eigen::VectorXd Md = project_path(c, d.eps, d.l0, false);
  const double F0 = inner_objective(c, data, s0, y0);
  const auto ls = line_search(c, data, s0, y0, F0, d, Md, directional_derivative(c, data, s0, y0, d, Md));
  EXPECT_TRUE(ls.ok);
  EXPECT_EQ(ls.alpha, 1.0);

  const auto r = find_mode(c, data);
  EXPECT_TRUE(r.converged);
  EXPECT_EQ(r.iterations, 1);
}

TEST(Newton, MatchesDenseHessianSolve) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> ud(-0.3, 0.3);
  double worst = 0.0;
  for (int rep = 0; rep < 20; ++rep) {
    const Eigen::Index T = 5 + rep % 11;
    const auto m = rep % 2 ? level_dow() : compose({make_level_trend({}, {}, 0.9)});
    const auto c = m.materialize(m.default_parameters(0.3, 1.0), SeriesDesign::plain(T));
    auto data = LikelihoodData::fully_observed(LikelihoodPotential::poisson(), poisson_counts(rng, T, 3.0));
    data.observed[static_cast<size_t>(rep % T)] = false;
    data.rho[static_cast<Eigen::Index>((rep + 1) % T)] = 0.6;
    LatentPath s = initial_point(c, 0.5);
    for (auto& v : s.eps) v += ud(rng);
    for (auto& v : s.l0) v += ud(rng);
    const LatentPath d = newton_direction(c, data, s, project_path(c, s.eps, s.l0));
    worst = std::max(worst, oracle::max_rel_err(stack(d), dense_newton(c, data, s)));
  }
  EXPECT_LT(worst, 1e-6);
}

TEST(Newton, FlooredCurvatureRowIsDropped) {
  std::mt19937_64 rng(4);
  const Eigen::Index T = 12;
  const auto m = compose({make_level()});
  const auto c = m.materialize(m.default_parameters(0.3, 1.0), SeriesDesign::plain(T));
  Eigen::VectorXd z = poisson_counts(rng, T, 20.0);
  z[4] = 0.0;
  z[9] = 0.0;
  const auto data = LikelihoodData::fully_observed(LikelihoodPotential::poisson(TransferFunction::logistic()), z);
  const LatentPath s = initial_point(c, 30.0);
  const auto y = project_path(c, s.eps, s.l0);
  ASSERT_LT(data.lik.phi_derivs(0.0, y[4]).d2, kCurvatureFloor);
  const LatentPath d = newton_direction(c, data, s, y);
  EXPECT_LT(oracle::max_rel_err(stack(d), dense_newton(c, data, s)), 1e-6);
}

TEST(LineSearch, DirectionalDerivativeMatchesFiniteDifference) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> ud(-0.5, 0.5);
  for (int rep = 0; rep < 10; ++rep) {
    const Eigen::Index T = 30;
    const auto m = level_dow();
    const auto c = m.materialize(m.default_parameters(0.2, 1.0), SeriesDesign::plain(T));
    const auto data = LikelihoodData::fully_observed(LikelihoodPotential::poisson(), poisson_counts(rng, T, 2.0));
    LatentPath s = initial_point(c, 0.3);
    for (auto& v : s.eps) v += ud(rng);
    const auto y = project_path(c, s.eps, s.l0);
    const LatentPath d = newton_direction(c, data, s, y);
    const Eigen::VectorXd Md = project_path(c, d.eps, d.l0, false);
    const double analytic = directional_derivative(c, data, s, y, d, Md);
    const double h = 1e-5;
    auto F = [&](double a) { return objective(c, data, {s.eps + a * d.eps, s.l0 + a * d.l0}); };
    const double fd = (F(h) - F(-h)) / (2.0 * h);
    EXPECT_LT(std::abs(analytic - fd) / std::max(1.0, std::abs(fd)), 1e-6);
    EXPECT_LT(analytic, 0.0);
  }
}

TEST(LineSearch, OvershootIsDamped) {
  std::mt19937_64 rng(6);
  const Eigen::Index T = 30;
  const auto m = level_dow();
  const auto c = m.materialize(m.default_parameters(0.2, 1.0), SeriesDesign::plain(T));
  const auto data = LikelihoodData::fully_observed(LikelihoodPotential::poisson(), burst_series(rng, T));
  const LatentPath s = initial_point(c, 0.0);
  const auto y = project_path(c, s.eps, s.l0);
  LatentPath d = newton_direction(c, data, s, y);
  d.eps *= 10.0;
  d.l0 *= 10.0;
  const Eigen::VectorXd Md = project_path(c, d.eps, d.l0, false);
  const double F0 = inner_objective(c, data, s, y);
  const auto ls = line_search(c, data, s, y, F0, d, Md, directional_derivative(c, data, s, y, d, Md));
  ASSERT_TRUE(ls.ok);
  EXPECT_LT(ls.alpha, 1.0);
  EXPECT_LT(ls.F, F0);
}

TEST(InitialPoint, ImageIsConstant) {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> nd;
  const std::vector<CompositeIssm> models = {
      compose({make_level()}), level_dow(),
      compose({make_level_trend({}, {}, 0.8, 0.9), make_seasonality(SeasonalityPattern::workday_weekend())}, 2)};
  for (const auto& m : models) {
    const Eigen::Index T = 60;
    ModelParameters p = m.default_parameters(0.25, 1.0);
    for (auto& v : p.weights) v = nd(rng);
    for (auto& v : p.prior_mean) v = nd(rng);
    SeriesDesign d = SeriesDesign::plain(T, 3);
    d.features.resize(T, m.feature_dim());
    for (Eigen::Index i = 0; i < d.features.size(); ++i) d.features.data()[i] = nd(rng);
    const auto c = m.materialize(p, d);
    for (double ybar : {-2.0, 0.0, 1.7}) {
      const LatentPath s = initial_point(c, ybar);
      const Eigen::VectorXd y = project_path(c, s.eps, s.l0);
      EXPECT_LT((y.array() - ybar).abs().maxCoeff(), 1e-9);
    }
  }
}

TEST(InitialPoint, PoissonBaselineInvertsTransfer) {
  for (auto tf : {TransferFunction::twice_logistic(), TransferFunction::logistic(), TransferFunction::exponential()}) {
    Eigen::VectorXd z(8);
    z << 0, 4, 8, 2, 6, 4, 3, 5;  // mean 4
    const double ybar = baseline_level(LikelihoodData::fully_observed(LikelihoodPotential::poisson(tf), z));
    // Bisection oracle on the monotone rate.
    double lo = -50.0, hi = 50.0;
    for (int k = 0; k < 200; ++k) {
      const double mid = 0.5 * (lo + hi);
      (tf.rate(mid) < 4.0 ? lo : hi) = mid;
    }
    EXPECT_NEAR(ybar, 0.5 * (lo + hi), 1e-9);
  }
}

TEST(InitialPoint, AllZeroTargetsUseDefault) {
  const auto data = LikelihoodData::fully_observed(LikelihoodPotential::poisson(), Eigen::VectorXd::Zero(20));
  const double ybar = baseline_level(data);
  EXPECT_TRUE(std::isfinite(ybar));
  const auto m = compose({make_level()});
  const auto r = find_mode(m.materialize(m.default_parameters(0.1, 1.0), SeriesDesign::plain(20)), data);
  EXPECT_TRUE(r.converged);
  EXPECT_TRUE(r.y_hat.allFinite());
}

TEST(FindMode, GradientVanishesAtMode) {
  std::mt19937_64 rng(8);
  for (int rep = 0; rep < 6; ++rep) {
    const Eigen::Index T = 10 + 2 * rep;
    const auto m = rep % 2 ? level_dow() : compose({make_level_trend()});
    const auto c = m.materialize(m.default_parameters(0.3, 1.0), SeriesDesign::plain(T));
    auto data = LikelihoodData::fully_observed(LikelihoodPotential::poisson(), burst_series(rng, T));
    data.observed[2] = false;
    const auto r = find_mode(c, data);
    ASSERT_TRUE(r.converged);
    EXPECT_LT(fd_gradient(c, data, r.s_hat, 1e-5).cwiseAbs().maxCoeff(), 1e-7) << "rep " << rep;
  }
}

TEST(FindMode, PerturbationsDoNotImprove) {
  std::mt19937_64 rng(9);
  std::normal_distribution<double> nd(0.0, 0.05);
  const Eigen::Index T = 40;
  const auto m = level_dow();
  const auto c = m.materialize(m.default_parameters(0.2, 1.0), SeriesDesign::plain(T));
  const auto data = LikelihoodData::fully_observed(LikelihoodPotential::poisson(), burst_series(rng, T));
  const auto r = find_mode(c, data);
  for (int k = 0; k < 100; ++k) {
    LatentPath s = r.s_hat;
    for (auto& v : s.eps) v += nd(rng);
    for (auto& v : s.l0) v += nd(rng);
    ASSERT_GE(objective(c, data, s), r.F);
  }
}

TEST(FindMode, MonotoneDescent) {
  std::mt19937_64 rng(10);
  for (int rep = 0; rep < 20; ++rep) {
    const Eigen::Index T = 100;
    const auto m = level_dow();
    const auto c = m.materialize(m.default_parameters(0.1, 1.0), SeriesDesign::plain(T));
    const auto r = find_mode(c, LikelihoodData::fully_observed(LikelihoodPotential::poisson(), burst_series(rng, T)));
    for (size_t i = 1; i < r.F_trace.size(); ++i) ASSERT_LE(r.F_trace[i], r.F_trace[i - 1]);
    // The reported F is re-evaluated on a fresh projection of s; equal up to rounding.
    EXPECT_LE(r.F, r.F_trace.back() + 1e-12 * std::abs(r.F_trace.back()));
  }
}

TEST(FindMode, RestartsReachSameMode) {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> nd;
  for (const auto& lik : {LikelihoodPotential::poisson(), LikelihoodPotential::bernoulli()}) {
    const Eigen::Index T = 50;
    const auto m = level_dow();
    const auto c = m.materialize(m.default_parameters(0.2, 1.0), SeriesDesign::plain(T));
    Eigen::VectorXd z = burst_series(rng, T);
    if (lik.kind == LikelihoodKind::BernoulliLogistic)
      for (auto& v : z) v = v > 0.0 ? 1.0 : -1.0;
    const auto data = LikelihoodData::fully_observed(lik, z);
    const auto ref = find_mode(c, data);
    // Different starting levels through the public entry point.
    for (double ybar : {-3.0, -1.0, 1.0, 2.5, 4.0}) {
      ModeOptions opt;
      opt.y_bar = ybar;
      const auto r = find_mode(c, data, opt);
      EXPECT_LT(oracle::max_rel_err(stack(r.s_hat), stack(ref.s_hat)), 1e-6);
    }
    // Random starting paths, driven by the same Newton + line search steps.
    for (int k = 0; k < 5; ++k) {
      LatentPath s = initial_point(c, 0.0);
      for (auto& v : s.eps) v = nd(rng);
      for (auto& v : s.l0) v = nd(rng);
      Eigen::VectorXd y = project_path(c, s.eps, s.l0);
      double F = inner_objective(c, data, s, y);
      for (int it = 0; it < 100; ++it) {
        const LatentPath d = newton_direction(c, data, s, y);
        if (stack(d).cwiseAbs().maxCoeff() < 1e-10) break;
        const Eigen::VectorXd Md = project_path(c, d.eps, d.l0, false);
        const auto ls = line_search(c, data, s, y, F, d, Md, directional_derivative(c, data, s, y, d, Md));
        if (!ls.ok) break;
        s = {s.eps + ls.alpha * d.eps, s.l0 + ls.alpha * d.l0};
        y = project_path(c, s.eps, s.l0);
        F = ls.F;
      }
      EXPECT_LT(oracle::max_rel_err(stack(s), stack(ref.s_hat)), 1e-6);
    }
  }
}

TEST(FindMode, BurstSeriesConverge) {
  const auto m = level_dow();
  const Eigen::Index T = 300;
  const auto c = m.materialize(m.default_parameters(0.1, 1.0), SeriesDesign::plain(T));
  int ok = 0;
  for (int seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(100 + seed);
    const auto r = find_mode(c, LikelihoodData::fully_observed(LikelihoodPotential::poisson(), burst_series(rng, T)));
    ok += r.converged && r.iterations <= 30;
  }
  EXPECT_EQ(ok, 20);
}

TEST(FindMode, NoObservationsRejected) {
  const auto m = compose({make_level()});
  const auto c = m.materialize(m.default_parameters(), SeriesDesign::plain(5));
  auto data = LikelihoodData::fully_observed(LikelihoodPotential::poisson(), Eigen::VectorXd::Zero(5));
  data.observed.assign(5, false);
  EXPECT_THROW(find_mode(c, data), DataError);
}
