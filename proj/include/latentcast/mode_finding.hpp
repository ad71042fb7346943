#pragma once

// Newton-Raphson search for the mode of P(s | z) over the latent path
// s = [eps; l0]. Each Newton step is the posterior mean of the model whose
// potentials are replaced by their Gaussian fits, i.e. one smoothing pass.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "latentcast/errors.hpp"
#include "latentcast/gaussian_inference.hpp"
#include "latentcast/issm.hpp"
#include "latentcast/likelihood.hpp"

namespace latentcast {

/// Targets of one likelihood (one stage) over the series. `rho` is the
/// availability weight used on observed positions.
struct LikelihoodData {
  LikelihoodPotential lik;
  Eigen::VectorXd z;
  Eigen::VectorXd rho;
  std::vector<bool> observed;

  Eigen::Index length() const { return z.size(); }

  int num_observed() const {
    int n = 0;
    for (bool o : observed) n += o ? 1 : 0;
    return n;
  }

  static LikelihoodData fully_observed(LikelihoodPotential lik, Eigen::VectorXd z) {
    LikelihoodData d;
    d.lik = lik;
    d.rho = Eigen::VectorXd::Ones(z.size());
    d.observed.assign(static_cast<size_t>(z.size()), true);
    d.z = std::move(z);
    return d;
  }

  void validate(Eigen::Index T) const {
    if (z.size() != T || rho.size() != T || static_cast<Eigen::Index>(observed.size()) != T)
      throw DataError("likelihood data does not match the series length");
    for (Eigen::Index i = 0; i < T; ++i) {
      if (!observed[static_cast<size_t>(i)]) continue;
      if (!(rho[i] > 0.0 && rho[i] <= 1.0)) throw DataError("availability weight outside (0, 1] (t=" + std::to_string(i) + ")");
      try {
        lik.validate_target(z[i]);
      } catch (const DataError& e) {
        throw DataError(std::string(e.what()) + " (t=" + std::to_string(i) + ")");
      }
    }
  }
};

struct LatentPath {
  Eigen::VectorXd eps;
  Eigen::VectorXd l0;
};

struct ModeOptions {
  double rel_tol = 1e-9;
  double step_tol = 1e-8;
  int max_iterations = 50;
  double armijo = 1e-4;
  double shrink = 0.5;
  int max_halvings = 30;
  bool polish = true;
  std::optional<double> y_bar;  // overrides the per-series starting level
};

struct ModeResult {
  LatentPath s_hat;
  Eigen::VectorXd y_hat;
  double F = 0.0;
  int iterations = 0;
  bool converged = false;
  GaussianObservations gaussianized;  // Gaussian fits at y_hat
  std::vector<double> F_trace;
};

/// F(s) = sum_O phi_t(y_t) - log P(s), constants included.
inline double inner_objective(const IssmCoefficients& c, const LikelihoodData& data, const LatentPath& s,
                              const Eigen::VectorXd& y) {
  const double log2pi = std::log(2.0 * std::numbers::pi);
  double F = 0.5 * s.eps.squaredNorm() + 0.5 * static_cast<double>(s.eps.size()) * log2pi;
  for (Eigen::Index j = 0; j < c.dim(); ++j) {
    const double r = (s.l0[j] - c.prior_mean[j]) / c.prior_std[j];
    F += 0.5 * log2pi + std::log(c.prior_std[j]) + 0.5 * r * r;
  }
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    if (!data.observed[static_cast<size_t>(i)]) continue;
    const double phi = data.lik.phi_derivs(data.z[i], y[i], data.rho[i]).phi;
    if (!std::isfinite(phi)) throw NumericalError("non-finite likelihood term", static_cast<long>(i));
    F += phi;
  }
  return F;
}

inline GaussianObservations gaussianize_all(const LikelihoodData& data, const Eigen::VectorXd& y) {
  const Eigen::Index T = y.size();
  GaussianObservations g;
  g.value = Eigen::VectorXd::Zero(T);
  g.variance = Eigen::VectorXd::Ones(T);
  g.observed.assign(static_cast<size_t>(T), false);
  for (Eigen::Index i = 0; i < T; ++i) {
    if (!data.observed[static_cast<size_t>(i)]) continue;
    const GaussianizedObservation o = data.lik.gaussianize(data.z[i], y[i], data.rho[i]);
    if (o.missing) continue;
    g.value[i] = o.value;
    g.variance[i] = o.variance;
    g.observed[static_cast<size_t>(i)] = true;
  }
  return g;
}

/// Constant y that maximizes the likelihood of the observed targets, or a
/// per-likelihood default when that estimate is degenerate.
inline double baseline_level(const LikelihoodData& data) {
  double sw = 0.0, sz = 0.0;
  for (Eigen::Index i = 0; i < data.length(); ++i) {
    if (!data.observed[static_cast<size_t>(i)]) continue;
    sw += data.rho[i];
    sz += data.rho[i] * data.z[i];
  }
  switch (data.lik.kind) {
    case LikelihoodKind::Gaussian:
      return sw > 0.0 ? sz / sw : 0.0;
    case LikelihoodKind::BernoulliLogistic: {
      if (sw <= 0.0) return 0.0;
      const double p = 0.5 * (1.0 + sz / sw);
      if (p <= 0.0 || p >= 1.0) return 0.0;
      return detail::logit(p);
    }
    case LikelihoodKind::Poisson: {
      const double mean = sw > 0.0 ? sz / sw : 0.0;
      return data.lik.transfer.inverse(mean > 0.0 ? mean : 1.0);
    }
  }
  return 0.0;
}

/// Latent path whose image is the constant y_bar: l0 puts (y_bar - b_0) on the
/// largest selector entry, and each eps cancels the drift of the next step.
inline LatentPath initial_point(const IssmCoefficients& c, double y_bar) {
  const Eigen::Index T = c.length();
  const Eigen::Index d = c.dim();
  LatentPath s;
  s.eps = Eigen::VectorXd::Zero(T - 1);
  s.l0 = Eigen::VectorXd::Zero(d);
  Eigen::Index j = 0;
  const double a0 = c.a.row(0).cwiseAbs().maxCoeff(&j);
  if (a0 < 1e-8) throw ConfigError("selector at the first step is zero; add a level component");
  s.l0[j] = (y_bar - c.b[0]) / c.a(0, j);
  Eigen::VectorXd l = s.l0;
  for (Eigen::Index i = 0; i + 1 < T; ++i) {
    const Eigen::VectorXd Fl = c.F * l;
    const double ag = c.a.row(i + 1).dot(c.g.row(i));
    if (c.g.row(i).squaredNorm() == 0.0) {
      s.eps[i] = 0.0;
    } else {
      if (std::abs(ag) < 1e-10)
        throw ConfigError("innovation does not reach the next observation (t=" + std::to_string(i) +
                          "); add a level component");
      s.eps[i] = (y_bar - c.b[i + 1] - c.a.row(i + 1).dot(Fl)) / ag;
    }
    l = Fl + c.g.row(i).transpose() * s.eps[i];
  }
  return s;
}

namespace detail {

inline LatentPath add_scaled(const LatentPath& s, const LatentPath& d, double alpha) {
  return {s.eps + alpha * d.eps, s.l0 + alpha * d.l0};
}

inline double sup_norm(const LatentPath& d) {
  double m = d.l0.size() ? d.l0.cwiseAbs().maxCoeff() : 0.0;
  if (d.eps.size()) m = std::max(m, d.eps.cwiseAbs().maxCoeff());
  return m;
}

}  // namespace detail

/// Newton direction at s: posterior mean of the Gaussian-fitted model minus s.
inline LatentPath newton_direction(const IssmCoefficients& c, const LikelihoodData& data, const LatentPath& s,
                                   const Eigen::VectorXd& y) {
  const GaussianObservations g = gaussianize_all(data, y);
  const SmoothingResult r = smooth(c, g);
  return {r.eps_mean - s.eps, r.l0_mean - s.l0};
}

/// Directional derivative of F at s along d, given y = y(s) and Md = M d.
inline double directional_derivative(const IssmCoefficients& c, const LikelihoodData& data, const LatentPath& s,
                                     const Eigen::VectorXd& y, const LatentPath& d, const Eigen::VectorXd& Md) {
  double f = s.eps.dot(d.eps);
  for (Eigen::Index j = 0; j < c.dim(); ++j)
    f += d.l0[j] * (s.l0[j] - c.prior_mean[j]) / (c.prior_std[j] * c.prior_std[j]);
  for (Eigen::Index i = 0; i < y.size(); ++i)
    if (data.observed[static_cast<size_t>(i)]) f += data.lik.phi_derivs(data.z[i], y[i], data.rho[i]).d1 * Md[i];
  return f;
}

struct LineSearchResult {
  double alpha = 0.0;
  double F = 0.0;
  bool ok = false;
};

/// Backtracking from alpha = 1 until F(s + alpha d) <= F(s) + c alpha F'(0).
/// Trial points reuse y(s) + alpha M d, so each trial is one likelihood sweep.
inline LineSearchResult line_search(const IssmCoefficients& c, const LikelihoodData& data, const LatentPath& s,
                                    const Eigen::VectorXd& y, double F0, const LatentPath& d,
                                    const Eigen::VectorXd& Md, double dF0, const ModeOptions& opt = {}) {
  LineSearchResult res;
  double alpha = 1.0;
  for (int k = 0; k <= opt.max_halvings; ++k) {
    const LatentPath trial = detail::add_scaled(s, d, alpha);
    const Eigen::VectorXd yt = y + alpha * Md;
    double Ft;
    try {
      Ft = inner_objective(c, data, trial, yt);
    } catch (const NumericalError&) {
      Ft = std::numeric_limits<double>::infinity();
    }
    if (std::isfinite(Ft) && Ft <= F0 + opt.armijo * alpha * dF0) {
      res.alpha = alpha;
      res.F = Ft;
      res.ok = true;
      return res;
    }
    alpha *= opt.shrink;
  }
  return res;
}

inline ModeResult find_mode(const IssmCoefficients& c, const LikelihoodData& data, const ModeOptions& opt = {}) {
  const Eigen::Index T = c.length();
  data.validate(T);
  if (data.num_observed() == 0) throw DataError("mode finding needs at least one observed day");
  const double y_bar = opt.y_bar ? *opt.y_bar : baseline_level(data);

  ModeResult res;
  LatentPath s = initial_point(c, y_bar);
  Eigen::VectorXd y = project_path(c, s.eps, s.l0);
  double F = inner_objective(c, data, s, y);
  res.F_trace.push_back(F);

  auto try_polish = [&]() {
    if (!opt.polish) return;
    const LatentPath d = newton_direction(c, data, s, y);
    const LatentPath s2 = detail::add_scaled(s, d, 1.0);
    const Eigen::VectorXd y2 = project_path(c, s2.eps, s2.l0);
    const double F2 = inner_objective(c, data, s2, y2);
    if (F2 <= F + 1e-12 * std::max(1.0, std::abs(F))) {
      s = s2;
      y = y2;
      F = std::min(F, F2);
    }
  };

  for (;;) {
    const LatentPath d = newton_direction(c, data, s, y);
    if (!d.eps.allFinite() || !d.l0.allFinite()) throw ModeFindingError("non-finite Newton direction");
    if (detail::sup_norm(d) < opt.step_tol) {
      const LatentPath s2 = detail::add_scaled(s, d, 1.0);
      const Eigen::VectorXd y2 = project_path(c, s2.eps, s2.l0);
      const double F2 = inner_objective(c, data, s2, y2);
      if (F2 <= F + 1e-12 * std::max(1.0, std::abs(F))) {
        s = s2;
        y = y2;
        F = std::min(F, F2);
      }
      res.converged = true;
      break;
    }
    if (res.iterations >= opt.max_iterations) break;
    const Eigen::VectorXd Md = project_path(c, d.eps, d.l0, false);
    const double dF0 = directional_derivative(c, data, s, y, d, Md);
    if (!(dF0 < 0.0)) {
      if (std::abs(dF0) <= 1e-10 * std::max(1.0, std::abs(F))) {
        res.converged = true;
        break;
      }
      throw ModeFindingError("Newton direction is not a descent direction");
    }
    const LineSearchResult ls = line_search(c, data, s, y, F, d, Md, dF0, opt);
    if (!ls.ok) {
      // No decrease is possible only when F is already flat to rounding.
      if (std::abs(dF0) <= 1e-10 * std::max(1.0, std::abs(F))) {
        res.converged = true;
        break;
      }
      throw ModeFindingError("line search failed to decrease the objective (F=" + std::to_string(F) + ")");
    }
    s = detail::add_scaled(s, d, ls.alpha);
    y = y + ls.alpha * Md;
    ++res.iterations;
    const double Fprev = F;
    F = ls.F;
    res.F_trace.push_back(F);
    if (F > Fprev) throw ModeFindingError("objective increased during mode finding");
    if (std::abs(Fprev - F) / std::max(1.0, std::abs(F)) < opt.rel_tol) {
      y = project_path(c, s.eps, s.l0);
      try_polish();
      res.converged = true;
      break;
    }
  }
  y = project_path(c, s.eps, s.l0);
  res.s_hat = s;
  res.y_hat = y;
  res.F = inner_objective(c, data, s, y);
  res.gaussianized = gaussianize_all(data, y);
  return res;
}

}  // namespace latentcast
