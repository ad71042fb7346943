#pragma once

// Maximum-likelihood training with the Laplace criterion
//   psi(theta) = sum_O gamma_t - log P(z~ | theta),
// where z~, sigma^2 are the Gaussian fits at the mode y^ and
// gamma_t = phi_t(y^_t) - phi~_t(y^_t). The gradient follows psi's three
// dependence paths: directly through the Gaussian model (a), through the
// Gaussian fits (b) and through the mode (c); (b) and (c) together cost one
// extra smoothing pass.

#include <chrono>
#include <cmath>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "latentcast/errors.hpp"
#include "latentcast/gaussian_inference.hpp"
#include "latentcast/issm.hpp"
#include "latentcast/lbfgs.hpp"
#include "latentcast/likelihood.hpp"
#include "latentcast/mode_finding.hpp"
#include "latentcast/parameters.hpp"

namespace latentcast {

struct PsiEvaluation {
  double psi = 0.0;
  Eigen::VectorXd grad;  // raw coordinates; empty unless requested
  ModeResult mode;
  SmoothingResult smoothing;
  Eigen::VectorXd gamma;  // per step, zero where unobserved
};

/// psi and its gradient for one series and one likelihood.
class LaplaceObjective {
 public:
  LaplaceObjective(const CompositeIssm& issm, const SeriesDesign& design, const LikelihoodData& data,
                   ModeOptions mode_options = {}, double fd_step = 1e-6)
      : issm_(issm), design_(design), data_(data), codec_(issm, data.lik), mode_opt_(mode_options), h_(fd_step) {
    if (design.length != data.length()) throw DataError("design and data lengths differ");
    data_.validate(design.length);
  }

  const ParameterCodec& codec() const { return codec_; }

  PsiEvaluation evaluate(const Eigen::VectorXd& raw, bool with_gradient) const {
    const ModelParameters params = codec_.decode(raw);
    LikelihoodData data = data_;
    data.lik = codec_.likelihood_for(data_.lik, params);
    const IssmCoefficients coefs = issm_.materialize(params, design_);

    PsiEvaluation ev;
    ev.mode = find_mode(coefs, data, mode_opt_);
    const GaussianObservations& obs = ev.mode.gaussianized;
    SquareRootSmoother smoother(coefs);
    ev.smoothing = smoother.smooth(smoother.forward(obs));
    const SmoothingResult& sm = ev.smoothing;

    const Eigen::Index T = coefs.length();
    const Eigen::VectorXd& yh = ev.mode.y_hat;
    std::vector<PhiDerivs> ph(static_cast<size_t>(T));
    ev.gamma = Eigen::VectorXd::Zero(T);
    double psi = -sm.log_lik;
    for (Eigen::Index i = 0; i < T; ++i) {
      if (!data.observed[static_cast<size_t>(i)]) continue;
      ph[static_cast<size_t>(i)] = data.lik.phi_derivs(data.z[i], yh[i], data.rho[i]);
      const double phi = ph[static_cast<size_t>(i)].phi;
      double g = phi;
      if (obs.is_observed(i)) {
        const double r = obs.value[i] - yh[i];
        g = phi - (0.5 * std::log(2.0 * std::numbers::pi * obs.variance[i]) + 0.5 * r * r / obs.variance[i]);
      }
      ev.gamma[i] = g;
      psi += g;
    }
    ev.psi = psi;
    if (!std::isfinite(psi)) throw NumericalError("non-finite Laplace criterion");
    if (!with_gradient) return ev;

    const ParameterLayout& L = codec_.layout();
    Eigen::VectorXd gc = Eigen::VectorXd::Zero(L.size());

    // Sensitivity of psi to y^ at fixed theta, and the mode-response vector xi.
    Eigen::VectorXd u = Eigen::VectorXd::Zero(T);
    GaussianObservations xi_obs = obs;
    for (Eigen::Index i = 0; i < T; ++i) {
      if (!obs.is_observed(i)) continue;
      const double dev = yh[i] - sm.y_mean[i];
      u[i] = 0.5 * ph[static_cast<size_t>(i)].d3 * (dev * dev + sm.y_var[i]);
      xi_obs.value[i] = obs.variance[i] * u[i];
    }
    IssmCoefficients zero_mean = coefs;
    zero_mean.prior_mean.setZero();
    zero_mean.b.setZero();
    const SmoothingResult xi = smooth(zero_mean, xi_obs);
    const Eigen::VectorXd Mxi = project_path(coefs, xi.eps_mean, xi.l0_mean, false);

    // Per-step weight of a direct change in y^ (b and c channels combined).
    Eigen::VectorXd dy_weight = Eigen::VectorXd::Zero(T);
    for (Eigen::Index i = 0; i < T; ++i) {
      if (!data.observed[static_cast<size_t>(i)]) continue;
      dy_weight[i] = u[i] - ph[static_cast<size_t>(i)].d2 * Mxi[i];
    }

    // Weights: b_t = x_t' w.
    for (int j = 0; j < L.p; ++j) {
      double acc = 0.0;
      for (Eigen::Index i = 0; i < T; ++i) {
        if (!data.observed[static_cast<size_t>(i)]) continue;
        double term = dy_weight[i];
        if (obs.is_observed(i)) term += (sm.y_mean[i] - obs.value[i]) / obs.variance[i];
        acc += coefs.x(i, j) * term;
      }
      gc[L.weights() + j] = acc;
    }

    // Innovation strengths: sensitivities of y^ and of M xi.
    for (int k = 0; k < L.K; ++k) {
      const Eigen::MatrixXd& shape = coefs.g_shapes[static_cast<size_t>(k)];
      Eigen::VectorXd dl_hat = Eigen::VectorXd::Zero(coefs.dim());
      Eigen::VectorXd dl_xi = Eigen::VectorXd::Zero(coefs.dim());
      double acc = 0.0;
      for (Eigen::Index i = 0; i < T; ++i) {
        if (data.observed[static_cast<size_t>(i)]) {
          const double dyh = coefs.a.row(i).dot(dl_hat);
          const double dmxi = coefs.a.row(i).dot(dl_xi);
          acc += dyh * dy_weight[i] - ph[static_cast<size_t>(i)].d1 * dmxi;
        }
        if (i + 1 < T) {
          dl_hat = coefs.F * dl_hat + shape.row(i).transpose() * ev.mode.s_hat.eps[i];
          dl_xi = coefs.F * dl_xi + shape.row(i).transpose() * xi.eps_mean[i];
        }
      }
      gc[L.strengths() + k] = acc;
    }

    // Prior over l0.
    const Eigen::VectorXd v = coefs.prior_std.array().square().matrix();
    const std::vector<int> slot = issm_.std_slot_map();
    for (int j = 0; j < L.d; ++j) {
      const double mu = coefs.prior_mean[j];
      const double El = sm.l0_mean[j];
      gc[L.prior_means() + j] = (mu - El) / v[j] + xi.l0_mean[j] / v[j];
      const double dv = 0.5 * (1.0 / v[j] - ((El - mu) * (El - mu) + sm.l0_cov(j, j)) / (v[j] * v[j])) +
                        xi.l0_mean[j] * (ev.mode.s_hat.l0[j] - mu) / (v[j] * v[j]);
      gc[L.prior_stds() + slot[static_cast<size_t>(j)]] += 2.0 * coefs.prior_std[j] * dv;
    }

    // Likelihood variance.
    if (L.has_variance) {
      double acc = 0.0;
      for (Eigen::Index i = 0; i < T; ++i) {
        if (!data.observed[static_cast<size_t>(i)]) continue;
        const PhiDerivs dv = data.lik.variance_derivs(data.z[i], yh[i], data.rho[i]);
        if (obs.is_observed(i)) {
          const double e1 = sm.y_mean[i] - yh[i];
          const double e2 = 0.5 * (e1 * e1 + sm.y_var[i]);
          acc += dv.phi + e1 * dv.d1 + e2 * dv.d2;
        } else {
          acc += dv.phi;
        }
        acc -= Mxi[i] * dv.d1;
      }
      gc[L.variance()] = acc;
    }

    ev.grad = gc.cwiseProduct(codec_.jacobian(raw));

    // Direct dependence of log P(z~) on the strengths, by central differences
    // in raw coordinates with the Gaussian fits held fixed.
    for (int k = 0; k < L.K; ++k) {
      Eigen::VectorXd rp = raw, rm = raw;
      rp[L.strengths() + k] += h_;
      rm[L.strengths() + k] -= h_;
      const IssmCoefficients cp = issm_.materialize(codec_.decode(rp), design_);
      const IssmCoefficients cm = issm_.materialize(codec_.decode(rm), design_);
      const double lp = forward_filter(cp, obs).log_lik;
      const double lm = forward_filter(cm, obs).log_lik;
      ev.grad[L.strengths() + k] += -(lp - lm) / (2.0 * h_);
    }
    if (!ev.grad.allFinite()) throw NumericalError("non-finite Laplace gradient");
    return ev;
  }

  double psi(const Eigen::VectorXd& raw) const { return evaluate(raw, false).psi; }
  Eigen::VectorXd gradient(const Eigen::VectorXd& raw) const { return evaluate(raw, true).grad; }

 private:
  const CompositeIssm& issm_;
  const SeriesDesign& design_;
  LikelihoodData data_;
  ParameterCodec codec_;
  ModeOptions mode_opt_;
  double h_;
};

struct TrainingConfig {
  double reg_strength = 1.0;
  std::optional<Eigen::VectorXd> reg_center;  // raw; defaults to the codec center
  double default_strength = 0.05;
  double default_prior_std = 1.0;
  double default_variance = 1.0;
  int min_observed = 7;
  LbfgsOptions lbfgs{};
  ModeOptions mode{};
  double fd_step = 1e-6;
};

struct StageFit {
  int stage = 0;
  LikelihoodPotential lik;
  Eigen::VectorXd theta;
  ModelParameters params;
  bool fallback = false;
  bool converged = false;
  int iterations = 0;
  int evaluations = 0;
  int rejections = 0;
  double psi = std::numeric_limits<double>::quiet_NaN();
  std::string status;
  std::optional<std::string> error;
  std::vector<double> psi_trace;
  std::vector<double> grad_norm_trace;
  double seconds = 0.0;

  bool ok() const { return !error.has_value(); }
};

struct TrainedModel {
  std::vector<StageFit> stages;
  bool multi_stage = false;

  bool fallback() const {
    for (const auto& s : stages)
      if (s.fallback) return true;
    return false;
  }
  bool ok() const {
    for (const auto& s : stages)
      if (!s.ok()) return false;
    return !stages.empty();
  }
};

namespace detail {

inline int level_offset(const CompositeIssm& issm) {
  for (size_t c = 0; c < issm.components().size(); ++c) {
    const auto k = issm.components()[c].kind;
    if (k == ComponentKind::Level || k == ComponentKind::LevelTrend) return issm.dim_offset(c);
  }
  return -1;
}

}  // namespace detail

/// Fits one likelihood stage. Throws on failure at the starting point.
inline StageFit fit(const CompositeIssm& issm, const SeriesDesign& design, const LikelihoodData& data,
                    const TrainingConfig& cfg = {}) {
  const auto t0 = std::chrono::steady_clock::now();
  StageFit out;
  out.lik = data.lik;
  const ParameterCodec codec(issm, data.lik);
  const Eigen::VectorXd center =
      cfg.reg_center ? *cfg.reg_center : codec.center(cfg.default_strength, cfg.default_prior_std, cfg.default_variance);
  if (center.size() != codec.size()) throw ConfigError("regularizer center has the wrong length");
  const Regularizer reg = Regularizer::uniform(center, cfg.reg_strength);

  auto finish = [&](const Eigen::VectorXd& theta) {
    out.theta = theta;
    out.params = codec.decode(theta);
    out.lik = codec.likelihood_for(data.lik, out.params);
    out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  };

  if (data.num_observed() < cfg.min_observed) {
    out.fallback = true;
    out.status = "fallback: fewer than " + std::to_string(cfg.min_observed) + " observed days";
    finish(center);
    return out;
  }

  Eigen::VectorXd start = center;
  const int lvl = detail::level_offset(issm);
  if (lvl >= 0) start[codec.layout().prior_means() + lvl] = baseline_level(data);

  const LaplaceObjective objective(issm, design, data, cfg.mode, cfg.fd_step);
  auto fn = [&](const Eigen::VectorXd& x, Eigen::VectorXd& g) {
    const PsiEvaluation ev = objective.evaluate(x, true);
    g = ev.grad + reg.gradient(x);
    return ev.psi + reg.value(x);
  };
  const LbfgsResult r = lbfgs_minimize(fn, start, cfg.lbfgs);
  out.converged = r.converged;
  out.iterations = r.iterations;
  out.evaluations = r.evaluations;
  out.rejections = r.rejections;
  out.status = r.status;
  out.psi = r.f;
  out.psi_trace = r.f_trace;
  out.grad_norm_trace = r.grad_norm_trace;
  finish(r.x);
  return out;
}

/// Builds likelihood data from a count (or real) series. Days with zero
/// availability are unobserved; partial availability weights the likelihood.
/// With `mask` false every day is observed with full weight.
inline LikelihoodData make_likelihood_data(const LikelihoodPotential& lik, const Eigen::VectorXd& z,
                                           const Eigen::VectorXd& availability, bool mask = true) {
  if (z.size() != availability.size()) throw DataError("series and availability lengths differ");
  LikelihoodData d;
  d.lik = lik;
  d.z = z;
  d.rho = Eigen::VectorXd::Ones(z.size());
  d.observed.assign(static_cast<size_t>(z.size()), true);
  if (!mask) return d;
  for (Eigen::Index i = 0; i < z.size(); ++i) {
    const double a = availability[i];
    if (!(a >= 0.0 && a <= 1.0)) throw DataError("availability outside [0, 1] (t=" + std::to_string(i) + ")");
    d.observed[static_cast<size_t>(i)] = a > 0.0;
    d.rho[i] = a > 0.0 ? a : 1.0;
  }
  return d;
}

inline std::vector<LikelihoodData> multi_stage_data(const Eigen::VectorXd& z, const Eigen::VectorXd& availability,
                                                    const TransferFunction& transfer) {
  const auto stages = multi_stage_decompose(z, availability);
  std::vector<LikelihoodData> out;
  for (const auto& s : stages) {
    LikelihoodData d;
    d.lik = s.stage < 2 ? LikelihoodPotential::bernoulli() : LikelihoodPotential::poisson(transfer);
    d.z = s.targets;
    d.observed = s.active;
    d.rho = Eigen::VectorXd::Ones(z.size());
    for (Eigen::Index i = 0; i < z.size(); ++i)
      if (s.active[static_cast<size_t>(i)]) d.rho[i] = s.weight[i];
    out.push_back(std::move(d));
  }
  return out;
}

/// Fits the three count stages independently. A failing stage records its
/// error and does not affect the others.
inline TrainedModel fit_multi_stage(const CompositeIssm& issm, const SeriesDesign& design, const Eigen::VectorXd& z,
                                    const Eigen::VectorXd& availability, const TrainingConfig& cfg = {},
                                    const TransferFunction& transfer = TransferFunction::twice_logistic()) {
  TrainedModel model;
  model.multi_stage = true;
  const auto data = multi_stage_data(z, availability, transfer);
  for (size_t k = 0; k < data.size(); ++k) {
    StageFit f;
    try {
      f = fit(issm, design, data[k], cfg);
    } catch (const std::exception& e) {
      f.lik = data[k].lik;
      f.error = e.what();
      f.status = "failed";
    }
    f.stage = static_cast<int>(k);
    model.stages.push_back(std::move(f));
  }
  return model;
}

}  // namespace latentcast
