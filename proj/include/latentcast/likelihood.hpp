#pragma once

// Likelihood potentials phi(y) = -log P(z | y) for the supported emission
// families, with derivatives up to third order, the Gaussian (Laplace) fit,
// sampling, and the three-stage decomposition of count data.

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "latentcast/errors.hpp"

namespace latentcast {

namespace detail {

inline double sigmoid(double u) {
  if (u >= 0.0) return 1.0 / (1.0 + std::exp(-u));
  const double e = std::exp(u);
  return e / (1.0 + e);
}

// g(u) = log(1 + e^u), branch at 0 so neither side overflows.
inline double softplus(double u) {
  if (u > 0.0) return u + std::log1p(std::exp(-u));
  return std::log1p(std::exp(u));
}

inline double log_softplus(double u) {
  if (u < -30.0) return u + std::log1p(-0.5 * std::exp(u));
  return std::log(softplus(u));
}

// sigma(u) / g(u), finite for all u (tends to 1 as u -> -inf).
inline double sigmoid_over_softplus(double u) {
  if (u < -30.0) {
    const double x = std::exp(u);
    return (1.0 / (1.0 + x)) / (1.0 - 0.5 * x);
  }
  return sigmoid(u) / softplus(u);
}

// 1 - sigma(u) - sigma(u)/g(u); the small-x expansion avoids cancellation.
inline double one_minus_sigmoid_minus_ratio(double u) {
  if (u < -30.0) return -0.5 * std::exp(u);
  return sigmoid(-u) - sigmoid_over_softplus(u);
}

inline double logit(double p) { return std::log(p) - std::log1p(-p); }

}  // namespace detail

enum class TransferKind { Exponential, Logistic, TwiceLogistic };

/// Value and first three derivatives of a rate function lambda(y).
///
/// `ratio*` hold lambda^(k) / lambda and `c` holds 1 - sigma(u) - sigma(u)/g(u)
/// for the logistic family; these are what the Poisson potential needs without
/// dividing two underflowing numbers.
struct TransferDerivs {
  double lambda = 0.0;
  double d1 = 0.0;
  double d2 = 0.0;
  double d3 = 0.0;
  double log_lambda = 0.0;
  double ratio1 = 0.0;
  double ratio2 = 0.0;
  double ratio3 = 0.0;
  // Stable forms of ratio2 - ratio1^2 and ratio3 - 3 ratio1 ratio2 + 2 ratio1^3.
  double curv_term = 0.0;
  double third_term = 0.0;
};

/// Rate function for the Poisson potential. TwiceLogistic computes
/// lambda(y) = g(y (1 + kappa g(y))); Logistic is the kappa = 0 case.
struct TransferFunction {
  TransferKind kind = TransferKind::TwiceLogistic;
  double kappa = 0.01;

  static TransferFunction exponential() { return {TransferKind::Exponential, 0.0}; }
  static TransferFunction logistic() { return {TransferKind::Logistic, 0.0}; }
  static TransferFunction twice_logistic(double kappa = 0.01) {
    if (!(kappa >= 0.0)) throw ConfigError("twice-logistic kappa must be nonnegative");
    return {TransferKind::TwiceLogistic, kappa};
  }

  double effective_kappa() const { return kind == TransferKind::TwiceLogistic ? kappa : 0.0; }

  TransferDerivs eval(double y) const {
    TransferDerivs r;
    if (kind == TransferKind::Exponential) {
      const double e = std::exp(y);
      r.lambda = r.d1 = r.d2 = r.d3 = e;
      r.log_lambda = y;
      r.ratio1 = r.ratio2 = r.ratio3 = 1.0;
      r.curv_term = 0.0;
      r.third_term = 0.0;
      return r;
    }
    const double k = effective_kappa();
    const double gy = detail::softplus(y);
    const double sy = detail::sigmoid(y);
    const double sy1 = sy * detail::sigmoid(-y);
    const double sy2 = sy1 * (1.0 - 2.0 * sy);
    const double u = y * (1.0 + k * gy);
    const double u1 = 1.0 + k * gy + k * y * sy;
    const double u2 = 2.0 * k * sy + k * y * sy1;
    const double u3 = 3.0 * k * sy1 + k * y * sy2;

    const double su = detail::sigmoid(u);
    const double sbar = detail::sigmoid(-u);
    const double su1 = su * sbar;
    const double su2 = su1 * (1.0 - 2.0 * su);
    const double q = detail::sigmoid_over_softplus(u);
    const double c = detail::one_minus_sigmoid_minus_ratio(u);

    r.lambda = detail::softplus(u);
    r.log_lambda = detail::log_softplus(u);
    r.d1 = su * u1;
    r.d2 = su1 * u1 * u1 + su * u2;
    r.d3 = su2 * u1 * u1 * u1 + 3.0 * su1 * u1 * u2 + su * u3;
    r.ratio1 = q * u1;
    r.ratio2 = q * (sbar * u1 * u1 + u2);
    r.ratio3 = q * (sbar * (1.0 - 2.0 * su) * u1 * u1 * u1 + 3.0 * sbar * u1 * u2 + u3);
    r.curv_term = q * u1 * u1 * c + q * u2;
    r.third_term = u1 * u1 * u1 * q * (q * (c - su) + c * (1.0 - 2.0 * su - 3.0 * q)) +
                   3.0 * q * u1 * u2 * c + q * u3;
    return r;
  }

  double rate(double y) const { return eval(y).lambda; }

  /// Solves lambda(y) = rate for y (rate > 0).
  double inverse(double rate) const {
    if (!(rate > 0.0) || !std::isfinite(rate)) throw DataError("transfer inverse needs a positive finite rate");
    if (kind == TransferKind::Exponential) return std::log(rate);
    // g^{-1}(m) = log(e^m - 1)
    const double ustar = rate > 30.0 ? rate + std::log(-std::expm1(-rate)) : std::log(std::expm1(rate));
    const double k = effective_kappa();
    if (k == 0.0) return ustar;
    auto h = [&](double y) { return y * (1.0 + k * detail::softplus(y)) - ustar; };
    double lo = std::min(ustar, 0.0) - 1.0;
    double hi = std::max(ustar, 0.0) + 1.0;
    for (int i = 0; i < 200 && hi - lo > 1e-15 * (1.0 + std::abs(lo)); ++i) {
      const double mid = 0.5 * (lo + hi);
      (h(mid) > 0.0 ? hi : lo) = mid;
    }
    return 0.5 * (lo + hi);
  }
};

enum class LikelihoodKind { Gaussian, BernoulliLogistic, Poisson };

inline std::string to_string(LikelihoodKind k) {
  switch (k) {
    case LikelihoodKind::Gaussian: return "gaussian";
    case LikelihoodKind::BernoulliLogistic: return "bernoulli";
    case LikelihoodKind::Poisson: return "poisson";
  }
  return "unknown";
}

/// phi and its y-derivatives at one (z, y).
struct PhiDerivs {
  double phi = 0.0;
  double d1 = 0.0;
  double d2 = 0.0;
  double d3 = 0.0;
};

/// Gaussian surrogate N(value | y, variance) matching phi's first two
/// derivatives at the expansion point. `missing` is set when the curvature
/// fell below the floor and the position must be skipped.
struct GaussianizedObservation {
  double value = 0.0;
  double variance = 1.0;
  bool missing = false;
};

inline constexpr double kCurvatureFloor = 1e-10;

/// A member of the likelihood family. Bernoulli targets are signs (+1 / -1),
/// Poisson targets are nonnegative integers, Gaussian targets are reals.
/// `rho` is the availability weight in (0, 1]; it multiplies phi and all
/// derivatives.
struct LikelihoodPotential {
  LikelihoodKind kind = LikelihoodKind::Poisson;
  TransferFunction transfer{};
  double variance = 1.0;  // Gaussian only

  static LikelihoodPotential gaussian(double variance) {
    if (!(variance > 0.0)) throw ConfigError("gaussian variance must be positive");
    return {LikelihoodKind::Gaussian, {}, variance};
  }
  static LikelihoodPotential bernoulli() { return {LikelihoodKind::BernoulliLogistic, {}, 1.0}; }
  static LikelihoodPotential poisson(TransferFunction tf = TransferFunction::twice_logistic()) {
    return {LikelihoodKind::Poisson, tf, 1.0};
  }

  void validate_target(double z) const {
    switch (kind) {
      case LikelihoodKind::Gaussian:
        if (!std::isfinite(z)) throw DataError("gaussian target must be finite");
        break;
      case LikelihoodKind::BernoulliLogistic:
        if (z != 1.0 && z != -1.0) throw DataError("bernoulli target must be +1 or -1");
        break;
      case LikelihoodKind::Poisson:
        if (!(z >= 0.0) || z != std::floor(z)) throw DataError("poisson target must be a nonnegative integer");
        break;
    }
  }

  PhiDerivs phi_derivs(double z, double y, double rho = 1.0) const {
    validate_target(z);
    PhiDerivs p;
    switch (kind) {
      case LikelihoodKind::Gaussian: {
        const double r = y - z;
        p.phi = 0.5 * std::log(2.0 * std::numbers::pi * variance) + 0.5 * r * r / variance;
        p.d1 = r / variance;
        p.d2 = 1.0 / variance;
        p.d3 = 0.0;
        break;
      }
      case LikelihoodKind::BernoulliLogistic: {
        p.phi = detail::softplus(-z * y);
        p.d1 = -z * detail::sigmoid(-z * y);
        const double s = detail::sigmoid(y);
        p.d2 = s * detail::sigmoid(-y);
        p.d3 = p.d2 * (1.0 - 2.0 * s);
        break;
      }
      case LikelihoodKind::Poisson: {
        const TransferDerivs t = transfer.eval(y);
        if (z == 0.0) {
          p.phi = t.lambda;
          p.d1 = t.d1;
          p.d2 = t.d2;
          p.d3 = t.d3;
        } else {
          p.phi = t.lambda - z * t.log_lambda + std::lgamma(z + 1.0);
          p.d1 = t.d1 - z * t.ratio1;
          p.d2 = t.d2 - z * t.curv_term;
          p.d3 = t.d3 - z * t.third_term;
        }
        break;
      }
    }
    p.phi *= rho;
    p.d1 *= rho;
    p.d2 *= rho;
    p.d3 *= rho;
    return p;
  }

  /// Derivatives of (phi, phi', phi'') with respect to the Gaussian variance.
  /// Zero for the other kinds, which have no likelihood parameters.
  PhiDerivs variance_derivs(double z, double y, double rho = 1.0) const {
    PhiDerivs p;
    if (kind != LikelihoodKind::Gaussian) return p;
    const double r = y - z;
    const double v = variance;
    p.phi = rho * (0.5 / v - 0.5 * r * r / (v * v));
    p.d1 = -rho * r / (v * v);
    p.d2 = -rho / (v * v);
    return p;
  }

  bool has_parameters() const { return kind == LikelihoodKind::Gaussian; }

  GaussianizedObservation gaussianize(double z, double y, double rho = 1.0) const {
    const PhiDerivs p = phi_derivs(z, y, rho);
    GaussianizedObservation g;
    if (!(p.d2 >= kCurvatureFloor) || !std::isfinite(p.d1)) {
      g.missing = true;
      g.value = 0.0;
      g.variance = std::numeric_limits<double>::infinity();
      return g;
    }
    if (kind == LikelihoodKind::Gaussian) {
      // Exact: the quadratic fit of a quadratic.
      g.value = z;
      g.variance = variance / rho;
      return g;
    }
    g.variance = 1.0 / p.d2;
    g.value = y - p.d1 / p.d2;
    return g;
  }

  /// Draws a target at latent value y. Bernoulli returns +1 with probability sigma(y).
  template <class Rng>
  double sample(double y, Rng& rng) const {
    switch (kind) {
      case LikelihoodKind::Gaussian: {
        std::normal_distribution<double> nd(y, std::sqrt(variance));
        return nd(rng);
      }
      case LikelihoodKind::BernoulliLogistic: {
        std::bernoulli_distribution bd(detail::sigmoid(y));
        return bd(rng) ? 1.0 : -1.0;
      }
      case LikelihoodKind::Poisson: {
        const double lambda = transfer.rate(y);
        if (!(lambda > 0.0)) return 0.0;
        std::poisson_distribution<std::int64_t> pd(lambda);
        return static_cast<double>(pd(rng));
      }
    }
    return 0.0;
  }
};

/// Observations for one stage of the multi-stage likelihood. Inactive
/// positions are unobserved; `weight` carries the availability fraction.
struct StageData {
  int stage = 0;
  Eigen::VectorXd targets;
  std::vector<bool> active;
  Eigen::VectorXd weight;

  int num_active() const {
    int n = 0;
    for (bool a : active) n += a ? 1 : 0;
    return n;
  }
};

/// Splits a count series into the zero/one/2+Poisson stages. A day is active
/// at stage k when z >= k and the item was available (availability > 0).
/// Stages 0 and 1 get sign targets (+1 when z == k, -1 when z > k); stage 2
/// gets z - 2.
inline std::vector<StageData> multi_stage_decompose(const Eigen::VectorXd& z,
                                                    const Eigen::VectorXd& availability) {
  if (z.size() != availability.size()) throw DataError("count and availability series differ in length");
  const Eigen::Index n = z.size();
  std::vector<StageData> stages(3);
  for (int k = 0; k < 3; ++k) {
    stages[k].stage = k;
    stages[k].targets = Eigen::VectorXd::Zero(n);
    stages[k].active.assign(static_cast<size_t>(n), false);
    stages[k].weight = Eigen::VectorXd::Zero(n);
  }
  for (Eigen::Index t = 0; t < n; ++t) {
    const double a = availability[t];
    if (!(a > 0.0)) continue;
    const double zt = z[t];
    if (!(zt >= 0.0) || zt != std::floor(zt)) throw DataError("counts must be nonnegative integers (t=" + std::to_string(t) + ")");
    for (int k = 0; k < 3; ++k) {
      if (zt < k) break;
      stages[k].active[static_cast<size_t>(t)] = true;
      stages[k].weight[t] = a;
      if (k < 2) {
        stages[k].targets[t] = (zt == k) ? 1.0 : -1.0;
      } else {
        stages[k].targets[t] = zt - 2.0;
      }
    }
  }
  return stages;
}

}  // namespace latentcast
