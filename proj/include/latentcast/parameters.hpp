#pragma once

// Unconstrained encoding of model parameters and the quadratic regularizer.
//
// Raw layout: [weights (p)] [strengths (K)] [prior means (d)] [prior std slots (S)] [likelihood variance (0/1)]
// Strengths use lo + (hi - lo) sigmoid(theta); std devs and the variance use softplus.

#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "latentcast/errors.hpp"
#include "latentcast/issm.hpp"
#include "latentcast/likelihood.hpp"

namespace latentcast {

namespace detail {

inline double softplus_inverse(double x) {
  if (!(x > 0.0)) throw ConfigError("softplus-encoded value must be positive");
  return x > 30.0 ? x + std::log(-std::expm1(-x)) : std::log(std::expm1(x));
}

}  // namespace detail

struct ParameterLayout {
  int p = 0;
  int K = 0;
  int d = 0;
  int S = 0;
  bool has_variance = false;

  int weights() const { return 0; }
  int strengths() const { return p; }
  int prior_means() const { return p + K; }
  int prior_stds() const { return p + K + d; }
  int variance() const { return p + K + d + S; }
  int size() const { return p + K + d + S + (has_variance ? 1 : 0); }
};

class ParameterCodec {
 public:
  ParameterCodec() = default;

  ParameterCodec(const CompositeIssm& issm, const LikelihoodPotential& lik) : bounds_(issm.strength_bounds()) {
    layout_.p = issm.feature_dim();
    layout_.K = issm.num_strengths();
    layout_.d = issm.dim();
    layout_.S = issm.num_std_slots();
    layout_.has_variance = lik.has_parameters();
    for (const auto& b : bounds_)
      if (!(b.lo < b.hi)) throw ConfigError("strength bounds must satisfy lo < hi");
    names_.clear();
    for (int j = 0; j < layout_.p; ++j) names_.push_back("w[" + std::to_string(j) + "]");
    for (const auto& n : issm.strength_names()) names_.push_back(n);
    for (int j = 0; j < layout_.d; ++j) names_.push_back("mu0[" + std::to_string(j) + "]");
    for (int j = 0; j < layout_.S; ++j) names_.push_back("sigma0[" + std::to_string(j) + "]");
    if (layout_.has_variance) names_.push_back("variance");
  }

  const ParameterLayout& layout() const { return layout_; }
  int size() const { return layout_.size(); }
  const std::vector<std::string>& names() const { return names_; }

  ModelParameters decode(const Eigen::VectorXd& raw) const {
    check(raw);
    ModelParameters p;
    p.weights = raw.segment(layout_.weights(), layout_.p);
    p.strengths.resize(layout_.K);
    for (int k = 0; k < layout_.K; ++k) {
      const auto& b = bounds_[static_cast<size_t>(k)];
      p.strengths[k] = b.lo + (b.hi - b.lo) * detail::sigmoid(raw[layout_.strengths() + k]);
    }
    p.prior_mean = raw.segment(layout_.prior_means(), layout_.d);
    p.prior_std_slots.resize(layout_.S);
    for (int j = 0; j < layout_.S; ++j) p.prior_std_slots[j] = detail::softplus(raw[layout_.prior_stds() + j]);
    p.likelihood_variance = layout_.has_variance ? detail::softplus(raw[layout_.variance()]) : 1.0;
    return p;
  }

  Eigen::VectorXd encode(const ModelParameters& p) const {
    Eigen::VectorXd raw(size());
    raw.segment(layout_.weights(), layout_.p) = p.weights;
    for (int k = 0; k < layout_.K; ++k) {
      const auto& b = bounds_[static_cast<size_t>(k)];
      const double u = (p.strengths[k] - b.lo) / (b.hi - b.lo);
      if (!(u > 0.0 && u < 1.0)) throw ConfigError("innovation strength outside its bounds");
      raw[layout_.strengths() + k] = detail::logit(u);
    }
    raw.segment(layout_.prior_means(), layout_.d) = p.prior_mean;
    for (int j = 0; j < layout_.S; ++j) raw[layout_.prior_stds() + j] = detail::softplus_inverse(p.prior_std_slots[j]);
    if (layout_.has_variance) raw[layout_.variance()] = detail::softplus_inverse(p.likelihood_variance);
    return raw;
  }

  /// d(constrained)/d(raw), coordinate-wise (the encoding is separable).
  Eigen::VectorXd jacobian(const Eigen::VectorXd& raw) const {
    check(raw);
    Eigen::VectorXd J = Eigen::VectorXd::Ones(size());
    for (int k = 0; k < layout_.K; ++k) {
      const auto& b = bounds_[static_cast<size_t>(k)];
      const double t = raw[layout_.strengths() + k];
      J[layout_.strengths() + k] = (b.hi - b.lo) * detail::sigmoid(t) * detail::sigmoid(-t);
    }
    for (int j = 0; j < layout_.S; ++j) J[layout_.prior_stds() + j] = detail::sigmoid(raw[layout_.prior_stds() + j]);
    if (layout_.has_variance) J[layout_.variance()] = detail::sigmoid(raw[layout_.variance()]);
    return J;
  }

  LikelihoodPotential likelihood_for(const LikelihoodPotential& base, const ModelParameters& p) const {
    LikelihoodPotential l = base;
    if (layout_.has_variance) l.variance = p.likelihood_variance;
    return l;
  }

  /// Raw vector at the given constrained defaults. A default strength outside
  /// a component's bounds is replaced by the midpoint of those bounds.
  Eigen::VectorXd center(double strength = 0.05, double prior_std = 1.0, double variance = 1.0) const {
    ModelParameters p;
    p.weights = Eigen::VectorXd::Zero(layout_.p);
    p.strengths.resize(layout_.K);
    for (int k = 0; k < layout_.K; ++k) {
      const auto& b = bounds_[static_cast<size_t>(k)];
      p.strengths[k] = (strength > b.lo && strength < b.hi) ? strength : 0.5 * (b.lo + b.hi);
    }
    p.prior_mean = Eigen::VectorXd::Zero(layout_.d);
    p.prior_std_slots = Eigen::VectorXd::Constant(layout_.S, prior_std);
    p.likelihood_variance = variance;
    return encode(p);
  }

 private:
  void check(const Eigen::VectorXd& raw) const {
    if (raw.size() != size())
      throw ConfigError("parameter vector has length " + std::to_string(raw.size()) + ", expected " +
                        std::to_string(size()));
  }

  ParameterLayout layout_;
  std::vector<StrengthBounds> bounds_;
  std::vector<std::string> names_;
};

/// sum_j rho_j / 2 (theta_j - center_j)^2 over raw coordinates.
struct Regularizer {
  Eigen::VectorXd strength;
  Eigen::VectorXd center;

  static Regularizer uniform(const Eigen::VectorXd& center, double rho = 1.0) {
    if (!(rho >= 0.0)) throw ConfigError("regularization strength must be nonnegative");
    return {Eigen::VectorXd::Constant(center.size(), rho), center};
  }

  double value(const Eigen::VectorXd& raw) const {
    return 0.5 * (strength.array() * (raw - center).array().square()).sum();
  }

  Eigen::VectorXd gradient(const Eigen::VectorXd& raw) const {
    return (strength.array() * (raw - center).array()).matrix();
  }
};

}  // namespace latentcast
