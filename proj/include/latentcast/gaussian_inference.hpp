#pragma once

// Kalman filtering and smoothing for an ISSM with Gaussian observations
// N(value_t | y_t, variance_t), run as a square-root information filter.
//
// Step i (0-based) observes y_i = a_i' l_i + b_i and then moves the state by
// l_{i+1} = F l_i + g_i eps_i. The latent path is s = [eps_0..eps_{T-2}, l_0];
// eps_{T-1} only matters for the final state l_T used in forecasting.
//
// Forward messages q_i hold P(l_i | data up to i) as a triangular system.
// The backward pass turns them into smoothed marginals, using for each i the
// conditional of eps_i given l_{i+1} and the data up to i.
//
// In weight mode the feature weights w get a Gaussian prior and are inferred
// jointly; the state carried by messages is then [l; w] and offsets b are not
// used (x_i' w takes their place).

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <vector>

#include <Eigen/Dense>

#include "latentcast/errors.hpp"
#include "latentcast/issm.hpp"
#include "latentcast/srif.hpp"

namespace latentcast {

/// Gaussian pseudo-observations. Positions with observed == false, or with a
/// non-finite variance, are treated as missing.
struct GaussianObservations {
  Eigen::VectorXd value;
  Eigen::VectorXd variance;
  std::vector<bool> observed;

  Eigen::Index size() const { return value.size(); }

  bool is_observed(Eigen::Index i) const {
    return observed[static_cast<size_t>(i)] && std::isfinite(variance[i]);
  }

  static GaussianObservations missing(Eigen::Index T) {
    GaussianObservations o;
    o.value = Eigen::VectorXd::Zero(T);
    o.variance = Eigen::VectorXd::Ones(T);
    o.observed.assign(static_cast<size_t>(T), false);
    return o;
  }
};

/// Independent Gaussian prior over feature weights (std may be 0).
struct WeightPrior {
  Eigen::VectorXd mean;
  Eigen::VectorXd std;
};

/// eps_i | l_{i+1}, w ~ N(k' l_{i+1} + q' w + mean, var).
struct EpsConditional {
  Eigen::VectorXd k;
  Eigen::VectorXd q;
  double mean = 0.0;
  double var = 1.0;
};

struct ForwardState {
  Eigen::Index length = 0;
  Eigen::Index dim = 0;
  Eigen::Index weight_dim = 0;
  std::vector<EpsConditional> eps;  // i = 0..T-2
  Eigen::VectorXd pred_mean;        // predictive of value_i (offset included); NaN when missing
  Eigen::VectorXd pred_var;
  double log_lik = 0.0;
  TriangularGaussian last;  // q_{T-1} over [l_{T-1}; w]
};

struct SmoothingResult {
  Eigen::VectorXd eps_mean;  // T-1
  Eigen::VectorXd eps_var;
  Eigen::VectorXd l0_mean;
  Eigen::MatrixXd l0_cov;
  Eigen::VectorXd y_mean;  // T, offsets included
  Eigen::VectorXd y_var;
  TriangularGaussian initial_state;  // posterior over [l_0; w]
  TriangularGaussian final_state;    // posterior over [l_T; w]
  Eigen::VectorXd w_mean;            // weight mode only
  Eigen::MatrixXd w_cov;
  double log_lik = 0.0;
};

namespace detail {

/// Householder reflection Q = I - beta v v' with Q g = sigma e_1.
struct Reflection {
  bool active = false;
  Eigen::VectorXd v;
  double beta = 0.0;
  double sigma = 0.0;

  explicit Reflection(const Eigen::VectorXd& g) {
    const double norm = g.norm();
    if (norm == 0.0) return;
    if (!std::isfinite(norm)) throw NumericalError("non-finite innovation vector");
    active = true;
    const double sign = g[0] >= 0.0 ? 1.0 : -1.0;
    v = g;
    v[0] += sign * norm;
    beta = 2.0 / v.squaredNorm();
    sigma = -sign * norm;
  }

  // Q M, for M with d rows.
  Eigen::MatrixXd apply(const Eigen::MatrixXd& M) const {
    return M - (beta * v) * (v.transpose() * M);
  }
};

}  // namespace detail

class SquareRootSmoother {
 public:
  using Index = Eigen::Index;

  SquareRootSmoother(const IssmCoefficients& coefs, const WeightPrior* weights = nullptr)
      : c_(coefs), d_(coefs.dim()), T_(coefs.length()) {
    if (T_ < 1) throw DataError("empty series");
    if (weights) {
      p_ = weights->mean.size();
      if (weights->std.size() != p_ || coefs.x.cols() != p_)
        throw DataError("weight prior does not match the feature dimension");
      for (Index j = 0; j < p_; ++j)
        if (!(weights->std[j] >= 0.0) || !std::isfinite(weights->mean[j]))
          throw ConfigError("weight prior needs finite means and nonnegative std");
      wprior_ = *weights;
    }
    n_ = d_ + p_;
    for (Index j = 0; j < d_; ++j)
      if (!(c_.prior_std[j] > 0.0) || !std::isfinite(c_.prior_mean[j]))
        throw NumericalError("invalid latent prior");
  }

  bool weight_mode() const { return p_ > 0; }

  ForwardState forward(const GaussianObservations& obs) {
    if (obs.size() != T_) throw DataError("observation length differs from series length");
    ForwardState fs;
    fs.length = T_;
    fs.dim = d_;
    fs.weight_dim = p_;
    fs.eps.resize(static_cast<size_t>(std::max<Index>(T_ - 1, 0)));
    fs.pred_mean = Eigen::VectorXd::Constant(T_, std::numeric_limits<double>::quiet_NaN());
    fs.pred_var = Eigen::VectorXd::Constant(T_, std::numeric_limits<double>::quiet_NaN());

    TriangularGaussian msg = initial_message(obs, fs);
    for (Index i = 0; i + 1 < T_; ++i) {
      const Eigen::VectorXd g = c_.g.row(i).transpose();
      fs.eps[static_cast<size_t>(i)] = eps_conditional(msg, g, i);
      msg = step(msg, g, obs, i + 1, fs);
    }
    fs.last = std::move(msg);
    return fs;
  }

  SmoothingResult smooth(const ForwardState& fs) {
    if (fs.length != T_ || fs.dim != d_ || fs.weight_dim != p_) throw DataError("forward state does not match model");
    SmoothingResult res;
    res.log_lik = fs.log_lik;
    res.eps_mean = Eigen::VectorXd::Zero(T_ - 1);
    res.eps_var = Eigen::VectorXd::Zero(T_ - 1);
    res.y_mean.resize(T_);
    res.y_var.resize(T_);

    // Final state: one prediction step from q_{T-1} without an observation.
    {
      GaussianObservations none = GaussianObservations::missing(T_);
      ForwardState scratch;
      res.final_state = step(fs.last, c_.g.row(T_ - 1).transpose(), none, T_, scratch);
    }

    TriangularGaussian r = fs.last;
    Eigen::VectorXd mean = r.mean();
    moments_y(r, mean, T_ - 1, res);
    for (Index i = T_ - 2; i >= 0; --i) {
      const EpsConditional& ec = fs.eps[static_cast<size_t>(i)];
      Eigen::VectorXd coef(n_);
      coef.head(d_) = ec.k;
      if (p_ > 0) coef.tail(p_) = ec.q;
      res.eps_mean[i] = coef.dot(mean) + ec.mean;
      res.eps_var[i] = r.variance_of(coef) + ec.var;
      r = back_step(r, ec, c_.g.row(i).transpose());
      mean = r.mean();
      moments_y(r, mean, i, res);
    }
    res.initial_state = r;
    res.l0_mean = mean.head(d_);
    const Eigen::MatrixXd cov = r.covariance();
    res.l0_cov = cov.topLeftCorner(d_, d_);
    if (p_ > 0) {
      res.w_mean = mean.tail(p_);
      res.w_cov = cov.bottomRightCorner(p_, p_);
    }
    return res;
  }

 private:
  double offset(Index i) const { return p_ > 0 ? 0.0 : c_.b[i]; }

  void check_obs(const GaussianObservations& obs, Index i) const {
    if (!obs.is_observed(i)) return;
    if (!std::isfinite(obs.value[i])) throw NumericalError("non-finite observation", static_cast<long>(i));
    if (!(obs.variance[i] >= 0.0)) throw NumericalError("negative observation variance", static_cast<long>(i));
    if (!std::isfinite(c_.b[i])) throw NumericalError("non-finite offset", static_cast<long>(i));
  }

  // Observation row over [state (n) | value] starting at column `col0`.
  void fill_obs_row(Index row, Index col0, Index i, double sd) {
    for (Index j = 0; j < d_; ++j) sys_.A(row, col0 + j) = -c_.a(i, j);
    for (Index j = 0; j < p_; ++j) sys_.A(row, col0 + d_ + j) = -c_.x(i, j);
    sys_.A(row, col0 + n_) = 1.0;
    sys_.mean[row] = 0.0;
    sys_.sd[row] = sd;
  }

  // After triangularizing columns [col0, col0 + n (+1)), reads off the new
  // message and, if observed, conditions on the value and accumulates log lik.
  TriangularGaussian extract(const std::vector<Index>& piv, Index col0, bool observed, double zval, Index i,
                             ForwardState& fs) {
    TriangularGaussian out;
    out.R = Eigen::MatrixXd::Zero(n_, n_);
    out.m.resize(n_);
    out.s.resize(n_);
    for (Index c = 0; c < n_; ++c) {
      const Index r = piv[static_cast<size_t>(c)];
      for (Index j = c; j < n_; ++j) out.R(c, j) = sys_.A(r, col0 + j);
      out.m[c] = sys_.mean[r];
      out.s[c] = sys_.sd[r];
    }
    if (observed) {
      const Index zr = piv[static_cast<size_t>(n_)];
      const double pm = sys_.mean[zr];
      const double ps = sys_.sd[zr];
      if (!(ps > 0.0) || !std::isfinite(ps) || !std::isfinite(pm))
        throw NumericalError("degenerate predictive distribution", static_cast<long>(i));
      const double r = (zval - pm) / ps;
      fs.log_lik += -0.5 * std::log(2.0 * std::numbers::pi) - std::log(ps) - 0.5 * r * r;
      fs.pred_mean[i] = pm + offset(i);
      fs.pred_var[i] = ps * ps;
      for (Index c = 0; c < n_; ++c) out.m[c] -= sys_.A(piv[static_cast<size_t>(c)], col0 + n_) * zval;
    }
    return out;
  }

  TriangularGaussian initial_message(const GaussianObservations& obs, ForwardState& fs) {
    check_obs(obs, 0);
    const bool observed = obs.is_observed(0);
    const Index cols = n_ + (observed ? 1 : 0);
    const Index rows = n_ + (observed ? 1 : 0);
    sys_.reset(rows, cols);
    for (Index j = 0; j < d_; ++j) {
      sys_.A(j, j) = 1.0;
      sys_.mean[j] = c_.prior_mean[j];
      sys_.sd[j] = c_.prior_std[j];
    }
    for (Index j = 0; j < p_; ++j) {
      sys_.A(d_ + j, d_ + j) = 1.0;
      sys_.mean[d_ + j] = wprior_.mean[j];
      sys_.sd[d_ + j] = wprior_.std[j];
    }
    double zval = 0.0;
    if (observed) {
      fill_obs_row(n_, 0, 0, std::sqrt(obs.variance[0]));
      zval = obs.value[0] - offset(0);
    }
    std::vector<Index> rowset(static_cast<size_t>(rows));
    for (Index r = 0; r < rows; ++r) rowset[static_cast<size_t>(r)] = r;
    const auto piv = sys_.triangularize(rowset, 0, cols);
    return extract(piv, 0, observed, zval, 0, fs);
  }

  // From q_{i-1} over [l_{i-1}; w] to q_i, conditioning on observation i when
  // i < T and it is observed.
  TriangularGaussian step(const TriangularGaussian& msg, const Eigen::VectorXd& g, const GaussianObservations& obs,
                          Index i, ForwardState& fs) {
    const bool observed = i < T_ && obs.is_observed(i);
    if (i < T_) check_obs(obs, i);
    const Index col_new = d_;
    const Index cols = d_ + n_ + (observed ? 1 : 0);
    const Index rows = d_ + d_ + p_ + (observed ? 1 : 0);
    sys_.reset(rows, cols);
    // Rows of q_{i-1}: [R^l, 0, R^lw].
    for (Index r = 0; r < d_; ++r) {
      for (Index j = r; j < d_; ++j) sys_.A(r, j) = msg.R(r, j);
      for (Index j = 0; j < p_; ++j) sys_.A(r, col_new + d_ + j) = msg.R(r, d_ + j);
      sys_.mean[r] = msg.m[r];
      sys_.sd[r] = msg.s[r];
    }
    // Transition rows Q (l_i - F l_{i-1}) = Q g eps.
    const detail::Reflection refl(g);
    if (refl.active) {
      const Eigen::MatrixXd QF = refl.apply(c_.F);
      const Eigen::MatrixXd Q = refl.apply(Eigen::MatrixXd::Identity(d_, d_));
      for (Index r = 0; r < d_; ++r) {
        for (Index j = 0; j < d_; ++j) {
          sys_.A(d_ + r, j) = -QF(r, j);
          sys_.A(d_ + r, col_new + j) = Q(r, j);
        }
      }
      sys_.sd[d_] = std::abs(refl.sigma);
    } else {
      for (Index r = 0; r < d_; ++r) {
        for (Index j = 0; j < d_; ++j) sys_.A(d_ + r, j) = -c_.F(r, j);
        sys_.A(d_ + r, col_new + r) = 1.0;
      }
    }
    // Weight rows [0, 0, R^w].
    for (Index r = 0; r < p_; ++r) {
      for (Index j = r; j < p_; ++j) sys_.A(2 * d_ + r, col_new + d_ + j) = msg.R(d_ + r, d_ + j);
      sys_.mean[2 * d_ + r] = msg.m[d_ + r];
      sys_.sd[2 * d_ + r] = msg.s[d_ + r];
    }
    double zval = 0.0;
    if (observed) {
      fill_obs_row(rows - 1, col_new, i, std::sqrt(obs.variance[i]));
      zval = obs.value[i] - offset(i);
    }
    // Marginalize l_{i-1}.
    for (Index j = 0; j < d_; ++j)
      for (Index r = d_; r < 2 * d_; ++r) sys_.eliminate(j, r, j);
    std::vector<Index> rowset;
    for (Index r = d_; r < rows; ++r) rowset.push_back(r);
    const auto piv = sys_.triangularize(rowset, col_new, cols);
    return extract(piv, col_new, observed, zval, i, fs);
  }

  EpsConditional eps_conditional(const TriangularGaussian& msg, const Eigen::VectorXd& g, Index i) const {
    EpsConditional ec;
    ec.k = Eigen::VectorXd::Zero(d_);
    ec.q = Eigen::VectorXd::Zero(p_);
    if (g.squaredNorm() == 0.0) return ec;
    const Eigen::MatrixXd Rl = msg.R.topLeftCorner(d_, d_).triangularView<Eigen::UnitUpper>();
    const Eigen::VectorXd h = Rl * (c_.F_inv * g);
    const Eigen::VectorXd s = msg.s.head(d_);
    Eigen::VectorXd u(d_);
    for (Index j = 0; j < d_; ++j) {
      if (s[j] == 0.0) {
        if (h[j] != 0.0) throw NumericalError("innovation pinned by a deterministic state row", static_cast<long>(i));
        u[j] = 0.0;
      } else {
        u[j] = h[j] / s[j];
      }
    }
    // den = 1 + |u|^2, evaluated in scaled form to stay finite.
    const double umax = std::max(1.0, u.cwiseAbs().maxCoeff());
    const double scaled = 1.0 / (umax * umax) + (u / umax).squaredNorm();
    ec.var = 1.0 / (umax * umax * scaled);
    Eigen::VectorXd omega(d_);
    for (Index j = 0; j < d_; ++j) omega[j] = s[j] == 0.0 ? 0.0 : (u[j] / umax) / (umax * scaled * s[j]);
    ec.k = c_.F_inv.transpose() * (Rl.transpose() * omega);
    if (p_ > 0) ec.q = msg.R.topRightCorner(d_, p_).transpose() * omega;
    ec.mean = -msg.m.head(d_).dot(omega);
    if (!std::isfinite(ec.mean) || !std::isfinite(ec.var) || !ec.k.allFinite())
      throw NumericalError("non-finite innovation conditional", static_cast<long>(i));
    return ec;
  }

  // From r_{i+1} over [l_{i+1}; w] to r_i over [l_i; w].
  TriangularGaussian back_step(const TriangularGaussian& r, const EpsConditional& ec, const Eigen::VectorXd& g) {
    const Index col_old = d_;
    const Index col_w = 2 * d_;
    sys_.reset(2 * d_, 2 * d_ + p_);
    for (Index row = 0; row < d_; ++row) {
      for (Index j = row; j < d_; ++j) sys_.A(row, j) = r.R(row, j);
      for (Index j = 0; j < p_; ++j) sys_.A(row, col_w + j) = r.R(row, d_ + j);
      sys_.mean[row] = r.m[row];
      sys_.sd[row] = r.s[row];
    }
    const detail::Reflection refl(g);
    if (refl.active) {
      const Eigen::MatrixXd QF = refl.apply(c_.F);
      const Eigen::MatrixXd Q = refl.apply(Eigen::MatrixXd::Identity(d_, d_));
      for (Index row = 0; row < d_; ++row)
        for (Index j = 0; j < d_; ++j) {
          sys_.A(d_ + row, j) = Q(row, j);
          sys_.A(d_ + row, col_old + j) = -QF(row, j);
        }
      for (Index j = 0; j < d_; ++j) sys_.A(d_, j) -= refl.sigma * ec.k[j];
      for (Index j = 0; j < p_; ++j) sys_.A(d_, col_w + j) = -refl.sigma * ec.q[j];
      sys_.mean[d_] = refl.sigma * ec.mean;
      sys_.sd[d_] = std::abs(refl.sigma) * std::sqrt(ec.var);
    } else {
      for (Index row = 0; row < d_; ++row) {
        sys_.A(d_ + row, row) = 1.0;
        for (Index j = 0; j < d_; ++j) sys_.A(d_ + row, col_old + j) = -c_.F(row, j);
      }
    }
    for (Index j = 0; j < d_; ++j)
      for (Index row = d_; row < 2 * d_; ++row) sys_.eliminate(j, row, j);
    std::vector<Index> rowset;
    for (Index row = d_; row < 2 * d_; ++row) rowset.push_back(row);
    const auto piv = sys_.triangularize(rowset, col_old, col_old + d_);
    TriangularGaussian out;
    out.R = r.R;  // keeps the weight block as is
    out.m = r.m;
    out.s = r.s;
    for (Index c = 0; c < d_; ++c) {
      const Index row = piv[static_cast<size_t>(c)];
      out.R.row(c).setZero();
      for (Index j = c; j < d_; ++j) out.R(c, j) = sys_.A(row, col_old + j);
      for (Index j = 0; j < p_; ++j) out.R(c, d_ + j) = sys_.A(row, col_w + j);
      out.m[c] = sys_.mean[row];
      out.s[c] = sys_.sd[row];
    }
    return out;
  }

  void moments_y(const TriangularGaussian& r, const Eigen::VectorXd& mean, Index i, SmoothingResult& res) const {
    Eigen::VectorXd coef(n_);
    coef.head(d_) = c_.a.row(i).transpose();
    if (p_ > 0) coef.tail(p_) = c_.x.row(i).transpose();
    res.y_mean[i] = coef.dot(mean) + offset(i);
    res.y_var[i] = r.variance_of(coef);
  }

  const IssmCoefficients& c_;
  Index d_ = 0;
  Index T_ = 0;
  Index p_ = 0;
  Index n_ = 0;
  WeightPrior wprior_;
  StochasticSystem sys_;
};

inline ForwardState forward_filter(const IssmCoefficients& coefs, const GaussianObservations& obs) {
  SquareRootSmoother s(coefs);
  return s.forward(obs);
}

inline SmoothingResult backward_smooth(const IssmCoefficients& coefs, const ForwardState& fs) {
  SquareRootSmoother s(coefs);
  return s.smooth(fs);
}

inline SmoothingResult smooth(const IssmCoefficients& coefs, const GaussianObservations& obs) {
  SquareRootSmoother s(coefs);
  return s.smooth(s.forward(obs));
}

/// Joint smoothing over states and feature weights. The offsets in `coefs`
/// are ignored; the features `coefs.x` enter through the inferred weights.
inline SmoothingResult infer_with_weights(const IssmCoefficients& coefs, const GaussianObservations& obs,
                                          const WeightPrior& prior, ForwardState* forward_out = nullptr) {
  SquareRootSmoother s(coefs, &prior);
  ForwardState fs = s.forward(obs);
  SmoothingResult res = s.smooth(fs);
  if (forward_out) *forward_out = std::move(fs);
  return res;
}

/// y = M s + b for the path s = [eps; l0]: the forward image of a latent path.
/// With `include_offsets` false the offsets b are dropped.
inline Eigen::VectorXd project_path(const IssmCoefficients& c, const Eigen::VectorXd& eps, const Eigen::VectorXd& l0,
                                    bool include_offsets = true) {
  const Eigen::Index T = c.length();
  if (eps.size() != T - 1 || l0.size() != c.dim()) throw DataError("latent path has wrong shape");
  Eigen::VectorXd y(T);
  Eigen::VectorXd l = l0;
  for (Eigen::Index i = 0; i < T; ++i) {
    y[i] = c.a.row(i).dot(l) + (include_offsets ? c.b[i] : 0.0);
    if (i + 1 < T) l = c.F * l + c.g.row(i).transpose() * eps[i];
  }
  return y;
}

}  // namespace latentcast
