#pragma once

// Brute-force references built from the dense joint distribution of the
// latent path s = [eps_0..eps_{T-2}, l_0 (, w)]. Everything here is O(T^3)
// and only meant for small test instances.

#include <cmath>
#include <numbers>
#include <vector>

#include <Eigen/Dense>

#include "latentcast/gaussian_inference.hpp"
#include "latentcast/issm.hpp"

namespace oracle {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

/// y = M s + b with s = [eps; l0 (; w)].
struct DenseModel {
  MatrixXd M;       // T x ns
  MatrixXd G;       // d x ns, l_{T-1} = G s (without the offset)
  VectorXd b;       // offsets (zero in weight mode)
  VectorXd mu;      // prior mean of s
  VectorXd var;     // prior variances of s
  Index T = 0, d = 0, p = 0;
  Index n_eps() const { return T - 1; }
};

inline DenseModel build(const latentcast::IssmCoefficients& c, const latentcast::WeightPrior* wp = nullptr) {
  DenseModel m;
  m.T = c.length();
  m.d = c.dim();
  m.p = wp ? wp->mean.size() : 0;
  const Index ns = m.T - 1 + m.d + m.p;
  m.M = MatrixXd::Zero(m.T, ns);
  m.mu = VectorXd::Zero(ns);
  m.var = VectorXd::Ones(ns);
  m.mu.segment(m.T - 1, m.d) = c.prior_mean;
  m.var.segment(m.T - 1, m.d) = c.prior_std.array().square().matrix();
  if (wp) {
    m.mu.tail(m.p) = wp->mean;
    m.var.tail(m.p) = wp->std.array().square().matrix();
  }
  // dl/ds propagated along the path.
  MatrixXd L = MatrixXd::Zero(m.d, ns);
  L.block(0, m.T - 1, m.d, m.d).setIdentity();
  for (Index i = 0; i < m.T; ++i) {
    m.M.row(i) = c.a.row(i) * L;
    if (wp) m.M.row(i).tail(m.p) = c.x.row(i);
    if (i + 1 < m.T) {
      L = c.F * L;
      L.col(i) += c.g.row(i).transpose();
    }
  }
  m.G = L;
  m.b = wp ? VectorXd::Zero(m.T) : c.b;
  return m;
}

struct DensePosterior {
  VectorXd mean;  // of s
  MatrixXd cov;
  VectorXd y_mean;
  VectorXd y_var;
  double log_lik = 0.0;
  VectorXd final_mean;  // l_T
  MatrixXd final_cov;
};

inline std::vector<Index> observed_set(const latentcast::GaussianObservations& o) {
  std::vector<Index> idx;
  for (Index i = 0; i < o.size(); ++i)
    if (o.is_observed(i)) idx.push_back(i);
  return idx;
}

inline DensePosterior posterior(const DenseModel& m, const latentcast::GaussianObservations& obs,
                                const latentcast::IssmCoefficients& c) {
  const auto O = observed_set(obs);
  const Index no = static_cast<Index>(O.size());
  const Index ns = m.M.cols();
  const MatrixXd Sigma = m.var.asDiagonal();
  DensePosterior out;
  out.mean = m.mu;
  out.cov = Sigma;
  if (no > 0) {
    MatrixXd MO(no, ns);
    VectorXd zO(no), bO(no), vO(no);
    for (Index k = 0; k < no; ++k) {
      MO.row(k) = m.M.row(O[k]);
      zO[k] = obs.value[O[k]];
      bO[k] = m.b[O[k]];
      vO[k] = obs.variance[O[k]];
    }
    MatrixXd S = MO * Sigma * MO.transpose();
    S.diagonal() += vO;
    const Eigen::LDLT<MatrixXd> ldlt(S);
    const VectorXd resid = zO - MO * m.mu - bO;
    const MatrixXd K = Sigma * MO.transpose();
    out.mean = m.mu + K * ldlt.solve(resid);
    out.cov = Sigma - K * ldlt.solve(K.transpose());
    out.log_lik = -0.5 * no * std::log(2.0 * std::numbers::pi) - 0.5 * ldlt.vectorD().array().log().sum() -
                  0.5 * resid.dot(ldlt.solve(resid));
  }
  out.y_mean = m.M * out.mean + m.b;
  out.y_var = (m.M * out.cov * m.M.transpose()).diagonal();
  // l_T = F l_{T-1} + g_{T-1} eps_{T-1}
  const Index T = m.T;
  const MatrixXd GT = c.F * m.G;
  const VectorXd gT = c.g.row(T - 1).transpose();
  out.final_mean = GT * out.mean;
  out.final_cov = GT * out.cov * GT.transpose() + gT * gT.transpose();
  if (m.p > 0) {
    // stack the weights after the state
    VectorXd fm(m.d + m.p);
    fm.head(m.d) = out.final_mean;
    fm.tail(m.p) = out.mean.tail(m.p);
    MatrixXd J = MatrixXd::Zero(m.d + m.p, ns);
    J.topRows(m.d) = GT;
    J.bottomRightCorner(m.p, m.p).setIdentity();
    MatrixXd fc = J * out.cov * J.transpose();
    fc.topLeftCorner(m.d, m.d) += gT * gT.transpose();
    out.final_mean = fm;
    out.final_cov = fc;
  }
  return out;
}

inline double rel_err(double a, double b) { return std::abs(a - b) / std::max(1.0, std::max(std::abs(a), std::abs(b))); }

inline double max_rel_err(const VectorXd& a, const VectorXd& b) {
  double e = 0.0;
  for (Index i = 0; i < a.size(); ++i) e = std::max(e, rel_err(a[i], b[i]));
  return e;
}

inline double max_rel_err(const MatrixXd& a, const MatrixXd& b) {
  double e = 0.0;
  for (Index i = 0; i < a.rows(); ++i)
    for (Index j = 0; j < a.cols(); ++j) e = std::max(e, rel_err(a(i, j), b(i, j)));
  return e;
}

}  // namespace oracle
