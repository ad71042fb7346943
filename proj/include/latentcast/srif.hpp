#pragma once

// Linear systems A x = c with independent Gaussian right-hand sides
// c_i ~ N(m_i, s_i^2), kept in standard-deviation form. Elimination keeps the
// right-hand sides independent, so a triangularized system is a factorized
// Gaussian over x.

#include <cmath>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "latentcast/errors.hpp"

namespace latentcast {

class StochasticSystem {
 public:
  using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using Index = Eigen::Index;

  RowMatrix A;
  Eigen::VectorXd mean;
  Eigen::VectorXd sd;

  void reset(Index rows, Index cols) {
    if (A.rows() != rows || A.cols() != cols) {
      A.resize(rows, cols);
      mean.resize(rows);
      sd.resize(rows);
    }
    A.setZero();
    mean.setZero();
    sd.setZero();
  }

  Index rows() const { return A.rows(); }
  Index cols() const { return A.cols(); }

  /// Zeroes A(i, c) using pivot row p, which must have A(p, c) == 1 and zeros
  /// left of c (as must row i). Both rows change: the pivot absorbs a share of
  /// row i so that the two right-hand sides stay uncorrelated.
  void eliminate(Index p, Index i, Index c) {
    double* rp = A.data() + p * A.cols();
    double* ri = A.data() + i * A.cols();
    const double a = ri[c];
    if (a == 0.0) return;
    const Index n = A.cols();
    const double s1 = sd[p];
    const double si = sd[i];
    if (s1 == 0.0) {
      for (Index j = c + 1; j < n; ++j) ri[j] -= a * rp[j];
      mean[i] -= a * mean[p];
      ri[c] = 0.0;
      return;
    }
    const double as1 = a * s1;
    double w1, wi, s1_new, si_new;
    if (si > std::abs(as1)) {
      const double alpha = as1 / si;
      const double den = 1.0 + alpha * alpha;
      const double root = std::sqrt(den);
      w1 = 1.0 / den;
      wi = alpha * (s1 / si) / den;
      s1_new = s1 / root;
      si_new = si * root;
    } else {
      const double beta = si / as1;
      const double den = 1.0 + beta * beta;
      const double root = std::sqrt(den);
      w1 = beta * beta / den;
      wi = (1.0 / a) / den;
      si_new = std::abs(as1) * root;
      s1_new = std::abs(beta) * s1 / root;
    }
    for (Index j = c + 1; j < n; ++j) {
      const double x1 = rp[j];
      const double xi = ri[j];
      rp[j] = w1 * x1 + wi * xi;
      ri[j] = xi - a * x1;
    }
    const double m1 = mean[p];
    const double mi = mean[i];
    mean[p] = w1 * m1 + wi * mi;
    mean[i] = mi - a * m1;
    sd[p] = s1_new;
    sd[i] = si_new;
    rp[c] = 1.0;
    ri[c] = 0.0;
  }

  /// Scales row r so that A(r, c) == 1 (entries left of c must be zero).
  void normalize(Index r, Index c) {
    double* row = A.data() + r * A.cols();
    const double piv = row[c];
    const double inv = 1.0 / piv;
    for (Index j = c + 1; j < A.cols(); ++j) row[j] *= inv;
    row[c] = 1.0;
    mean[r] *= inv;
    sd[r] /= std::abs(piv);
  }

  /// Brings `rows` to unit upper-triangular form over columns [c0, c1), taking
  /// the largest remaining entry of each column as pivot. Returns the pivot
  /// row of each column in order. Rows that are not chosen as pivots keep
  /// zeros in [c0, c1).
  std::vector<Index> triangularize(std::vector<Index> rows, Index c0, Index c1) {
    std::vector<Index> pivots;
    pivots.reserve(static_cast<size_t>(c1 - c0));
    for (Index c = c0; c < c1; ++c) {
      size_t best = rows.size();
      double best_abs = 0.0;
      for (size_t k = 0; k < rows.size(); ++k) {
        const double v = std::abs(A(rows[k], c));
        if (v > best_abs) {
          best_abs = v;
          best = k;
        }
      }
      if (best == rows.size() || !std::isfinite(best_abs)) throw NumericalError("singular stochastic equation system");
      const Index p = rows[best];
      rows.erase(rows.begin() + static_cast<long>(best));
      normalize(p, c);
      for (Index r : rows) eliminate(p, r, c);
      pivots.push_back(p);
    }
    return pivots;
  }
};

/// Gaussian over x given by R x = c, c ~ N(m, diag(s^2)), R unit upper triangular.
struct TriangularGaussian {
  Eigen::MatrixXd R;
  Eigen::VectorXd m;
  Eigen::VectorXd s;

  Eigen::Index dim() const { return R.rows(); }

  Eigen::VectorXd mean() const { return R.triangularView<Eigen::UnitUpper>().solve(m); }

  /// Var[c' x].
  double variance_of(const Eigen::VectorXd& coef) const {
    const Eigen::VectorXd t = R.transpose().triangularView<Eigen::UnitLower>().solve(coef);
    return t.cwiseProduct(s).squaredNorm();
  }

  Eigen::MatrixXd covariance() const {
    Eigen::MatrixXd B = R.triangularView<Eigen::UnitUpper>().solve(Eigen::MatrixXd(s.asDiagonal()));
    return B * B.transpose();
  }

  template <class Rng>
  Eigen::VectorXd sample(Rng& rng) const {
    std::normal_distribution<double> nd(0.0, 1.0);
    Eigen::VectorXd c(m.size());
    for (Eigen::Index i = 0; i < m.size(); ++i) c[i] = m[i] + s[i] * nd(rng);
    return R.triangularView<Eigen::UnitUpper>().solve(c);
  }
};

}  // namespace latentcast
