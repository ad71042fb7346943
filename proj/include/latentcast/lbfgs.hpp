#pragma once

// Limited-memory BFGS with backtracking (Armijo) line search. Evaluations
// that throw are treated as +inf and rejected; too many in a row ends the run.

#include <cmath>
#include <deque>
#include <exception>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace latentcast {

struct LbfgsOptions {
  int memory = 10;
  int max_iterations = 55;
  double grad_tol = 1e-5;  // on the sup norm
  double rel_tol = 1e-10;  // relative decrease of f
  double armijo = 1e-4;
  double shrink = 0.5;
  int max_backtracks = 30;
  int max_rejections = 5;  // consecutive failed evaluations
};

struct LbfgsResult {
  Eigen::VectorXd x;
  double f = 0.0;
  Eigen::VectorXd grad;
  int iterations = 0;
  int evaluations = 0;
  int rejections = 0;
  bool converged = false;
  std::string status;
  std::vector<double> f_trace;
  std::vector<double> grad_norm_trace;
  std::string last_error;
};

/// Minimizes f. `fn(x, grad)` returns f(x) and writes the gradient.
/// The starting point must evaluate; its exception propagates.
template <class Fn>
LbfgsResult lbfgs_minimize(Fn&& fn, Eigen::VectorXd x0, const LbfgsOptions& opt = {}) {
  LbfgsResult res;
  const Eigen::Index n = x0.size();
  res.x = std::move(x0);
  res.grad.resize(n);
  res.f = fn(res.x, res.grad);
  ++res.evaluations;
  if (!std::isfinite(res.f) || !res.grad.allFinite()) throw std::runtime_error("objective is not finite at the starting point");
  res.f_trace.push_back(res.f);
  res.grad_norm_trace.push_back(n ? res.grad.cwiseAbs().maxCoeff() : 0.0);

  std::deque<Eigen::VectorXd> S, Y;
  std::deque<double> rho;
  int consecutive_failures = 0;

  for (;;) {
    const double gnorm = n ? res.grad.cwiseAbs().maxCoeff() : 0.0;
    if (gnorm < opt.grad_tol) {
      res.converged = true;
      res.status = "gradient tolerance reached";
      return res;
    }
    if (res.iterations >= opt.max_iterations) {
      res.status = "iteration limit reached";
      return res;
    }

    // Two-loop recursion.
    Eigen::VectorXd q = res.grad;
    std::vector<double> alpha(S.size());
    for (int k = static_cast<int>(S.size()) - 1; k >= 0; --k) {
      alpha[static_cast<size_t>(k)] = rho[static_cast<size_t>(k)] * S[static_cast<size_t>(k)].dot(q);
      q -= alpha[static_cast<size_t>(k)] * Y[static_cast<size_t>(k)];
    }
    double gamma = 1.0;
    if (!S.empty()) gamma = S.back().dot(Y.back()) / Y.back().squaredNorm();
    else gamma = 1.0 / std::max(1.0, res.grad.norm());
    Eigen::VectorXd dir = gamma * q;
    for (size_t k = 0; k < S.size(); ++k) {
      const double beta = rho[k] * Y[k].dot(dir);
      dir += S[k] * (alpha[k] - beta);
    }
    dir = -dir;
    double slope = res.grad.dot(dir);
    if (!(slope < 0.0)) {
      S.clear();
      Y.clear();
      rho.clear();
      dir = -res.grad / std::max(1.0, res.grad.norm());
      slope = res.grad.dot(dir);
    }

    double t = 1.0;
    bool accepted = false;
    Eigen::VectorXd x_new, g_new(n);
    double f_new = 0.0;
    for (int k = 0; k <= opt.max_backtracks; ++k) {
      x_new = res.x + t * dir;
      bool ok = true;
      try {
        f_new = fn(x_new, g_new);
        ++res.evaluations;
        ok = std::isfinite(f_new) && g_new.allFinite();
        if (!ok) res.last_error = "non-finite objective";
      } catch (const std::exception& e) {
        ++res.evaluations;
        ok = false;
        res.last_error = e.what();
      }
      if (!ok) {
        ++res.rejections;
        if (++consecutive_failures >= opt.max_rejections) {
          res.status = "aborted after repeated evaluation failures";
          return res;
        }
        t *= opt.shrink;
        continue;
      }
      consecutive_failures = 0;
      if (f_new <= res.f + opt.armijo * t * slope) {
        accepted = true;
        break;
      }
      t *= opt.shrink;
    }
    if (!accepted) {
      res.status = "line search failed";
      return res;
    }

    const Eigen::VectorXd s = x_new - res.x;
    const Eigen::VectorXd y = g_new - res.grad;
    const double sy = s.dot(y);
    if (sy > 1e-12 * s.norm() * y.norm() && sy > 0.0) {
      S.push_back(s);
      Y.push_back(y);
      rho.push_back(1.0 / sy);
      if (static_cast<int>(S.size()) > opt.memory) {
        S.pop_front();
        Y.pop_front();
        rho.pop_front();
      }
    }
    const double f_old = res.f;
    res.x = x_new;
    res.f = f_new;
    res.grad = g_new;
    ++res.iterations;
    res.f_trace.push_back(res.f);
    res.grad_norm_trace.push_back(n ? res.grad.cwiseAbs().maxCoeff() : 0.0);
    if (std::abs(f_old - res.f) <= opt.rel_tol * std::max(1.0, std::abs(res.f))) {
      res.converged = true;
      res.status = "relative decrease below tolerance";
      return res;
    }
  }
}

}  // namespace latentcast
