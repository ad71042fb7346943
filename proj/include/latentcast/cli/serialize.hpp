#pragma once

// JSON conversions for parameters, posteriors and metric records.

#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "latentcast/errors.hpp"
#include "latentcast/evaluation.hpp"
#include "latentcast/forecast.hpp"
#include "latentcast/issm.hpp"
#include "latentcast/srif.hpp"
#include "latentcast/training.hpp"

namespace latentcast::cli {

using nlohmann::json;

inline json to_json(const Eigen::VectorXd& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(std::isfinite(v[i]) ? json(v[i]) : json(nullptr));
  return a;
}

inline json to_json(const Eigen::MatrixXd& m) {
  json a = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) a.push_back(to_json(Eigen::VectorXd(m.row(i).transpose())));
  return a;
}

inline Eigen::VectorXd vector_from(const json& j, const std::string& what) {
  if (!j.is_array()) throw DataError(what + ": expected an array");
  Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
  for (size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number()) throw DataError(what + ": expected numbers");
    v[static_cast<Eigen::Index>(i)] = j[i].get<double>();
  }
  return v;
}

inline Eigen::MatrixXd matrix_from(const json& j, const std::string& what) {
  if (!j.is_array()) throw DataError(what + ": expected an array of rows");
  if (j.empty()) return Eigen::MatrixXd(0, 0);
  const auto cols = static_cast<Eigen::Index>(j[0].size());
  Eigen::MatrixXd m(static_cast<Eigen::Index>(j.size()), cols);
  for (size_t i = 0; i < j.size(); ++i) {
    const Eigen::VectorXd r = vector_from(j[i], what);
    if (r.size() != cols) throw DataError(what + ": ragged rows");
    m.row(static_cast<Eigen::Index>(i)) = r.transpose();
  }
  return m;
}

inline json to_json(const ModelParameters& p) {
  return {{"weights", to_json(p.weights)},
          {"strengths", to_json(p.strengths)},
          {"prior_mean", to_json(p.prior_mean)},
          {"prior_std", to_json(p.prior_std_slots)},
          {"likelihood_variance", p.likelihood_variance}};
}

inline ModelParameters parameters_from(const json& j) {
  ModelParameters p;
  p.weights = vector_from(j.at("weights"), "weights");
  p.strengths = vector_from(j.at("strengths"), "strengths");
  p.prior_mean = vector_from(j.at("prior_mean"), "prior_mean");
  p.prior_std_slots = vector_from(j.at("prior_std"), "prior_std");
  p.likelihood_variance = j.at("likelihood_variance").get<double>();
  return p;
}

inline json to_json(const TriangularGaussian& g) {
  return {{"R", to_json(g.R)}, {"m", to_json(g.m)}, {"s", to_json(g.s)}};
}

inline TriangularGaussian triangular_from(const json& j) {
  TriangularGaussian g;
  g.R = matrix_from(j.at("R"), "R");
  g.m = vector_from(j.at("m"), "m");
  g.s = vector_from(j.at("s"), "s");
  if (g.R.rows() != g.R.cols() || g.m.size() != g.R.rows() || g.s.size() != g.R.rows())
    throw DataError("state posterior has inconsistent dimensions");
  return g;
}

/// Wall-clock time is left to the timing report so that parameter files are reproducible.
inline json to_json(const StageFit& f, const std::vector<std::string>& names) {
  json j = {{"stage", f.stage},
            {"likelihood", to_string(f.lik.kind)},
            {"fallback", f.fallback},
            {"converged", f.converged},
            {"iterations", f.iterations},
            {"evaluations", f.evaluations},
            {"status", f.status}};
  if (f.error) j["error"] = *f.error;
  if (f.theta.size() > 0) {
    j["theta"] = to_json(f.theta);
    j["parameters"] = to_json(f.params);
    j["parameter_names"] = names;
    if (std::isfinite(f.psi)) j["objective"] = f.psi;
  }
  return j;
}

inline json to_json(const MetricRecord& m) {
  json j = {{"metric", m.metric}, {"rho", m.rho}, {"lead", m.lead}, {"span", m.span}, {"n_items", m.n_items}};
  j["value"] = m.value ? json(*m.value) : json(nullptr);
  return j;
}

}  // namespace latentcast::cli
