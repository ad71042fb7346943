#pragma once

// Synthetic series drawn from the state space model plus the configured
// likelihood, with the generating parameters kept as ground truth.

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "latentcast/cli/config.hpp"
#include "latentcast/cli/data.hpp"
#include "latentcast/cli/serialize.hpp"
#include "latentcast/forecast.hpp"
#include "latentcast/issm.hpp"

namespace latentcast::cli {

struct SeriesTruth {
  std::vector<ModelParameters> params;  // one per stage
  std::vector<Eigen::VectorXd> latent;  // y_t per stage, before the likelihood
  bool poisoned = false;
};

struct Simulation {
  Dataset data;
  std::map<std::string, SeriesTruth> truth;
};

/// Number of calendar columns the model reads.
inline int calendar_columns_needed(const RunConfig& cfg) {
  int n = 0;
  for (const auto& c : cfg.components)
    if (c.pattern && c.pattern->calendar_column >= 0) n = std::max(n, c.pattern->calendar_column + 1);
  return n;
}

inline ModelParameters truth_parameters(const CompositeIssm& issm, const SimulationConfig& sim, double level,
                                        Eigen::VectorXd weights) {
  ModelParameters p;
  p.weights = std::move(weights);
  p.strengths = Eigen::VectorXd::Constant(issm.num_strengths(), sim.strength);
  p.prior_mean = Eigen::VectorXd::Zero(issm.dim());
  p.prior_std_slots = Eigen::VectorXd::Constant(issm.num_std_slots(), sim.prior_std);
  p.likelihood_variance = sim.variance;
  for (size_t c = 0; c < issm.components().size(); ++c) {
    const auto& comp = issm.components()[c];
    const int off = issm.dim_offset(c);
    if (comp.kind == ComponentKind::Level || comp.kind == ComponentKind::LevelTrend) {
      p.prior_mean[off] = level;
    } else if (comp.kind == ComponentKind::Seasonality) {
      for (int h = 0; h < comp.dim; ++h)
        p.prior_mean[off + h] = sim.seasonal_amplitude * std::sin(2.0 * std::numbers::pi * h / comp.dim);
    }
  }
  return p;
}

/// Latent path y_t = a_t' l_t + b_t (+ drifting day shape), l_0 ~ N(mu, diag(sigma^2)).
template <class Rng>
Eigen::VectorXd simulate_latent(const IssmCoefficients& c, const SimulationConfig& sim, long start, Rng& rng) {
  std::normal_distribution<double> nd(0.0, 1.0);
  const Eigen::Index T = c.length();
  Eigen::VectorXd l(c.dim());
  for (Eigen::Index j = 0; j < c.dim(); ++j) l[j] = c.prior_mean[j] + c.prior_std[j] * nd(rng);
  Eigen::VectorXd y(T);
  for (Eigen::Index t = 0; t < T; ++t) {
    y[t] = c.a.row(t).dot(l) + c.b[t];
    if (sim.amplitude_drift != 0.0) {
      const long abs_t = start + static_cast<long>(t);
      const double hour = static_cast<double>(((abs_t % 24) + 24) % 24);
      y[t] += sim.amplitude_drift * (static_cast<double>(t) / 24.0) * std::sin(2.0 * std::numbers::pi * hour / 24.0);
    }
    l = c.F * l + c.g.row(t).transpose() * nd(rng);
  }
  return y;
}

/// Targets as stored in the data file; binary series are written as 0/1.
template <class Rng>
double draw_target(const LikelihoodPotential& lik, double y, Rng& rng) {
  if (lik.kind == LikelihoodKind::Gaussian && lik.variance == 0.0) return y;
  const double v = lik.sample(y, rng);
  return lik.kind == LikelihoodKind::BernoulliLogistic ? 0.5 * (v + 1.0) : v;
}

inline Simulation simulate(const RunConfig& cfg, std::uint64_t seed) {
  if (!cfg.simulate) throw ConfigError("config.simulate is missing");
  const SimulationConfig& sim = *cfg.simulate;
  const CompositeIssm issm = cfg.build_issm(sim.num_features);
  const int ncal = calendar_columns_needed(cfg);
  const int poisoned = static_cast<int>(std::lround(sim.poison_fraction * sim.items));
  if (poisoned > 0 && sim.num_features < 1)
    throw ConfigError("config.simulate.poison_fraction needs at least one feature");

  Simulation out;
  for (int f = 0; f < sim.num_features; ++f) out.data.feature_names.push_back(std::to_string(f));
  for (int k = 0; k < ncal; ++k) out.data.season_names.push_back(std::to_string(k));

  const int digits = static_cast<int>(std::to_string(sim.items - 1).size());
  for (int i = 0; i < sim.items; ++i) {
    std::mt19937_64 rng(path_seed(seed, static_cast<std::uint64_t>(i)));
    std::normal_distribution<double> nd(0.0, 1.0);
    std::string id = std::to_string(i);
    id = "item_" + std::string(static_cast<size_t>(digits) - id.size(), '0') + id;

    Series s;
    s.item_id = id;
    s.start = sim.start;
    s.features.resize(sim.length, sim.num_features);
    for (Eigen::Index t = 0; t < s.features.rows(); ++t)
      for (Eigen::Index j = 0; j < s.features.cols(); ++j) s.features(t, j) = nd(rng);
    s.calendar.assign(static_cast<size_t>(ncal), std::vector<int>(static_cast<size_t>(sim.length), 0));
    for (const auto& c : cfg.components) {
      if (!c.pattern || c.pattern->calendar_column < 0) continue;
      for (int t = 0; t < sim.length; ++t)
        s.calendar[static_cast<size_t>(c.pattern->calendar_column)][static_cast<size_t>(t)] =
            c.pattern->periodic_atomic(sim.start + t);
    }
    Eigen::VectorXd w(issm.feature_dim());
    for (Eigen::Index j = 0; j < w.size(); ++j) w[j] = sim.weight_std * nd(rng);

    SeriesTruth truth;
    s.z = Eigen::VectorXd::Zero(sim.length);
    s.availability = Eigen::VectorXd::Ones(sim.length);
    const SeriesDesign design = s.design();
    if (cfg.multi_stage()) {
      for (int k = 0; k < 3; ++k) {
        truth.params.push_back(truth_parameters(issm, sim, sim.stage_levels[static_cast<size_t>(k)], w));
        truth.latent.push_back(simulate_latent(issm.materialize(truth.params.back(), design), sim, sim.start, rng));
      }
      const TransferFunction tf = cfg.transfer();
      for (int t = 0; t < sim.length; ++t)
        s.z[t] = sample_multi_stage(truth.latent[0][t], truth.latent[1][t], truth.latent[2][t], tf, rng);
    } else {
      truth.params.push_back(truth_parameters(issm, sim, sim.level, w));
      truth.params.back().likelihood_variance = sim.variance;
      truth.latent.push_back(simulate_latent(issm.materialize(truth.params.back(), design), sim, sim.start, rng));
      LikelihoodPotential lik = cfg.potential();
      lik.variance = sim.variance;
      for (int t = 0; t < sim.length; ++t) s.z[t] = draw_target(lik, truth.latent[0][t], rng);
    }
    for (const auto& win : sim.oos_windows)
      for (Eigen::Index t = win.lead; t < std::min<Eigen::Index>(win.lead + win.length, sim.length); ++t) {
        s.availability[t] = 0.0;
        s.z[t] = 0.0;
      }
    if (i < poisoned) {
      s.features(0, 0) = std::numeric_limits<double>::quiet_NaN();
      truth.poisoned = true;
    }
    out.truth.emplace(id, std::move(truth));
    out.data.items.emplace(id, std::move(s));
  }
  return out;
}

inline json truth_to_json(const Simulation& sim) {
  json j = json::object();
  for (const auto& [id, t] : sim.truth) {
    json stages = json::array();
    for (size_t k = 0; k < t.params.size(); ++k)
      stages.push_back({{"parameters", to_json(t.params[k])}, {"latent", to_json(t.latent[k])}});
    j[id] = {{"stages", stages}, {"poisoned", t.poisoned}};
  }
  return j;
}

}  // namespace latentcast::cli
