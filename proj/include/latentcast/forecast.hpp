#pragma once

// Sample-path forecasts: Gaussian posterior over the last latent state, then
// forward simulation of innovations and emissions.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "latentcast/errors.hpp"
#include "latentcast/gaussian_inference.hpp"
#include "latentcast/issm.hpp"
#include "latentcast/likelihood.hpp"
#include "latentcast/mode_finding.hpp"
#include "latentcast/training.hpp"

namespace latentcast {

/// Posterior over l_T for one stage, with what is needed to simulate onwards.
struct FinalStatePosterior {
  TriangularGaussian state;
  ModelParameters params;
  LikelihoodPotential lik;
  long next_time = 0;  // absolute index of the first forecast step
};

/// Runs mode finding at the stage's parameters and takes the smoother's
/// final-state marginal. Without observations this is the prior pushed
/// through the transitions.
inline FinalStatePosterior final_state_posterior(const CompositeIssm& issm, const SeriesDesign& design,
                                                 const LikelihoodData& data, const StageFit& stage,
                                                 const ModeOptions& mode_options = {}) {
  FinalStatePosterior out;
  out.params = stage.params;
  out.lik = stage.lik;
  out.next_time = design.start + static_cast<long>(design.length);
  const IssmCoefficients coefs = issm.materialize(stage.params, design);
  GaussianObservations obs = GaussianObservations::missing(design.length);
  if (data.num_observed() > 0) {
    LikelihoodData d = data;
    d.lik = stage.lik;
    obs = find_mode(coefs, d, mode_options).gaussianized;
  }
  out.state = smooth(coefs, obs).final_state;
  return out;
}

/// Parameters of a stage that failed to train are replaced by the
/// regularizer center, as for series with too little data.
inline StageFit usable_stage(const CompositeIssm& issm, const StageFit& stage, const TrainingConfig& cfg = {}) {
  if (stage.ok() && stage.theta.size() > 0) return stage;
  StageFit s = stage;
  const ParameterCodec codec(issm, stage.lik);
  s.theta = cfg.reg_center ? *cfg.reg_center
                           : codec.center(cfg.default_strength, cfg.default_prior_std, cfg.default_variance);
  s.params = codec.decode(s.theta);
  s.lik = codec.likelihood_for(stage.lik, s.params);
  s.fallback = true;
  return s;
}

/// Deterministic per-path seed: splitmix64 of (root seed xor path index).
inline std::uint64_t path_seed(std::uint64_t root, std::uint64_t path) {
  std::uint64_t z = (root ^ path) + 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// n_paths x horizon array of sampled values.
struct ForecastSamples {
  Eigen::MatrixXd paths;
  long start = 0;

  Eigen::Index num_paths() const { return paths.rows(); }
  Eigen::Index horizon() const { return paths.cols(); }

  /// Per-path sums over steps [lead, lead + span).
  Eigen::VectorXd span_sums(Eigen::Index lead, Eigen::Index span) const {
    if (lead < 0 || span < 1 || lead + span > horizon())
      throw RangeError("span [" + std::to_string(lead) + ", " + std::to_string(lead + span) +
                       ") outside the forecast horizon of " + std::to_string(horizon()));
    return paths.middleCols(lead, span).rowwise().sum();
  }

  /// Order statistic ceil(rho * n) (1-based) of the span sums.
  double span_quantile(Eigen::Index lead, Eigen::Index span, double rho) const {
    if (!(rho > 0.0 && rho < 1.0)) throw ConfigError("quantile level must lie in (0, 1)");
    Eigen::VectorXd z = span_sums(lead, span);
    std::vector<double> v(z.data(), z.data() + z.size());
    if (v.empty()) throw RangeError("no sample paths");
    std::sort(v.begin(), v.end());
    auto k = static_cast<size_t>(std::ceil(rho * static_cast<double>(v.size())));
    k = std::clamp<size_t>(k, 1, v.size());
    return v[k - 1];
  }
};

namespace detail {

/// Horizon design continuing `design`: features for the forecast steps and
/// optional calendar columns.
inline SeriesDesign horizon_design(long next_time, Eigen::Index horizon, const Eigen::MatrixXd& features,
                                   const std::vector<std::vector<int>>& calendar) {
  SeriesDesign h;
  h.start = next_time;
  h.length = horizon;
  h.features = features;
  h.calendar = calendar;
  return h;
}

}  // namespace detail

/// Forward simulation of one stage. `future_features` is horizon x p.
inline ForecastSamples sample_paths(const CompositeIssm& issm, const FinalStatePosterior& post, Eigen::Index horizon,
                                    int n_paths, const Eigen::MatrixXd& future_features, std::uint64_t seed,
                                    const std::vector<std::vector<int>>& future_calendar = {}) {
  if (horizon < 1 || n_paths < 1) throw ConfigError("horizon and path count must be positive");
  if (future_features.rows() != horizon || future_features.cols() != issm.feature_dim())
    throw DataError("future features do not cover the forecast horizon");
  const IssmCoefficients c =
      issm.materialize(post.params, detail::horizon_design(post.next_time, horizon, future_features, future_calendar));
  ForecastSamples out;
  out.start = post.next_time;
  out.paths.resize(n_paths, horizon);
  for (int p = 0; p < n_paths; ++p) {
    std::mt19937_64 rng(path_seed(seed, static_cast<std::uint64_t>(p)));
    std::normal_distribution<double> nd(0.0, 1.0);
    Eigen::VectorXd l = post.state.sample(rng).head(c.dim());
    for (Eigen::Index h = 0; h < horizon; ++h) {
      const double y = c.a.row(h).dot(l) + c.b[h];
      out.paths(p, h) = post.lik.sample(y, rng);
      l = c.F * l + c.g.row(h).transpose() * nd(rng);
    }
  }
  return out;
}

/// Draws a count from the three-stage emission at latent values (y0, y1, y2).
template <class Rng>
double sample_multi_stage(double y0, double y1, double y2, const TransferFunction& tf, Rng& rng) {
  std::bernoulli_distribution zero(detail::sigmoid(y0));
  if (zero(rng)) return 0.0;
  std::bernoulli_distribution one(detail::sigmoid(y1));
  if (one(rng)) return 1.0;
  const double lambda = tf.rate(y2);
  if (!(lambda > 0.0)) return 2.0;
  std::poisson_distribution<std::int64_t> pd(lambda);
  return 2.0 + static_cast<double>(pd(rng));
}

/// Joint simulation of the three count stages; `posts` holds stages 0, 1, 2.
inline ForecastSamples multi_stage_sample(const CompositeIssm& issm, const std::vector<FinalStatePosterior>& posts,
                                          Eigen::Index horizon, int n_paths, const Eigen::MatrixXd& future_features,
                                          std::uint64_t seed, const TransferFunction& transfer,
                                          const std::vector<std::vector<int>>& future_calendar = {}) {
  if (posts.size() != 3) throw ConfigError("multi-stage sampling needs three stages");
  if (horizon < 1 || n_paths < 1) throw ConfigError("horizon and path count must be positive");
  if (future_features.rows() != horizon || future_features.cols() != issm.feature_dim())
    throw DataError("future features do not cover the forecast horizon");
  std::vector<IssmCoefficients> coefs;
  for (const auto& p : posts)
    coefs.push_back(
        issm.materialize(p.params, detail::horizon_design(p.next_time, horizon, future_features, future_calendar)));
  ForecastSamples out;
  out.start = posts[0].next_time;
  out.paths.resize(n_paths, horizon);
  for (int p = 0; p < n_paths; ++p) {
    std::mt19937_64 rng(path_seed(seed, static_cast<std::uint64_t>(p)));
    std::normal_distribution<double> nd(0.0, 1.0);
    std::vector<Eigen::VectorXd> l;
    for (size_t k = 0; k < 3; ++k) l.push_back(posts[k].state.sample(rng).head(coefs[k].dim()));
    for (Eigen::Index h = 0; h < horizon; ++h) {
      double y[3];
      for (size_t k = 0; k < 3; ++k) y[k] = coefs[k].a.row(h).dot(l[k]) + coefs[k].b[h];
      out.paths(p, h) = sample_multi_stage(y[0], y[1], y[2], transfer, rng);
      for (size_t k = 0; k < 3; ++k) l[k] = coefs[k].F * l[k] + coefs[k].g.row(h).transpose() * nd(rng);
    }
  }
  return out;
}

}  // namespace latentcast
