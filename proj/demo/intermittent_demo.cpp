// Fits a level + day-of-week model to a synthetic intermittent demand series
// and prints weekly forecast quantiles.

#include <cstdio>
#include <random>

#include "latentcast/latentcast.hpp"

using namespace latentcast;

int main() {
  const Eigen::Index T = 180;
  std::mt19937_64 rng(2024);
  std::normal_distribution<double> nd(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.0, 1.0);

  // Slowly wandering demand rate with occasional bursts and a weekend dip.
  Eigen::VectorXd z(T), avail = Eigen::VectorXd::Ones(T);
  double level = 0.0;
  std::poisson_distribution<int> burst(6);
  for (Eigen::Index t = 0; t < T; ++t) {
    level += 0.05 * nd(rng);
    const double rate = std::exp(level - (t % 7 >= 5 ? 1.0 : 0.0)) * 0.6;
    std::poisson_distribution<int> pd(rate);
    z[t] = pd(rng) + (u(rng) < 0.03 ? burst(rng) : 0);
    if (t >= 120 && t < 130) avail[t] = 0.0;  // out of stock
  }

  const CompositeIssm issm = compose({make_level(), make_seasonality(SeasonalityPattern::day_of_week())});
  const SeriesDesign design = SeriesDesign::plain(T);
  const auto data = make_likelihood_data(LikelihoodPotential::poisson(TransferFunction::twice_logistic()), z, avail);

  const StageFit fitted = fit(issm, design, data);
  std::printf("training: %s after %d iterations (%.3fs)\n", fitted.status.c_str(), fitted.iterations, fitted.seconds);
  const ParameterCodec codec(issm, fitted.lik);
  const auto& p = fitted.params;
  std::printf("alpha = %.4f  gamma = %.4f  mu0(level) = %.3f\n", p.strengths[0], p.strengths[1], p.prior_mean[0]);

  const int H = 28;
  const FinalStatePosterior post = final_state_posterior(issm, design, data, fitted);
  const ForecastSamples s = sample_paths(issm, post, H, 1000, Eigen::MatrixXd::Zero(H, 0), 7);
  std::printf("\nweek  P10   P50   P90   (sum of demand)\n");
  for (int w = 0; w < H / 7; ++w)
    std::printf("%4d %5.0f %5.0f %5.0f\n", w + 1, s.span_quantile(7 * w, 7, 0.1), s.span_quantile(7 * w, 7, 0.5),
                s.span_quantile(7 * w, 7, 0.9));
  std::printf("\nlast four weeks observed:");
  for (int w = 0; w < 4; ++w) std::printf(" %.0f", z.segment(T - 28 + 7 * w, 7).sum());
  std::printf("\n");
}
