#pragma once

// Quantile loss and span risk with in-stock filtering.

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "latentcast/errors.hpp"
#include "latentcast/forecast.hpp"

namespace latentcast {

inline void check_quantile_level(double rho) {
  if (!(rho > 0.0 && rho < 1.0)) throw ConfigError("quantile level must lie in (0, 1)");
}

/// 2 (z - zhat) (rho 1{z > zhat} - (1 - rho) 1{z <= zhat}); equals |z - zhat| at rho = 0.5.
inline double quantile_loss(double z, double z_hat, double rho) {
  check_quantile_level(rho);
  const double diff = z - z_hat;
  return 2.0 * diff * (z > z_hat ? rho : -(1.0 - rho));
}

struct Span {
  Eigen::Index lead = 0;  // L, 0-based offset into the forecast range
  Eigen::Index length = 1;  // S
};

struct EvaluationSpec {
  std::vector<Span> spans;
  std::vector<double> quantiles{0.5, 0.9};
  double in_stock_fraction = 0.8;

  void validate() const {
    for (double r : quantiles) check_quantile_level(r);
    for (const auto& s : spans)
      if (s.lead < 0 || s.length < 1) throw ConfigError("spans need L >= 0 and S >= 1");
    if (!(in_stock_fraction > 0.0 && in_stock_fraction <= 1.0))
      throw ConfigError("in-stock threshold must lie in (0, 1]");
  }
};

struct RiskValue {
  double value = 0.0;
  int n_items = 0;
};

/// Per-item data over the evaluation range: realized values and availability
/// aligned with forecast step 0.
struct EvaluationItem {
  Eigen::VectorXd actual;
  Eigen::VectorXd in_stock;
};

namespace detail {

/// Availability is fractional in the data; the filter counts a day as in
/// stock when its availability is at least one half.
inline bool passes_filter(const EvaluationItem& it, const Span& s, double fraction) {
  int days = 0;
  for (Eigen::Index t = s.lead; t < s.lead + s.length; ++t) days += it.in_stock[t] >= 0.5 ? 1 : 0;
  return static_cast<double>(days) >= fraction * static_cast<double>(s.length);
}

inline void check_item(const EvaluationItem& it, const Span& s) {
  if (it.actual.size() != it.in_stock.size()) throw DataError("actuals and availability differ in length");
  if (s.lead < 0 || s.length < 1 || s.lead + s.length > it.actual.size())
    throw RangeError("span [" + std::to_string(s.lead) + ", " + std::to_string(s.lead + s.length) +
                     ") outside the evaluation range of " + std::to_string(it.actual.size()));
}

}  // namespace detail

/// Availability-weighted span total Z = sum_t pi_t z_t.
inline double span_total(const EvaluationItem& it, const Span& s) {
  detail::check_item(it, s);
  return (it.in_stock.segment(s.lead, s.length).array() * it.actual.segment(s.lead, s.length).array()).sum();
}

/// Mean quantile loss over the items passing the in-stock filter, with the
/// ρ-quantile predictions given per item. Empty when no item passes.
inline std::optional<RiskValue> risk(const std::vector<EvaluationItem>& items, const std::vector<double>& predictions,
                                     const Span& span, double rho, double in_stock_fraction = 0.8) {
  check_quantile_level(rho);
  if (items.size() != predictions.size()) throw DataError("one prediction per item is required");
  RiskValue r;
  double sum = 0.0;
  for (size_t i = 0; i < items.size(); ++i) {
    detail::check_item(items[i], span);
    if (!detail::passes_filter(items[i], span, in_stock_fraction)) continue;
    sum += quantile_loss(span_total(items[i], span), predictions[i], rho);
    ++r.n_items;
  }
  if (r.n_items == 0) return std::nullopt;
  r.value = sum / r.n_items;
  return r;
}

/// As above with predictions taken from per-item sample paths.
inline std::optional<RiskValue> risk(const std::vector<EvaluationItem>& items,
                                     const std::vector<ForecastSamples>& samples, const Span& span, double rho,
                                     double in_stock_fraction = 0.8) {
  if (items.size() != samples.size()) throw DataError("one sample set per item is required");
  std::vector<double> pred(items.size());
  for (size_t i = 0; i < items.size(); ++i) pred[i] = samples[i].span_quantile(span.lead, span.length, rho);
  return risk(items, pred, span, rho, in_stock_fraction);
}

/// Average of a reducer's span risks, skipping spans where no item passes.
inline std::optional<RiskValue> average_risk(const std::vector<EvaluationItem>& items,
                                             const std::vector<ForecastSamples>& samples,
                                             const std::vector<Span>& spans, double rho,
                                             double in_stock_fraction = 0.8) {
  double sum = 0.0;
  int used = 0, n_items = 0;
  for (const auto& s : spans) {
    const auto r = risk(items, samples, s, rho, in_stock_fraction);
    if (!r) continue;
    sum += r->value;
    n_items = std::max(n_items, r->n_items);
    ++used;
  }
  if (used == 0) return std::nullopt;
  return RiskValue{sum / used, n_items};
}

/// Daily spans (k, 1) for k = 0..7.
inline std::vector<Span> daily_spans() {
  std::vector<Span> s;
  for (int k = 0; k <= 7; ++k) s.push_back({k, 1});
  return s;
}

/// Weekly spans (7k, 7) for k = 0..32.
inline std::vector<Span> weekly_spans() {
  std::vector<Span> s;
  for (int k = 0; k <= 32; ++k) s.push_back({7 * k, 7});
  return s;
}

struct MetricRecord {
  std::string metric;
  double rho = 0.5;
  Eigen::Index lead = 0;
  Eigen::Index span = 1;
  std::optional<double> value;  // empty when no item passed the filter
  int n_items = 0;
};

/// One record per (span, quantile) of the spec, plus the dy(8) and wk(33)
/// reducers when the horizon covers them.
inline std::vector<MetricRecord> evaluate(const std::vector<EvaluationItem>& items,
                                          const std::vector<ForecastSamples>& samples, const EvaluationSpec& spec) {
  spec.validate();
  std::vector<MetricRecord> out;
  Eigen::Index horizon = -1;
  for (const auto& it : items) horizon = horizon < 0 ? it.actual.size() : std::min(horizon, it.actual.size());
  for (const auto& s : samples) horizon = horizon < 0 ? s.horizon() : std::min(horizon, s.horizon());
  for (double rho : spec.quantiles) {
    const std::string name = "P" + std::to_string(static_cast<int>(std::lround(rho * 100))) + "_risk";
    for (const auto& s : spec.spans) {
      MetricRecord m{name, rho, s.lead, s.length, std::nullopt, 0};
      if (const auto r = risk(items, samples, s, rho, spec.in_stock_fraction)) {
        m.value = r->value;
        m.n_items = r->n_items;
      }
      out.push_back(m);
    }
    if (horizon >= 8) {
      MetricRecord m{name + "_dy8", rho, 0, 1, std::nullopt, 0};
      if (const auto r = average_risk(items, samples, daily_spans(), rho, spec.in_stock_fraction)) {
        m.value = r->value;
        m.n_items = r->n_items;
      }
      out.push_back(m);
    }
    if (horizon >= 7 * 33) {
      MetricRecord m{name + "_wk33", rho, 0, 7, std::nullopt, 0};
      if (const auto r = average_risk(items, samples, weekly_spans(), rho, spec.in_stock_fraction)) {
        m.value = r->value;
        m.n_items = r->n_items;
      }
      out.push_back(m);
    }
  }
  return out;
}

}  // namespace latentcast
