#pragma once

// Per-item train / forecast / evaluate jobs on a worker pool. A failing item
// is recorded and never affects the others.

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>
#include <spdlog/spdlog.h>

#include "latentcast/cli/config.hpp"
#include "latentcast/cli/data.hpp"
#include "latentcast/cli/serialize.hpp"
#include "latentcast/evaluation.hpp"
#include "latentcast/forecast.hpp"
#include "latentcast/parameters.hpp"
#include "latentcast/training.hpp"

namespace latentcast::cli {

/// Log level from LATENTCAST_LOG_LEVEL (trace, debug, info, warn, error, off).
inline void configure_logging() {
  if (const char* lvl = std::getenv("LATENTCAST_LOG_LEVEL")) spdlog::set_level(spdlog::level::from_str(lvl));
  else spdlog::set_level(spdlog::level::warn);
}

/// Runs fn(i) for i in [0, n) on `workers` threads. fn must not throw.
inline void run_pool(size_t n, int workers, const std::function<void(size_t)>& fn) {
  const size_t nw = std::min<size_t>(static_cast<size_t>(std::max(1, workers)), std::max<size_t>(n, 1));
  if (nw <= 1) {
    for (size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<size_t> next{0};
  std::vector<std::thread> pool;
  for (size_t w = 0; w < nw; ++w)
    pool.emplace_back([&] {
      for (size_t i = next++; i < n; i = next++) fn(i);
    });
  for (auto& t : pool) t.join();
}

/// Linear-interpolation percentile of an unsorted sample, q in [0, 100].
inline double percentile(std::vector<double> v, double q) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const double pos = q / 100.0 * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<size_t>(std::floor(pos));
  const size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

/// Stable 64-bit hash of an item id (FNV-1a) for per-item seeds.
inline std::uint64_t item_hash(const std::string& id) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : id) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

struct TrainedItem {
  std::string item_id;
  std::vector<StageFit> stages;
  std::vector<FinalStatePosterior> posteriors;
  long next_time = 0;
};

inline void check_series(const Series& s, const RunConfig& cfg) {
  if (s.length() < 1) throw DataError(s.item_id + ": empty series");
  for (Eigen::Index t = 0; t < s.features.rows(); ++t)
    for (Eigen::Index j = 0; j < s.features.cols(); ++j)
      if (!std::isfinite(s.features(t, j)))
        throw DataError(s.item_id + ": non-finite feature " + std::to_string(j) + " (t=" + std::to_string(s.start + t) + ")");
  if (cfg.likelihood.type == "bernoulli")
    for (Eigen::Index t = 0; t < s.length(); ++t)
      if (s.z[t] != 0.0 && s.z[t] != 1.0) throw DataError(s.item_id + ": binary targets must be 0 or 1");
}

/// Single-stage data: binary 0/1 series become -1/+1 targets.
inline LikelihoodData single_stage_data(const RunConfig& cfg, const Series& s) {
  Eigen::VectorXd z = s.z;
  if (cfg.likelihood.type == "bernoulli") z = (2.0 * z.array() - 1.0).matrix();
  return make_likelihood_data(cfg.potential(), z, s.availability, cfg.mask_out_of_stock);
}

inline std::vector<LikelihoodData> stage_data(const RunConfig& cfg, const Series& s) {
  if (!cfg.multi_stage()) return {single_stage_data(cfg, s)};
  const Eigen::VectorXd av = cfg.mask_out_of_stock ? s.availability : Eigen::VectorXd::Ones(s.length());
  return multi_stage_data(s.z, av, cfg.transfer());
}

inline TrainedItem train_item(const RunConfig& cfg, const CompositeIssm& issm, const Series& s) {
  check_series(s, cfg);
  TrainedItem out;
  out.item_id = s.item_id;
  out.next_time = s.start + static_cast<long>(s.length());
  const SeriesDesign design = s.design();
  const auto data = stage_data(cfg, s);
  for (size_t k = 0; k < data.size(); ++k) {
    StageFit f;
    if (cfg.multi_stage()) {
      // A failing stage falls back to default parameters; the others proceed.
      try {
        f = fit(issm, design, data[k], cfg.training);
      } catch (const std::exception& e) {
        f.lik = data[k].lik;
        f.error = e.what();
        f.status = "failed";
        spdlog::warn("{}: stage {} failed: {}", s.item_id, k, e.what());
      }
      f = usable_stage(issm, f, cfg.training);
    } else {
      f = fit(issm, design, data[k], cfg.training);
    }
    f.stage = static_cast<int>(k);
    out.posteriors.push_back(final_state_posterior(issm, design, data[k], f, cfg.training.mode));
    out.stages.push_back(std::move(f));
  }
  return out;
}

/// Forecast targets in data units (binary series as 0/1).
inline ForecastSamples forecast_item(const RunConfig& cfg, const CompositeIssm& issm, const TrainedItem& item,
                                     int horizon, int paths, std::uint64_t seed, const Eigen::MatrixXd& future_features,
                                     const std::vector<std::vector<int>>& future_calendar) {
  const std::uint64_t item_seed = path_seed(seed, item_hash(item.item_id));
  const Eigen::MatrixXd x = issm.feature_dim() > 0 ? future_features : Eigen::MatrixXd::Zero(horizon, 0);
  if (cfg.multi_stage())
    return multi_stage_sample(issm, item.posteriors, horizon, paths, x, item_seed, cfg.transfer(), future_calendar);
  ForecastSamples s = sample_paths(issm, item.posteriors.at(0), horizon, paths, x, item_seed, future_calendar);
  if (cfg.likelihood.type == "bernoulli") s.paths = (0.5 * (s.paths.array() + 1.0)).matrix();
  return s;
}

struct ItemOutcome {
  std::string item_id;
  std::optional<TrainedItem> trained;
  std::optional<ForecastSamples> samples;
  std::optional<EvaluationItem> actuals;
  std::optional<std::string> error;
  std::vector<double> stage_seconds;  // training time per stage
  double forecast_seconds = std::numeric_limits<double>::quiet_NaN();
};

/// Timing report: P5/P50/P95 of per-item seconds for each training stage and
/// for forecasting.
inline json timing_report(const std::vector<ItemOutcome>& out) {
  json j = json::object();
  auto summary = [](const std::vector<double>& v) {
    return json{{"n", v.size()}, {"p5", percentile(v, 5)}, {"p50", percentile(v, 50)}, {"p95", percentile(v, 95)}};
  };
  std::map<size_t, std::vector<double>> per_stage;
  std::vector<double> fc;
  for (const auto& o : out) {
    for (size_t k = 0; k < o.stage_seconds.size(); ++k) per_stage[k].push_back(o.stage_seconds[k]);
    if (std::isfinite(o.forecast_seconds)) fc.push_back(o.forecast_seconds);
  }
  json train = json::object();
  for (const auto& [k, v] : per_stage) train["stage_" + std::to_string(k)] = summary(v);
  j["train"] = train;
  j["forecast"] = summary(fc);
  return j;
}

struct FleetResult {
  std::vector<ItemOutcome> items;
  std::vector<MetricRecord> metrics;
  int failures = 0;

  bool all_failed() const { return !items.empty() && failures == static_cast<int>(items.size()); }
};

/// Train on each series, optionally forecast `horizon` steps (future features
/// and calendar come from `future` when given) and evaluate against it.
inline FleetResult run_fleet(const RunConfig& cfg, const Dataset& train, const Dataset* future, bool do_forecast,
                             bool do_evaluate) {
  const CompositeIssm issm = cfg.build_issm(static_cast<int>(train.feature_names.size()));
  std::vector<const Series*> series;
  for (const auto& [id, s] : train.items) series.push_back(&s);
  FleetResult res;
  res.items.resize(series.size());
  const int H = cfg.forecast.horizon;

  run_pool(series.size(), cfg.workers(), [&](size_t i) {
    const Series& s = *series[i];
    ItemOutcome& o = res.items[i];
    o.item_id = s.item_id;
    try {
      auto t0 = std::chrono::steady_clock::now();
      o.trained = train_item(cfg, issm, s);
      for (const auto& f : o.trained->stages) o.stage_seconds.push_back(f.seconds);
      spdlog::info("{}: trained in {:.3f}s", s.item_id,
                   std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
      if (!do_forecast) return;
      const Series* fut = nullptr;
      if (future) {
        const auto it = future->items.find(s.item_id);
        if (it == future->items.end()) throw DataError(s.item_id + ": no future rows");
        fut = &it->second;
        if (fut->start != o.trained->next_time)
          throw DataError(s.item_id + ": future rows must start at t=" + std::to_string(o.trained->next_time));
        if (fut->length() < H) throw DataError(s.item_id + ": future rows do not cover the horizon");
      } else if (issm.feature_dim() > 0) {
        throw DataError(s.item_id + ": features are needed over the forecast horizon");
      }
      Eigen::MatrixXd x = Eigen::MatrixXd::Zero(H, issm.feature_dim());
      std::vector<std::vector<int>> cal;
      if (fut) {
        const Series head = fut->slice(0, H);
        if (issm.feature_dim() > 0) x = head.features;
        cal = head.calendar;
        for (Eigen::Index t = 0; t < x.rows(); ++t)
          if (!x.row(t).allFinite()) throw DataError(s.item_id + ": non-finite future feature");
        if (do_evaluate) o.actuals = EvaluationItem{head.z, head.availability};
      }
      t0 = std::chrono::steady_clock::now();
      o.samples = forecast_item(cfg, issm, *o.trained, H, cfg.forecast.paths, cfg.forecast.seed, x, cal);
      o.forecast_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    } catch (const std::exception& e) {
      o.error = e.what();
      o.trained.reset();
      o.samples.reset();
      o.actuals.reset();
      spdlog::error("{}: {}", s.item_id, e.what());
    }
  });

  std::vector<EvaluationItem> ev_items;
  std::vector<ForecastSamples> ev_samples;
  for (const auto& o : res.items) {
    if (o.error) ++res.failures;
    if (o.samples && o.actuals) {
      ev_items.push_back(*o.actuals);
      ev_samples.push_back(*o.samples);
    }
  }
  if (do_evaluate && !ev_items.empty()) res.metrics = evaluate(ev_items, ev_samples, cfg.evaluation);
  return res;
}

// ---- artifacts

inline void write_json(const std::filesystem::path& p, const json& j) {
  std::ofstream out(p);
  if (!out) throw DataError("cannot write " + p.string());
  out << j.dump(2) << '\n';
}

inline json parameters_json(const RunConfig& cfg, const json& raw_config, const FleetResult& r, int num_features) {
  const CompositeIssm issm = cfg.build_issm(num_features);
  json items = json::object();
  for (const auto& o : r.items) {
    if (!o.trained) {
      items[o.item_id] = {{"error", o.error.value_or("not trained")}};
      continue;
    }
    json stages = json::array();
    for (size_t k = 0; k < o.trained->stages.size(); ++k) {
      const auto& f = o.trained->stages[k];
      const ParameterCodec codec(issm, f.lik);
      json js = to_json(f, codec.names());
      js["state_posterior"] = to_json(o.trained->posteriors[k].state);
      stages.push_back(js);
    }
    items[o.item_id] = {{"next_time", o.trained->next_time}, {"stages", stages}};
  }
  return {{"config", raw_config}, {"num_features", num_features}, {"items", items}};
}

inline void write_samples_csv(const std::filesystem::path& p, const FleetResult& r) {
  std::ofstream out(p);
  if (!out) throw DataError("cannot write " + p.string());
  out << "item_id,path,t,z\n";
  for (const auto& o : r.items) {
    if (!o.samples) continue;
    const auto& s = *o.samples;
    for (Eigen::Index k = 0; k < s.num_paths(); ++k)
      for (Eigen::Index h = 0; h < s.horizon(); ++h)
        out << o.item_id << ',' << k << ',' << s.start + h << ',' << detail::format_double(s.paths(k, h)) << '\n';
  }
}

inline void write_quantiles_csv(const std::filesystem::path& p, const FleetResult& r, const EvaluationSpec& spec) {
  std::ofstream out(p);
  if (!out) throw DataError("cannot write " + p.string());
  out << "item_id,lead,span,rho,value\n";
  for (const auto& o : r.items) {
    if (!o.samples) continue;
    for (const auto& sp : spec.spans) {
      if (sp.lead + sp.length > o.samples->horizon()) continue;
      for (double rho : spec.quantiles)
        out << o.item_id << ',' << sp.lead << ',' << sp.length << ',' << detail::format_double(rho) << ','
            << detail::format_double(o.samples->span_quantile(sp.lead, sp.length, rho)) << '\n';
    }
  }
}

inline json metrics_json(const std::vector<MetricRecord>& m) {
  json a = json::array();
  for (const auto& r : m) a.push_back(to_json(r));
  return a;
}

inline json summary_json(const FleetResult& r) {
  json failed = json::array();
  for (const auto& o : r.items)
    if (o.error) failed.push_back({{"item_id", o.item_id}, {"error", *o.error}});
  int fallback = 0;
  for (const auto& o : r.items)
    if (o.trained)
      for (const auto& f : o.trained->stages) fallback += f.fallback ? 1 : 0;
  return {{"items", r.items.size()},
          {"succeeded", static_cast<int>(r.items.size()) - r.failures},
          {"failed", r.failures},
          {"fallback_stages", fallback},
          {"failures", failed}};
}

struct LoadedModel {
  json raw_config;
  RunConfig config;
  int num_features = 0;
  std::vector<TrainedItem> items;
};

/// Reads a model written by `parameters_json`. Items that failed to train are skipped.
inline LoadedModel load_model(const std::string& path) {
  const json j = read_json(path);
  LoadedModel m;
  try {
    m.raw_config = j.at("config");
    m.config = parse_config(m.raw_config);
    m.num_features = j.at("num_features").get<int>();
    const CompositeIssm issm = m.config.build_issm(m.num_features);
    for (const auto& [id, it] : j.at("items").items()) {
      if (!it.contains("stages")) continue;
      TrainedItem ti;
      ti.item_id = id;
      ti.next_time = it.at("next_time").get<long>();
      const auto& stages = it.at("stages");
      for (size_t k = 0; k < stages.size(); ++k) {
        const auto& js = stages[k];
        StageFit f;
        f.stage = static_cast<int>(k);
        f.params = parameters_from(js.at("parameters"));
        issm.check(f.params);
        if (m.config.multi_stage()) f.lik = k < 2 ? LikelihoodPotential::bernoulli() : LikelihoodPotential::poisson(m.config.transfer());
        else f.lik = m.config.potential();
        if (f.lik.has_parameters()) f.lik.variance = f.params.likelihood_variance;
        FinalStatePosterior post;
        post.state = triangular_from(js.at("state_posterior"));
        if (post.state.dim() < issm.dim()) throw DataError(id + ": state posterior dimension mismatch");
        post.params = f.params;
        post.lik = f.lik;
        post.next_time = ti.next_time;
        ti.stages.push_back(std::move(f));
        ti.posteriors.push_back(std::move(post));
      }
      m.items.push_back(std::move(ti));
    }
  } catch (const json::exception& e) {
    throw DataError(path + ": malformed model file: " + e.what());
  }
  return m;
}

/// Samples CSV (item_id, path, t, z) back into per-item arrays.
inline std::map<std::string, ForecastSamples> read_samples_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  std::string line;
  long lineno = 1;
  if (!std::getline(in, line) || std::string(detail::trim(line)) != "item_id,path,t,z")
    throw DataError(path + ":1: expected header item_id,path,t,z");
  std::map<std::string, std::map<std::pair<long, long>, double>> raw;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::trim(line).empty()) continue;
    const auto f = detail::split_row(line);
    if (f.size() != 4) detail::fail(path, lineno, "expected 4 fields");
    const long k = detail::parse_long(f[1], path, lineno, "path");
    const long t = detail::parse_long(f[2], path, lineno, "t");
    const double v = detail::parse_double(f[3], path, lineno, "value");
    raw[std::string(detail::trim(f[0]))][{k, t}] = v;
  }
  std::map<std::string, ForecastSamples> out;
  for (const auto& [id, m] : raw) {
    long kmax = 0, tmin = m.begin()->first.second, tmax = tmin;
    for (const auto& [key, v] : m) {
      kmax = std::max(kmax, key.first);
      tmin = std::min(tmin, key.second);
      tmax = std::max(tmax, key.second);
    }
    ForecastSamples s;
    s.start = tmin;
    s.paths.resize(kmax + 1, tmax - tmin + 1);
    if (static_cast<Eigen::Index>(m.size()) != s.paths.size())
      throw DataError(path + ": samples for " + id + " do not form a full path x step grid");
    for (const auto& [key, v] : m) s.paths(key.first, key.second - tmin) = v;
    out.emplace(id, std::move(s));
  }
  return out;
}

}  // namespace latentcast::cli
