#pragma once

// JSON run configuration. Every section is optional; unknown keys and wrong
// types are rejected before any computation starts.

#include <cstdint>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "latentcast/errors.hpp"
#include "latentcast/evaluation.hpp"
#include "latentcast/issm.hpp"
#include "latentcast/likelihood.hpp"
#include "latentcast/training.hpp"

namespace latentcast::cli {

using nlohmann::json;

struct ComponentConfig {
  std::string type = "level";  // level | static_level | level_trend | seasonality
  std::optional<StrengthBounds> bounds;
  std::optional<StrengthBounds> slope_bounds;
  double damping = 1.0;
  double slope_persistence = 1.0;
  std::optional<SeasonalityPattern> pattern;
};

struct LikelihoodConfig {
  std::string type = "poisson";  // gaussian | bernoulli | poisson | multi_stage
  std::string transfer = "twice_logistic";
  double kappa = 0.01;
};

struct ForecastConfig {
  int horizon = 28;
  int paths = 100;
  std::uint64_t seed = 42;
};

struct SimulationConfig {
  int items = 10;
  int length = 200;
  long start = 0;
  int num_features = 0;
  double weight_std = 0.3;
  double strength = 0.05;
  double level = 1.0;  // prior mean of level components (latent scale)
  std::vector<double> stage_levels{0.0, 0.0, 1.0};
  double prior_std = 0.1;
  double seasonal_amplitude = 0.0;  // prior mean shape of seasonal groups
  double amplitude_drift = 0.0;     // extra day-shape amplitude gained per 24 steps
  double variance = 1.0;            // Gaussian observation variance
  std::vector<Span> oos_windows;    // (start, length): availability 0 and z forced to 0
  double poison_fraction = 0.0;     // share of items given a NaN feature
};

struct RunConfig {
  std::vector<ComponentConfig> components{ComponentConfig{}};
  bool use_features = true;
  LikelihoodConfig likelihood;
  TrainingConfig training;
  bool mask_out_of_stock = true;
  ForecastConfig forecast;
  EvaluationSpec evaluation;
  std::optional<std::string> data;
  std::optional<SimulationConfig> simulate;
  int holdout = -1;  // pipeline: steps held out for evaluation, default = horizon
  std::string out = "latentcast_out";
  int parallelism = 0;  // 0: hardware concurrency

  int workers() const {
    if (parallelism > 0) return parallelism;
    return std::max(1u, std::thread::hardware_concurrency());
  }

  TransferFunction transfer() const {
    if (likelihood.transfer == "exponential") return TransferFunction::exponential();
    if (likelihood.transfer == "logistic") return TransferFunction::logistic();
    return TransferFunction::twice_logistic(likelihood.kappa);
  }

  bool multi_stage() const { return likelihood.type == "multi_stage"; }

  LikelihoodPotential potential() const {
    if (likelihood.type == "gaussian") return LikelihoodPotential::gaussian(training.default_variance);
    if (likelihood.type == "bernoulli") return LikelihoodPotential::bernoulli();
    return LikelihoodPotential::poisson(transfer());
  }

  CompositeIssm build_issm(int num_features) const {
    std::vector<IssmComponent> comps;
    for (const auto& c : components) {
      const StrengthBounds b = c.bounds.value_or(StrengthBounds{});
      if (c.type == "level") comps.push_back(make_level(b));
      else if (c.type == "static_level") comps.push_back(make_static_level());
      else if (c.type == "level_trend")
        comps.push_back(make_level_trend(b, c.slope_bounds.value_or(StrengthBounds{}), c.damping, c.slope_persistence));
      else comps.push_back(make_seasonality(*c.pattern, b));
    }
    return compose(std::move(comps), use_features ? num_features : 0);
  }
};

namespace detail {

class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_ + ": expected an object");
  }

  ~Section() noexcept(false) {
    if (std::uncaught_exceptions() > 0) return;
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!used_.count(it.key())) throw ConfigError(path_ + "." + it.key() + ": unknown key");
  }

  bool has(const std::string& k) {
    used_.insert(k);
    return j_.contains(k);
  }

  const json& at(const std::string& k) {
    used_.insert(k);
    return j_.at(k);
  }

  std::string where(const std::string& k) const { return path_ + "." + k; }

  double number(const std::string& k, double def) {
    if (!has(k)) return def;
    const json& v = j_.at(k);
    if (!v.is_number()) throw ConfigError(where(k) + ": expected a number");
    return v.get<double>();
  }

  long integer(const std::string& k, long def) {
    if (!has(k)) return def;
    const json& v = j_.at(k);
    if (!v.is_number_integer()) throw ConfigError(where(k) + ": expected an integer");
    return v.get<long>();
  }

  std::uint64_t unsigned_integer(const std::string& k, std::uint64_t def) {
    if (!has(k)) return def;
    const json& v = j_.at(k);
    if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() && v.get<long>() < 0))
      throw ConfigError(where(k) + ": expected a nonnegative integer");
    return v.get<std::uint64_t>();
  }

  bool boolean(const std::string& k, bool def) {
    if (!has(k)) return def;
    const json& v = j_.at(k);
    if (!v.is_boolean()) throw ConfigError(where(k) + ": expected true or false");
    return v.get<bool>();
  }

  std::string string(const std::string& k, const std::string& def, const std::set<std::string>& allowed = {}) {
    if (!has(k)) return def;
    const json& v = j_.at(k);
    if (!v.is_string()) throw ConfigError(where(k) + ": expected a string");
    auto s = v.get<std::string>();
    if (!allowed.empty() && !allowed.count(s)) {
      std::string opts;
      for (const auto& a : allowed) opts += (opts.empty() ? "" : ", ") + a;
      throw ConfigError(where(k) + ": '" + s + "' is not one of " + opts);
    }
    return s;
  }

  std::vector<double> numbers(const std::string& k, std::vector<double> def) {
    if (!has(k)) return def;
    const json& v = j_.at(k);
    if (!v.is_array()) throw ConfigError(where(k) + ": expected an array of numbers");
    std::vector<double> out;
    for (const auto& e : v) {
      if (!e.is_number()) throw ConfigError(where(k) + ": expected an array of numbers");
      out.push_back(e.get<double>());
    }
    return out;
  }

  std::vector<Span> spans(const std::string& k, std::vector<Span> def) {
    if (!has(k)) return def;
    const json& v = j_.at(k);
    if (!v.is_array()) throw ConfigError(where(k) + ": expected an array of [L, S] pairs");
    std::vector<Span> out;
    for (const auto& e : v) {
      if (!e.is_array() || e.size() != 2 || !e[0].is_number_integer() || !e[1].is_number_integer())
        throw ConfigError(where(k) + ": expected an array of [L, S] pairs");
      out.push_back({e[0].get<long>(), e[1].get<long>()});
    }
    return out;
  }

  std::optional<StrengthBounds> bounds(const std::string& k) {
    if (!has(k)) return std::nullopt;
    const auto v = numbers(k, {});
    if (v.size() != 2 || !(v[0] >= 0.0 && v[0] < v[1])) throw ConfigError(where(k) + ": expected [lo, hi] with 0 <= lo < hi");
    return StrengthBounds{v[0], v[1]};
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> used_;
};

inline SeasonalityPattern parse_pattern(const json& j, const std::string& path) {
  if (j.is_string()) {
    const auto n = j.get<std::string>();
    if (n == "day_of_week") return SeasonalityPattern::day_of_week();
    if (n == "hour_of_day") return SeasonalityPattern::hour_of_day();
    if (n == "workday_weekend") return SeasonalityPattern::workday_weekend();
    if (n == "hour_of_week") return SeasonalityPattern::hour_of_week();
    if (n == "hour_of_week_grouped") return SeasonalityPattern::hour_of_week_grouped();
    throw ConfigError(path + ": unknown pattern '" + n + "'");
  }
  Section s(j, path);
  SeasonalityPattern p;
  p.name = s.string("name", "custom");
  p.num_atomic_factors = static_cast<int>(s.integer("num_atomic_factors", 7));
  p.steps_per_factor = static_cast<int>(s.integer("steps_per_factor", 1));
  p.offset = s.integer("offset", 0);
  p.calendar_column = static_cast<int>(s.integer("calendar_column", -1));
  if (s.has("grouping")) {
    const json& g = s.at("grouping");
    if (!g.is_array()) throw ConfigError(s.where("grouping") + ": expected an array of group indices");
    for (const auto& e : g) {
      if (!e.is_number_integer()) throw ConfigError(s.where("grouping") + ": expected an array of group indices");
      p.grouping.push_back(e.get<int>());
    }
  }
  p.validate();
  return p;
}

inline ComponentConfig parse_component(const json& j, const std::string& path) {
  Section s(j, path);
  ComponentConfig c;
  c.type = s.string("type", "level", {"level", "static_level", "level_trend", "seasonality"});
  c.bounds = s.bounds("bounds");
  c.slope_bounds = s.bounds("slope_bounds");
  c.damping = s.number("damping", 1.0);
  c.slope_persistence = s.number("slope_persistence", 1.0);
  if (s.has("pattern")) c.pattern = parse_pattern(s.at("pattern"), s.where("pattern"));
  if (c.type == "seasonality" && !c.pattern) throw ConfigError(path + ": seasonality needs a pattern");
  if (c.type != "seasonality" && c.pattern) throw ConfigError(path + ": only seasonality takes a pattern");
  if (c.type == "level_trend") make_level_trend({}, {}, c.damping, c.slope_persistence);  // range checks
  return c;
}

inline SimulationConfig parse_simulation(const json& j, const std::string& path) {
  Section s(j, path);
  SimulationConfig c;
  c.items = static_cast<int>(s.integer("items", c.items));
  c.length = static_cast<int>(s.integer("length", c.length));
  c.start = s.integer("start", c.start);
  c.num_features = static_cast<int>(s.integer("num_features", c.num_features));
  c.weight_std = s.number("weight_std", c.weight_std);
  c.strength = s.number("strength", c.strength);
  c.level = s.number("level", c.level);
  c.stage_levels = s.numbers("stage_levels", c.stage_levels);
  c.prior_std = s.number("prior_std", c.prior_std);
  c.seasonal_amplitude = s.number("seasonal_amplitude", c.seasonal_amplitude);
  c.amplitude_drift = s.number("amplitude_drift", c.amplitude_drift);
  c.variance = s.number("variance", c.variance);
  c.oos_windows = s.spans("oos_windows", {});
  c.poison_fraction = s.number("poison_fraction", c.poison_fraction);
  if (c.items < 1 || c.length < 1) throw ConfigError(path + ": items and length must be positive");
  if (c.num_features < 0) throw ConfigError(path + ".num_features: must be nonnegative");
  if (!(c.strength >= 0.0) || !(c.prior_std >= 0.0) || !(c.variance >= 0.0) || !(c.weight_std >= 0.0))
    throw ConfigError(path + ": strengths, standard deviations and variances must be nonnegative");
  if (c.stage_levels.size() != 3) throw ConfigError(path + ".stage_levels: expected three values");
  if (!(c.poison_fraction >= 0.0 && c.poison_fraction <= 1.0))
    throw ConfigError(path + ".poison_fraction: must lie in [0, 1]");
  for (const auto& w : c.oos_windows)
    if (w.lead < 0 || w.length < 1) throw ConfigError(path + ".oos_windows: expected [start >= 0, length >= 1]");
  return c;
}

}  // namespace detail

/// Spans may be left empty; callers pick a default that fits their horizon.
inline EvaluationSpec parse_evaluation(const json& j, const std::string& path = "evaluation") {
  detail::Section e(j, path);
  EvaluationSpec spec;
  spec.spans = e.spans("spans", {});
  spec.quantiles = e.numbers("quantiles", spec.quantiles);
  spec.in_stock_fraction = e.number("in_stock_fraction", spec.in_stock_fraction);
  spec.validate();
  return spec;
}

inline RunConfig parse_config(const json& j) {
  detail::Section root(j, "config");
  RunConfig c;
  if (root.has("model")) {
    detail::Section m(root.at("model"), "config.model");
    if (m.has("components")) {
      const json& comps = m.at("components");
      if (!comps.is_array() || comps.empty()) throw ConfigError("config.model.components: expected a non-empty array");
      c.components.clear();
      for (size_t i = 0; i < comps.size(); ++i)
        c.components.push_back(detail::parse_component(comps[i], "config.model.components[" + std::to_string(i) + "]"));
    }
    c.use_features = m.boolean("use_features", true);
  }
  if (root.has("likelihood")) {
    detail::Section l(root.at("likelihood"), "config.likelihood");
    c.likelihood.type = l.string("type", "poisson", {"gaussian", "bernoulli", "poisson", "multi_stage"});
    c.likelihood.transfer = l.string("transfer", "twice_logistic", {"exponential", "logistic", "twice_logistic"});
    c.likelihood.kappa = l.number("kappa", 0.01);
    if (!(c.likelihood.kappa >= 0.0)) throw ConfigError("config.likelihood.kappa: must be nonnegative");
  }
  if (root.has("training")) {
    detail::Section t(root.at("training"), "config.training");
    auto& tr = c.training;
    tr.reg_strength = t.number("reg_strength", tr.reg_strength);
    tr.default_strength = t.number("default_strength", tr.default_strength);
    tr.default_prior_std = t.number("default_prior_std", tr.default_prior_std);
    tr.default_variance = t.number("default_variance", tr.default_variance);
    tr.min_observed = static_cast<int>(t.integer("min_observed", tr.min_observed));
    tr.lbfgs.max_iterations = static_cast<int>(t.integer("max_iterations", tr.lbfgs.max_iterations));
    tr.lbfgs.grad_tol = t.number("grad_tol", tr.lbfgs.grad_tol);
    tr.mode.max_iterations = static_cast<int>(t.integer("newton_max_iterations", tr.mode.max_iterations));
    c.mask_out_of_stock = t.boolean("mask_out_of_stock", true);
    if (!(tr.reg_strength >= 0.0)) throw ConfigError("config.training.reg_strength: must be nonnegative");
    if (!(tr.default_prior_std > 0.0) || !(tr.default_variance > 0.0))
      throw ConfigError("config.training: default prior std and variance must be positive");
    if (tr.lbfgs.max_iterations < 0 || tr.mode.max_iterations < 1)
      throw ConfigError("config.training: iteration limits must be positive");
  }
  if (root.has("forecast")) {
    detail::Section f(root.at("forecast"), "config.forecast");
    c.forecast.horizon = static_cast<int>(f.integer("horizon", c.forecast.horizon));
    c.forecast.paths = static_cast<int>(f.integer("paths", c.forecast.paths));
    c.forecast.seed = f.unsigned_integer("seed", c.forecast.seed);
    if (c.forecast.horizon < 1 || c.forecast.paths < 1)
      throw ConfigError("config.forecast: horizon and paths must be positive");
  }
  if (root.has("evaluation")) c.evaluation = parse_evaluation(root.at("evaluation"), "config.evaluation");
  if (c.evaluation.spans.empty()) c.evaluation.spans = {{0, std::min(7, c.forecast.horizon)}, {0, c.forecast.horizon}};
  c.evaluation.validate();
  if (root.has("data")) {
    if (!root.at("data").is_string()) throw ConfigError("config.data: expected a path");
    c.data = root.at("data").get<std::string>();
  }
  if (root.has("simulate")) c.simulate = detail::parse_simulation(root.at("simulate"), "config.simulate");
  c.holdout = static_cast<int>(root.integer("holdout", c.forecast.horizon));
  if (c.holdout < 0) throw ConfigError("config.holdout: must be nonnegative");
  c.out = root.string("out", c.out);
  c.parallelism = static_cast<int>(root.integer("parallelism", 0));
  if (c.parallelism < 0) throw ConfigError("config.parallelism: must be nonnegative");
  return c;
}

inline json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path);
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

inline RunConfig load_config(const std::string& path) { return parse_config(read_json(path)); }

}  // namespace latentcast::cli
