#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>
#include <spdlog/spdlog.h>

#include "latentcast/cli/config.hpp"
#include "latentcast/cli/data.hpp"
#include "latentcast/cli/fleet.hpp"
#include "latentcast/cli/serialize.hpp"
#include "latentcast/cli/simulate.hpp"

namespace fs = std::filesystem;
using namespace latentcast;
using namespace latentcast::cli;

namespace {

constexpr int kOk = 0;
constexpr int kRuntimeFailure = 1;
constexpr int kConfigError = 2;

CsvOptions csv_options(const RunConfig& cfg) { return {cfg.likelihood.type == "gaussian"}; }

Dataset load_or_simulate(const RunConfig& cfg, const std::optional<std::string>& data_path, std::uint64_t seed,
                         Simulation* sim_out) {
  if (data_path) return load_csv(*data_path, csv_options(cfg));
  if (cfg.data) return load_csv(*cfg.data, csv_options(cfg));
  if (cfg.simulate) {
    Simulation sim = simulate(cfg, seed);
    Dataset d = sim.data;
    if (sim_out) *sim_out = std::move(sim);
    return d;
  }
  throw ConfigError("no data: pass --data, or set config.data or config.simulate");
}

void print_summary(const FleetResult& r) {
  std::cerr << "items: " << r.items.size() << ", failed: " << r.failures << '\n';
  for (const auto& o : r.items)
    if (o.error) std::cerr << "  " << o.item_id << ": " << *o.error << '\n';
}

int cmd_train(const std::string& config_path, const std::optional<std::string>& data, const std::string& out) {
  const json raw = read_json(config_path);
  const RunConfig cfg = parse_config(raw);
  const Dataset ds = load_or_simulate(cfg, data, cfg.forecast.seed, nullptr);
  const FleetResult r = run_fleet(cfg, ds, nullptr, false, false);
  write_json(out, parameters_json(cfg, raw, r, static_cast<int>(ds.feature_names.size())));
  print_summary(r);
  return r.all_failed() ? kRuntimeFailure : kOk;
}

int cmd_forecast(const std::string& model_path, std::optional<int> horizon, std::optional<int> paths,
                 std::optional<std::uint64_t> seed, const std::optional<std::string>& future_path,
                 const std::string& out_dir) {
  const LoadedModel m = load_model(model_path);
  RunConfig cfg = m.config;
  if (horizon) cfg.forecast.horizon = *horizon;
  if (paths) cfg.forecast.paths = *paths;
  if (seed) cfg.forecast.seed = *seed;
  if (cfg.forecast.horizon < 1 || cfg.forecast.paths < 1) throw ConfigError("horizon and paths must be positive");
  std::optional<Dataset> future;
  if (future_path) future = load_csv(*future_path, csv_options(cfg));
  const CompositeIssm issm = cfg.build_issm(m.num_features);
  const int H = cfg.forecast.horizon;

  FleetResult r;
  r.items.resize(m.items.size());
  run_pool(m.items.size(), cfg.workers(), [&](size_t i) {
    const TrainedItem& item = m.items[i];
    ItemOutcome& o = r.items[i];
    o.item_id = item.item_id;
    try {
      Eigen::MatrixXd x = Eigen::MatrixXd::Zero(H, issm.feature_dim());
      std::vector<std::vector<int>> cal;
      if (future) {
        const auto it = future->items.find(item.item_id);
        if (it == future->items.end()) throw DataError(item.item_id + ": no future rows");
        const Series& f = it->second;
        if (f.start != item.next_time || f.length() < H)
          throw DataError(item.item_id + ": future rows must cover t=" + std::to_string(item.next_time) + ".." +
                          std::to_string(item.next_time + H - 1));
        const Series head = f.slice(0, H);
        if (issm.feature_dim() > 0) x = head.features;
        cal = head.calendar;
      } else if (issm.feature_dim() > 0) {
        throw DataError(item.item_id + ": --future is required for models with features");
      }
      o.samples = forecast_item(cfg, issm, item, H, cfg.forecast.paths, cfg.forecast.seed, x, cal);
    } catch (const std::exception& e) {
      o.error = e.what();
    }
  });
  for (const auto& o : r.items) r.failures += o.error ? 1 : 0;
  fs::create_directories(out_dir);
  EvaluationSpec spec = cfg.evaluation;
  write_samples_csv(fs::path(out_dir) / "samples.csv", r);
  write_quantiles_csv(fs::path(out_dir) / "quantiles.csv", r, spec);
  print_summary(r);
  return r.all_failed() ? kRuntimeFailure : kOk;
}

int cmd_evaluate(const std::string& samples_path, const std::string& actuals_path,
                 const std::optional<std::string>& spec_path, const std::optional<std::string>& out) {
  const auto samples = read_samples_csv(samples_path);
  const Dataset actuals = load_csv(actuals_path, {true});
  EvaluationSpec spec = spec_path ? parse_evaluation(read_json(*spec_path)) : EvaluationSpec{};
  std::vector<EvaluationItem> items;
  std::vector<ForecastSamples> preds;
  Eigen::Index horizon = -1;
  for (const auto& [id, s] : samples) {
    const auto it = actuals.items.find(id);
    if (it == actuals.items.end()) throw DataError("no actuals for item " + id);
    const Series& a = it->second;
    const Eigen::Index from = s.start - a.start;
    if (from < 0 || from + s.horizon() > a.length())
      throw DataError("actuals for " + id + " do not cover t=" + std::to_string(s.start) + ".." +
                      std::to_string(s.start + s.horizon() - 1));
    items.push_back({a.z.segment(from, s.horizon()), a.availability.segment(from, s.horizon())});
    preds.push_back(s);
    horizon = horizon < 0 ? s.horizon() : std::min(horizon, s.horizon());
  }
  if (items.empty()) throw DataError("no samples to evaluate");
  if (spec.spans.empty()) spec.spans = {{0, horizon}};
  const json metrics = metrics_json(evaluate(items, preds, spec));
  if (out) write_json(*out, metrics);
  else std::cout << metrics.dump(2) << '\n';
  return kOk;
}

int cmd_simulate(const std::string& config_path, std::optional<std::uint64_t> seed, const std::string& out) {
  const RunConfig cfg = load_config(config_path);
  const Simulation sim = simulate(cfg, seed.value_or(cfg.forecast.seed));
  write_csv(out, sim.data);
  fs::path truth(out);
  truth.replace_extension(".truth.json");
  write_json(truth, truth_to_json(sim));
  return kOk;
}

int cmd_pipeline(const std::string& config_path, const std::optional<std::string>& out_override) {
  const json raw = read_json(config_path);
  RunConfig cfg = parse_config(raw);
  if (out_override) cfg.out = *out_override;
  const int H = cfg.forecast.horizon;
  const bool evaluate = cfg.holdout > 0;
  if (evaluate && cfg.holdout < H) throw ConfigError("config.holdout must be 0 or at least the forecast horizon");
  for (const auto& sp : cfg.evaluation.spans)
    if (sp.lead + sp.length > H) throw ConfigError("evaluation spans must lie within the forecast horizon");

  Simulation sim;
  const Dataset all = load_or_simulate(cfg, std::nullopt, cfg.forecast.seed, &sim);
  Dataset train, future;
  train.feature_names = future.feature_names = all.feature_names;
  train.season_names = future.season_names = all.season_names;
  for (const auto& [id, s] : all.items) {
    if (s.length() <= cfg.holdout) throw DataError(id + ": series shorter than the holdout");
    train.items.emplace(id, s.slice(0, s.length() - cfg.holdout));
    if (evaluate) future.items.emplace(id, s.slice(s.length() - cfg.holdout, cfg.holdout));
  }
  if (!evaluate && !all.feature_names.empty() && cfg.use_features)
    throw ConfigError("models with features need a holdout to supply future features");

  const FleetResult r = run_fleet(cfg, train, evaluate ? &future : nullptr, true, evaluate);
  const fs::path dir(cfg.out);
  fs::create_directories(dir);
  if (cfg.simulate && !cfg.data) {
    write_csv((dir / "data.csv").string(), all);
    write_json(dir / "truth.json", truth_to_json(sim));
  }
  write_json(dir / "parameters.json", parameters_json(cfg, raw, r, static_cast<int>(all.feature_names.size())));
  write_samples_csv(dir / "samples.csv", r);
  write_quantiles_csv(dir / "quantiles.csv", r, cfg.evaluation);
  write_json(dir / "metrics.json", metrics_json(r.metrics));
  write_json(dir / "timing.json", timing_report(r.items));
  write_json(dir / "summary.json", summary_json(r));
  print_summary(r);
  return r.all_failed() ? kRuntimeFailure : kOk;
}

}  // namespace

int main(int argc, char** argv) {
  configure_logging();
  CLI::App app{"latentcast: state space forecasting for intermittent count series"};
  app.require_subcommand(1);

  std::string config, model, samples, actuals, out;
  std::optional<std::string> data, future, spec, eval_out, out_opt;
  std::optional<int> horizon, paths;
  std::optional<std::uint64_t> seed;

  auto* train = app.add_subcommand("train", "fit parameters for every item");
  train->add_option("--config", config, "run configuration (JSON)")->required();
  train->add_option("--data", data, "series CSV (overrides config.data)");
  train->add_option("--out", out, "model file (JSON)")->required();

  auto* forecast = app.add_subcommand("forecast", "sample forecast paths from a trained model");
  forecast->add_option("--model", model, "model file from train")->required();
  forecast->add_option("--horizon", horizon, "steps ahead");
  forecast->add_option("--paths", paths, "sample paths per item");
  forecast->add_option("--seed", seed, "root seed");
  forecast->add_option("--future", future, "CSV with features/calendar over the horizon");
  forecast->add_option("--out", out, "output directory")->default_val("forecast_out");

  auto* evaluate = app.add_subcommand("evaluate", "quantile risk of samples against actuals");
  evaluate->add_option("--samples", samples, "samples CSV from forecast")->required();
  evaluate->add_option("--actuals", actuals, "series CSV with realized values")->required();
  evaluate->add_option("--spec", spec, "evaluation spec (JSON)");
  evaluate->add_option("--out", eval_out, "metrics file (default: stdout)");

  auto* simulate_cmd = app.add_subcommand("simulate", "draw synthetic series");
  simulate_cmd->add_option("--config", config, "run configuration with a simulate section")->required();
  simulate_cmd->add_option("--seed", seed, "root seed");
  simulate_cmd->add_option("--out", out, "series CSV; ground truth goes next to it")->required();

  auto* pipeline = app.add_subcommand("pipeline", "train, forecast and evaluate with a holdout");
  pipeline->add_option("--config", config, "run configuration (JSON)")->required();
  pipeline->add_option("--out", out_opt, "output directory (overrides config.out)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfigError;
  }

  try {
    if (*train) return cmd_train(config, data, out);
    if (*forecast) return cmd_forecast(model, horizon, paths, seed, future, out);
    if (*evaluate) return cmd_evaluate(samples, actuals, spec, eval_out);
    if (*simulate_cmd) return cmd_simulate(config, seed, out);
    if (*pipeline) return cmd_pipeline(config, out_opt);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntimeFailure;
  }
  return kOk;
}
