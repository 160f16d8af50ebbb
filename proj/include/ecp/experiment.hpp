#pragma once

// End-to-end evaluation protocol. For every trial the data are split at
// random into calibration and validation rows; a temperature is fit on the
// calibration rows; every method is scored, calibrated, and evaluated on the
// validation rows for every delta. Trials run on a bounded worker pool and
// are assembled in trial order, so output does not depend on scheduling.

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "ecp/conformal.hpp"
#include "ecp/dataset.hpp"
#include "ecp/error.hpp"
#include "ecp/evidential.hpp"
#include "ecp/metrics.hpp"
#include "ecp/report.hpp"
#include "ecp/scores.hpp"

namespace ecp {

struct ExperimentConfig {
  std::filesystem::path logits_path;
  std::filesystem::path labels_path;
  FileFormat format = FileFormat::Binary;
  std::vector<Method> methods{Method::Base, Method::Aps, Method::Raps, Method::Ecp};
  std::vector<double> deltas{0.1};
  std::size_t trials = 10;
  double calibration_fraction = 0.3;
  std::uint64_t seed = 0;
  EvidentialConfig evidential;
  RapsParams raps;
  // When non-empty, RAPS picks its lambda per (trial, delta) by minimum SSCV.
  std::vector<double> lambda_grid;
  bool randomized = false;
  // Empty bins mean the standard strata for the dataset's K.
  Bins size_bins;
  Bins sscv_bins;
  Bins difficulty_bins;
  std::filesystem::path output_dir = ".";
  std::size_t workers = 0;  // 0 = hardware concurrency

  void validate() const {
    if (trials < 1) fail(ErrorCode::InvalidArgument, "trials must be >= 1");
    if (methods.empty()) fail(ErrorCode::InvalidArgument, "no methods");
    if (deltas.empty()) fail(ErrorCode::InvalidArgument, "no deltas");
    for (double d : deltas) validate_delta(d);
    if (!(calibration_fraction > 0.0 && calibration_fraction < 1.0)) {
      fail(ErrorCode::InvalidArgument, "calibration fraction must lie in (0, 1)");
    }
  }
};

struct ExperimentResult {
  Table summary;
  Table per_trial;
  Table size_strat;
  Table difficulty_strat;
  Table sat;
  Table reliability;
  nlohmann::json protocol;
};

namespace detail {

struct Evaluation {
  std::size_t trial = 0;
  Method method = Method::Ecp;
  double delta = 0.1;
  std::optional<double> lambda;
  CalibrationResult calibration;
  std::size_t n_val = 0;
  double coverage = 0.0;
  double size = 0.0;
  std::optional<double> size_nonempty;
  std::size_t empty_sets = 0;
  double sscv = 0.0;
  std::optional<double> sat;
  StratifiedReport by_size;
  StratifiedReport by_difficulty;
};

struct ResolvedBins {
  Bins size, sscv, difficulty;
};

inline std::vector<Evaluation> run_trial(const LogitDataset& data, const ExperimentConfig& cfg,
                                         const ResolvedBins& bins, std::size_t trial) {
  const SplitIndices idx = split(data, {cfg.calibration_fraction, cfg.seed, trial});
  const LogitDataset cal = data.subset(idx.calibration);
  const LogitDataset val = data.subset(idx.validation);
  const Temperature temperature = fit_temperature(cal);

  ScoringOptions opts;
  opts.evidential = cfg.evidential;
  opts.raps = cfg.raps;
  opts.temperature = temperature;
  opts.randomization = {cfg.randomized, cfg.seed ^ (0x5851F42D4C957F2DULL * (trial + 1))};

  std::vector<Evaluation> out;
  auto evaluate = [&](Method method, const ScoreMatrix& all, double delta,
                      std::optional<double> lambda) {
    Evaluation ev;
    ev.trial = trial;
    ev.method = method;
    ev.delta = delta;
    ev.lambda = lambda;
    const ScoreMatrix val_scores = all.select(idx.validation);
    if (method == Method::Base) {
      ev.calibration.n = idx.calibration.size();
      ev.calibration.delta = delta;
      ev.calibration.method = method;
      ev.calibration.temperature = temperature;
      ev.calibration.q_hat = 1.0 - delta;
    } else {
      const auto cal_scores = all.select(idx.calibration).at_labels(cal.labels());
      ev.calibration = calibrate(cal_scores, delta, method, temperature);
    }
    const auto batch = build_sets(val_scores, ev.calibration.q_hat, val.labels());
    ev.n_val = batch.size();
    ev.coverage = marginal_coverage(batch);
    ev.size = mean_set_size(batch, false);
    ev.empty_sets = static_cast<std::size_t>(std::count(batch.sizes.begin(), batch.sizes.end(), 0U));
    if (ev.empty_sets < batch.size()) ev.size_nonempty = mean_set_size(batch, true);
    ev.sscv = sscv(batch, bins.sscv, delta);
    if (ev.size_nonempty) ev.sat = sat_from(ev.sscv, *ev.size_nonempty);
    ev.by_size = size_stratified(batch, bins.size);
    ev.by_difficulty = difficulty_stratified(batch, bins.difficulty);
    out.push_back(std::move(ev));
  };

  for (Method method : cfg.methods) {
    if (method == Method::Raps && !cfg.lambda_grid.empty()) {
      for (double delta : cfg.deltas) {
        const auto search = raps_lambda_search(data, idx, cfg.lambda_grid, cfg.raps.k_reg, delta,
                                               bins.sscv, opts.randomization);
        ScoringOptions tuned = opts;
        tuned.raps.lambda = search.best_lambda;
        evaluate(method, compute_scores(method, data, tuned), delta, search.best_lambda);
      }
      continue;
    }
    const ScoreMatrix all = compute_scores(method, data, opts);
    const std::optional<double> lambda =
        method == Method::Raps ? std::optional<double>(cfg.raps.lambda) : std::nullopt;
    for (double delta : cfg.deltas) evaluate(method, all, delta, lambda);
  }
  return out;
}

inline Cell opt(const std::optional<double>& v) { return optional_cell(v); }

inline Cell method_cell(Method m) { return std::string(to_string(m)); }

}  // namespace detail

inline ExperimentResult run_experiment(const LogitDataset& data, const ExperimentConfig& cfg) {
  cfg.validate();
  cfg.evidential.validate(data.num_classes());
  if (std::find(cfg.methods.begin(), cfg.methods.end(), Method::Raps) != cfg.methods.end()) {
    cfg.raps.validate(data.num_classes());
  }
  const std::size_t K = data.num_classes();
  const detail::ResolvedBins bins{
      cfg.size_bins.size() ? cfg.size_bins : standard_size_bins(K),
      cfg.sscv_bins.size() ? cfg.sscv_bins : sscv_size_bins(K),
      cfg.difficulty_bins.size() ? cfg.difficulty_bins : standard_difficulty_bins(K)};
  if (!bins.size.covers(0, static_cast<std::uint32_t>(K)) ||
      !bins.sscv.covers(0, static_cast<std::uint32_t>(K))) {
    fail(ErrorCode::UncoveredSize, "size bins must cover 0.." + std::to_string(K));
  }
  if (!bins.difficulty.covers(1, static_cast<std::uint32_t>(K))) {
    fail(ErrorCode::UncoveredSize, "difficulty bins must cover 1.." + std::to_string(K));
  }

  std::vector<std::vector<detail::Evaluation>> per_trial(cfg.trials);
  std::vector<std::exception_ptr> errors(cfg.trials);
  const std::size_t hw = std::max(1U, std::thread::hardware_concurrency());
  const std::size_t workers = std::min(cfg.trials, cfg.workers ? cfg.workers : hw);
  std::atomic<std::size_t> next{0};
  {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t t = next++; t < cfg.trials; t = next++) {
          try {
            per_trial[t] = detail::run_trial(data, cfg, bins, t);
          } catch (const Error& e) {
            errors[t] = std::make_exception_ptr(
                Error(e.code(), "trial " + std::to_string(t) + ": " + e.detail()));
          } catch (...) {
            errors[t] = std::current_exception();
          }
        }
      });
    }
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  ExperimentResult r;
  r.per_trial = Table({"trial", "method", "delta", "lambda", "temperature", "n_cal", "n_val", "q_hat",
                       "coverage", "size", "size_nonempty", "empty_sets", "sscv", "sat"});
  r.size_strat = Table({"trial", "method", "delta", "bin", "lo", "hi", "count", "coverage", "mean_size"});
  r.difficulty_strat =
      Table({"trial", "method", "delta", "bin", "lo", "hi", "count", "coverage", "mean_size"});
  r.reliability = Table({"trial", "method", "delta", "n", "quantile_rank", "q_hat", "temperature",
                         "gamma", "u_c", "beta_a", "beta_b"});

  auto strat_rows = [](Table& table, const detail::Evaluation& ev, const StratifiedReport& rep) {
    for (const auto& b : rep.bins) {
      table.add_row({static_cast<std::int64_t>(ev.trial), detail::method_cell(ev.method), ev.delta,
                     b.range.label(), static_cast<std::int64_t>(b.range.lo),
                     static_cast<std::int64_t>(b.range.hi), static_cast<std::int64_t>(b.count),
                     detail::opt(b.coverage), detail::opt(b.mean_size)});
    }
  };

  for (const auto& trial : per_trial) {
    for (const auto& ev : trial) {
      r.per_trial.add_row({static_cast<std::int64_t>(ev.trial), detail::method_cell(ev.method),
                           ev.delta, detail::opt(ev.lambda), ev.calibration.temperature.value(),
                           static_cast<std::int64_t>(ev.calibration.n),
                           static_cast<std::int64_t>(ev.n_val), ev.calibration.q_hat, ev.coverage,
                           ev.size, detail::opt(ev.size_nonempty),
                           static_cast<std::int64_t>(ev.empty_sets), ev.sscv, detail::opt(ev.sat)});
      strat_rows(r.size_strat, ev, ev.by_size);
      strat_rows(r.difficulty_strat, ev, ev.by_difficulty);
      if (ev.method != Method::Base) {
        const auto& c = ev.calibration;
        const std::size_t l = miscoverage_count(c.n, c.delta);
        const bool has_beta = l > 0;
        r.reliability.add_row(
            {static_cast<std::int64_t>(ev.trial), detail::method_cell(ev.method), ev.delta,
             static_cast<std::int64_t>(c.n), static_cast<std::int64_t>(c.quantile_rank), c.q_hat,
             c.temperature.value(), c.gamma, c.u_c,
             has_beta ? Cell(static_cast<double>(c.n + 1 - l)) : Cell(std::monostate{}),
             has_beta ? Cell(static_cast<double>(l)) : Cell(std::monostate{})});
      }
    }
  }

  // Median over trials of each per-trial mean.
  r.summary = Table({"method", "delta", "trials", "coverage", "size", "size_nonempty", "sscv", "sat",
                     "coverage_mean", "size_mean"});
  r.sat = Table({"method", "delta", "size", "sscv", "sat"});
  for (Method method : cfg.methods) {
    for (double delta : cfg.deltas) {
      std::vector<double> cov, size, size_ne, sscv_v, sat_v;
      for (const auto& trial : per_trial) {
        for (const auto& ev : trial) {
          if (ev.method != method || ev.delta != delta) continue;
          cov.push_back(ev.coverage);
          size.push_back(ev.size);
          if (ev.size_nonempty) size_ne.push_back(*ev.size_nonempty);
          sscv_v.push_back(ev.sscv);
          if (ev.sat) sat_v.push_back(*ev.sat);
        }
      }
      auto med = [](const std::vector<double>& v) {
        return v.empty() ? Cell(std::monostate{}) : Cell(median(v));
      };
      auto mean = [](const std::vector<double>& v) {
        double s = 0.0;
        for (double x : v) s += x;
        return s / static_cast<double>(v.size());
      };
      r.summary.add_row({detail::method_cell(method), delta, static_cast<std::int64_t>(cov.size()),
                         median(cov), median(size), med(size_ne), median(sscv_v), med(sat_v),
                         mean(cov), mean(size)});
      r.sat.add_row({detail::method_cell(method), delta, med(size_ne), median(sscv_v), med(sat_v)});
    }
  }

  r.protocol = {
      {"trials", cfg.trials},
      {"calibration_fraction", cfg.calibration_fraction},
      {"seed", cfg.seed},
      {"activation", std::string(to_string(cfg.evidential.activation))},
      {"k_reg", cfg.raps.k_reg},
      {"lambda", cfg.raps.lambda},
      {"lambda_grid", cfg.lambda_grid},
      {"randomized", cfg.randomized},
      {"temperature_fit", "calibration split of each trial"},
      {"lambda_selection",
       cfg.lambda_grid.empty() ? "fixed"
                               : "per trial and delta: temperature and q_hat from the calibration "
                                 "split, minimum SSCV on the validation split"},
  };
  return r;
}

inline void write_experiment(const ExperimentResult& r, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) fail(ErrorCode::IoFailure, "cannot create " + dir.string() + ": " + ec.message());
  save_report(r.summary, dir / "summary.csv", ReportFormat::Csv);
  save_report(r.per_trial, dir / "per_trial.csv", ReportFormat::Csv);
  save_report(r.size_strat, dir / "size_strat.csv", ReportFormat::Csv);
  save_report(r.difficulty_strat, dir / "difficulty_strat.csv", ReportFormat::Csv);
  save_report(r.sat, dir / "sat.csv", ReportFormat::Csv);

  nlohmann::json rel = to_json(r.reliability);
  rel["protocol"] = r.protocol;
  std::ofstream out(dir / "reliability.json", std::ios::trunc);
  if (!out) fail(ErrorCode::IoFailure, "cannot write reliability.json");
  out << rel.dump(2) << '\n';
}

// ---------------------------------------------------------------------------
// Structured configuration (JSON). Relative paths resolve against `base_dir`.

inline ExperimentConfig experiment_config_from_json(const nlohmann::json& j,
                                                    const std::filesystem::path& base_dir = {}) {
  ExperimentConfig cfg;
  auto path = [&](const char* key) {
    std::filesystem::path p = j.at(key).get<std::string>();
    return p.is_relative() && !base_dir.empty() ? base_dir / p : p;
  };
  try {
    if (j.contains("logits")) cfg.logits_path = path("logits");
    if (j.contains("labels")) cfg.labels_path = path("labels");
    if (j.contains("format")) cfg.format = parse_file_format(j["format"].get<std::string>());
    if (j.contains("methods")) {
      cfg.methods.clear();
      for (const auto& m : j["methods"]) cfg.methods.push_back(parse_method(m.get<std::string>()));
    }
    if (j.contains("deltas")) cfg.deltas = j["deltas"].get<std::vector<double>>();
    if (j.contains("trials")) cfg.trials = j["trials"].get<std::size_t>();
    if (j.contains("calibration_fraction")) cfg.calibration_fraction = j["calibration_fraction"].get<double>();
    if (j.contains("seed")) cfg.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("activation")) cfg.evidential.activation = parse_activation(j["activation"].get<std::string>());
    if (j.contains("base_rates")) cfg.evidential.base_rates = j["base_rates"].get<std::vector<double>>();
    if (j.contains("epsilon")) cfg.evidential.epsilon = j["epsilon"].get<double>();
    if (j.contains("k_reg")) cfg.raps.k_reg = j["k_reg"].get<std::uint32_t>();
    if (j.contains("lambda")) cfg.raps.lambda = j["lambda"].get<double>();
    if (j.contains("lambda_grid")) cfg.lambda_grid = j["lambda_grid"].get<std::vector<double>>();
    if (j.contains("randomized")) cfg.randomized = j["randomized"].get<bool>();
    if (j.contains("size_bins")) cfg.size_bins = parse_bins(j["size_bins"].get<std::string>());
    if (j.contains("sscv_bins")) cfg.sscv_bins = parse_bins(j["sscv_bins"].get<std::string>());
    if (j.contains("difficulty_bins")) cfg.difficulty_bins = parse_bins(j["difficulty_bins"].get<std::string>());
    if (j.contains("out")) cfg.output_dir = path("out");
    if (j.contains("workers")) cfg.workers = j["workers"].get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::InvalidArgument, std::string("config: ") + e.what());
  }
  return cfg;
}

inline ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::IoFailure, "cannot open " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::MalformedFile, path.string() + ": " + e.what());
  }
  return experiment_config_from_json(j, path.parent_path());
}

// ---------------------------------------------------------------------------
// A calibrated predictor, persisted between `calibrate` and `predict`.

struct CalibratedPredictor {
  CalibrationResult calibration;
  ScoringOptions scoring;

  // The Base rule thresholds cumulative probability at 1 - delta.
  double threshold() const noexcept {
    return calibration.method == Method::Base ? 1.0 - calibration.delta : calibration.q_hat;
  }
};

inline CalibratedPredictor fit_predictor(const LogitDataset& holdout, Method method, double delta,
                                         ScoringOptions scoring) {
  validate_delta(delta);
  scoring.temperature = fit_temperature(holdout);
  CalibratedPredictor pred;
  pred.scoring = scoring;
  if (method == Method::Base) {
    pred.calibration.n = holdout.size();
    pred.calibration.delta = delta;
    pred.calibration.method = method;
    pred.calibration.temperature = scoring.temperature;
    pred.calibration.q_hat = 1.0 - delta;
    return pred;
  }
  const auto scores = compute_scores(method, holdout, scoring).at_labels(holdout.labels());
  pred.calibration = calibrate(scores, delta, method, scoring.temperature);
  return pred;
}

inline nlohmann::json to_json(const CalibratedPredictor& p) {
  const auto& c = p.calibration;
  auto num = [](double v) -> nlohmann::json {
    if (std::isfinite(v)) return v;
    return detail::format_double(v);
  };
  return {
      {"method", std::string(to_string(c.method))},
      {"delta", c.delta},
      {"n", c.n},
      {"quantile_rank", c.quantile_rank},
      {"q_hat", num(c.q_hat)},
      {"temperature", c.temperature.value()},
      {"gamma", c.gamma},
      {"u_c", c.u_c},
      {"activation", std::string(to_string(p.scoring.evidential.activation))},
      {"base_rates", p.scoring.evidential.base_rates},
      {"epsilon", p.scoring.evidential.epsilon},
      {"k_reg", p.scoring.raps.k_reg},
      {"lambda", p.scoring.raps.lambda},
      {"randomized", p.scoring.randomization.enabled},
      {"seed", p.scoring.randomization.seed},
  };
}

inline CalibratedPredictor predictor_from_json(const nlohmann::json& j) {
  CalibratedPredictor p;
  try {
    auto& c = p.calibration;
    c.method = parse_method(j.at("method").get<std::string>());
    c.delta = j.at("delta").get<double>();
    c.n = j.at("n").get<std::size_t>();
    c.quantile_rank = j.at("quantile_rank").get<std::size_t>();
    const auto& q = j.at("q_hat");
    if (q.is_string()) {
      const auto v = detail::parse_special_double(q.get<std::string>());
      if (!v) fail(ErrorCode::MalformedFile, "bad q_hat");
      c.q_hat = *v;
    } else {
      c.q_hat = q.get<double>();
    }
    c.temperature = Temperature(j.at("temperature").get<double>());
    c.gamma = j.at("gamma").get<double>();
    c.u_c = j.at("u_c").get<double>();
    p.scoring.temperature = c.temperature;
    p.scoring.evidential.activation = parse_activation(j.at("activation").get<std::string>());
    p.scoring.evidential.base_rates = j.at("base_rates").get<std::vector<double>>();
    p.scoring.evidential.epsilon = j.at("epsilon").get<double>();
    p.scoring.raps.k_reg = j.at("k_reg").get<std::uint32_t>();
    p.scoring.raps.lambda = j.at("lambda").get<double>();
    p.scoring.randomization.enabled = j.at("randomized").get<bool>();
    p.scoring.randomization.seed = j.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::MalformedFile, std::string("calibration record: ") + e.what());
  }
  return p;
}

}  // namespace ecp
