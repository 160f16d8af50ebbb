// Command-line front end: synthetic data, calibration, prediction,
// evaluation, full experiments, and RAPS lambda search.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "ecp/ecp.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const std::vector<double> kDefaultLambdaGrid{1e-5, 1e-4, 8e-4, 1e-3, 15e-4, 2e-3, 1e-2, 0.1, 1.0};

struct DataArgs {
  std::string logits;
  std::string labels;
  std::string format = "binary";

  void add(CLI::App* cmd, bool labels_required = true) {
    cmd->add_option("--logits", logits, "Logit file")->required();
    auto* opt = cmd->add_option("--labels", labels, "Label file");
    if (labels_required) opt->required();
    cmd->add_option("--format", format, "binary or csv")->check(CLI::IsMember({"binary", "bin", "csv"}));
  }

  ecp::LogitDataset load() const {
    return ecp::load_logits(logits, labels, ecp::parse_file_format(format));
  }
};

struct ScoringArgs {
  std::string activation = "relu";
  std::uint32_t k_reg = 5;
  double lambda = 0.1;
  bool randomized = false;
  std::uint64_t seed = 0;

  void add(CLI::App* cmd) {
    cmd->add_option("--activation", activation, "Evidence activation: relu, softplus, exp")
        ->check(CLI::IsMember({"relu", "softplus", "exp"}));
    cmd->add_option("--k-reg", k_reg, "RAPS k_reg");
    cmd->add_option("--lambda", lambda, "RAPS lambda");
    cmd->add_flag("--randomized", randomized, "Randomized APS/RAPS scores");
    cmd->add_option("--seed", seed, "Seed");
  }

  ecp::ScoringOptions options() const {
    ecp::ScoringOptions o;
    o.evidential.activation = ecp::parse_activation(activation);
    o.raps = {k_reg, lambda};
    o.randomization = {randomized, seed};
    return o;
  }
};

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) ecp::fail(ecp::ErrorCode::IoFailure, "cannot write " + path.string());
  out << text;
}

ecp::CalibratedPredictor read_predictor(const fs::path& path) {
  std::ifstream in(path);
  if (!in) ecp::fail(ecp::ErrorCode::IoFailure, "cannot open " + path.string());
  try {
    return ecp::predictor_from_json(json::parse(in));
  } catch (const json::exception& e) {
    ecp::fail(ecp::ErrorCode::MalformedFile, path.string() + ": " + e.what());
  }
}

ecp::Table stratified_table(const ecp::StratifiedReport& rep) {
  ecp::Table t({"bin", "lo", "hi", "count", "coverage", "mean_size"});
  for (const auto& b : rep.bins) {
    t.add_row({b.range.label(), static_cast<std::int64_t>(b.range.lo),
               static_cast<std::int64_t>(b.range.hi), static_cast<std::int64_t>(b.count),
               ecp::optional_cell(b.coverage), ecp::optional_cell(b.mean_size)});
  }
  return t;
}

std::string join_labels(const std::vector<std::uint32_t>& set) {
  std::ostringstream s;
  for (std::size_t i = 0; i < set.size(); ++i) s << (i ? " " : "") << set[i];
  return s.str();
}

int run(int argc, char** argv) {
  CLI::App app{"Evidential conformal prediction over precomputed classifier logits"};
  app.require_subcommand(1);

  // synth ------------------------------------------------------------------
  auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic logit/label dataset");
  ecp::SynthConfig synth_cfg;
  std::string synth_logits, synth_labels, synth_format = "binary";
  synth_cmd->add_option("--classes", synth_cfg.classes, "Label count K");
  synth_cmd->add_option("--separation", synth_cfg.separation, "Distance of class means from the origin");
  synth_cmd->add_option("--n", synth_cfg.examples, "Example count N");
  synth_cmd->add_option("--seed", synth_cfg.seed, "Seed");
  synth_cmd->add_option("--logit-scale", synth_cfg.logit_scale, "Multiplier applied to emitted logits");
  synth_cmd->add_option("--format", synth_format)->check(CLI::IsMember({"binary", "bin", "csv"}));
  synth_cmd->add_option("--out-logits", synth_logits)->required();
  synth_cmd->add_option("--out-labels", synth_labels)->required();

  // calibrate --------------------------------------------------------------
  auto* cal_cmd = app.add_subcommand("calibrate", "Fit temperature and q_hat on a holdout file");
  DataArgs cal_data;
  ScoringArgs cal_scoring;
  std::string cal_method = "ecp", cal_out = "calibration.json";
  double cal_delta = 0.1;
  cal_data.add(cal_cmd);
  cal_scoring.add(cal_cmd);
  cal_cmd->add_option("--method", cal_method)->check(CLI::IsMember({"ecp", "base", "aps", "raps", "las"}));
  cal_cmd->add_option("--delta", cal_delta, "Coverage error level");
  cal_cmd->add_option("--out", cal_out, "Calibration record (JSON)");

  // predict ----------------------------------------------------------------
  auto* pred_cmd = app.add_subcommand("predict", "Build prediction sets from a calibration record");
  DataArgs pred_data;
  std::string pred_calibration, pred_out = "sets.csv";
  pred_data.add(pred_cmd, false);
  pred_cmd->add_option("--calibration", pred_calibration)->required();
  pred_cmd->add_option("--out", pred_out, "Prediction sets (CSV)");

  // evaluate ---------------------------------------------------------------
  auto* eval_cmd = app.add_subcommand("evaluate", "Score prediction sets against labels");
  DataArgs eval_data;
  std::string eval_calibration, eval_out, eval_bins;
  eval_data.add(eval_cmd);
  eval_cmd->add_option("--calibration", eval_calibration)->required();
  eval_cmd->add_option("--bins", eval_bins, "Set-size strata for SSCV, e.g. 0-1,2-3,4-10");
  eval_cmd->add_option("--out", eval_out, "Directory for metric tables");

  // experiment -------------------------------------------------------------
  auto* exp_cmd = app.add_subcommand("experiment", "Run the multi-trial evaluation protocol");
  std::string exp_config, exp_logits, exp_labels, exp_format, exp_activation, exp_bins, exp_out;
  std::vector<std::string> exp_methods;
  std::vector<double> exp_deltas, exp_grid;
  std::optional<std::size_t> exp_trials, exp_workers;
  std::optional<double> exp_frac, exp_lambda;
  std::optional<std::uint32_t> exp_kreg;
  std::optional<std::uint64_t> exp_seed;
  bool exp_randomized = false;
  exp_cmd->add_option("--config", exp_config, "JSON experiment config");
  exp_cmd->add_option("--logits", exp_logits);
  exp_cmd->add_option("--labels", exp_labels);
  exp_cmd->add_option("--format", exp_format)->check(CLI::IsMember({"binary", "bin", "csv"}));
  exp_cmd->add_option("--method", exp_methods, "Methods (comma separated)")->delimiter(',');
  exp_cmd->add_option("--delta", exp_deltas, "Coverage error levels (comma separated)")->delimiter(',');
  exp_cmd->add_option("--trials", exp_trials);
  exp_cmd->add_option("--cal-frac", exp_frac);
  exp_cmd->add_option("--activation", exp_activation)->check(CLI::IsMember({"relu", "softplus", "exp"}));
  exp_cmd->add_option("--k-reg", exp_kreg);
  exp_cmd->add_option("--lambda", exp_lambda);
  exp_cmd->add_option("--lambda-grid", exp_grid, "Pick RAPS lambda per trial by minimum SSCV")->delimiter(',');
  exp_cmd->add_option("--seed", exp_seed);
  exp_cmd->add_option("--bins", exp_bins, "Set-size strata, e.g. 0-1,2-3,4-10");
  exp_cmd->add_option("--out", exp_out, "Output directory");
  exp_cmd->add_option("--workers", exp_workers, "Parallel trials (0 = all cores)");
  exp_cmd->add_flag("--randomized", exp_randomized);

  // lambda-search ----------------------------------------------------------
  auto* ls_cmd = app.add_subcommand("lambda-search", "Pick the RAPS lambda with minimum SSCV");
  DataArgs ls_data;
  std::vector<double> ls_grid = kDefaultLambdaGrid;
  std::uint32_t ls_kreg = 5;
  double ls_delta = 0.1, ls_frac = 0.3;
  std::uint64_t ls_seed = 0, ls_trial = 0;
  std::string ls_bins, ls_out;
  bool ls_randomized = false;
  ls_data.add(ls_cmd);
  ls_cmd->add_option("--lambda-grid", ls_grid)->delimiter(',');
  ls_cmd->add_option("--k-reg", ls_kreg);
  ls_cmd->add_option("--delta", ls_delta);
  ls_cmd->add_option("--cal-frac", ls_frac);
  ls_cmd->add_option("--seed", ls_seed);
  ls_cmd->add_option("--trial", ls_trial, "Trial index selecting the split");
  ls_cmd->add_option("--bins", ls_bins);
  ls_cmd->add_option("--out", ls_out, "Per-lambda report (CSV)");
  ls_cmd->add_flag("--randomized", ls_randomized);

  CLI11_PARSE(app, argc, argv);

  if (*synth_cmd) {
    const auto data = ecp::synth(synth_cfg);
    ecp::save_logits(data, synth_logits, synth_labels, ecp::parse_file_format(synth_format));
    std::cout << json{{"n", data.size()}, {"classes", data.num_classes()},
                      {"accuracy", data.top1_accuracy()}}.dump()
              << '\n';
  } else if (*cal_cmd) {
    const auto data = cal_data.load();
    const auto pred =
        ecp::fit_predictor(data, ecp::parse_method(cal_method), cal_delta, cal_scoring.options());
    const auto record = ecp::to_json(pred);
    write_text(cal_out, record.dump(2) + "\n");
    std::cout << record.dump() << '\n';
  } else if (*pred_cmd) {
    const auto pred = read_predictor(pred_calibration);
    const bool labelled = !pred_data.labels.empty();
    const auto format = ecp::parse_file_format(pred_data.format);
    std::optional<ecp::LogitDataset> data;
    if (labelled) {
      data = pred_data.load();
    } else {
      auto m = format == ecp::FileFormat::Binary ? ecp::read_logits_binary(pred_data.logits)
                                                 : ecp::read_logits_csv(pred_data.logits);
      // Placeholder labels: scoring does not read them.
      data.emplace(std::move(m.values), std::vector<std::uint32_t>(m.rows, 0), m.cols);
    }
    const auto scores = ecp::compute_scores(pred.calibration.method, *data, pred.scoring);
    const auto sets = ecp::predict_sets(scores, pred.threshold());
    ecp::Table t = labelled ? ecp::Table({"index", "size", "labels", "label", "hit"})
                            : ecp::Table({"index", "size", "labels"});
    for (std::size_t i = 0; i < sets.size(); ++i) {
      std::vector<ecp::Cell> row{static_cast<std::int64_t>(i),
                                 static_cast<std::int64_t>(sets[i].size()), join_labels(sets[i])};
      if (labelled) {
        const auto y = data->label(i);
        row.emplace_back(static_cast<std::int64_t>(y));
        row.emplace_back(static_cast<std::int64_t>(
            std::binary_search(sets[i].begin(), sets[i].end(), y)));
      }
      t.add_row(std::move(row));
    }
    ecp::save_report(t, pred_out, ecp::ReportFormat::Csv);
  } else if (*eval_cmd) {
    const auto pred = read_predictor(eval_calibration);
    const auto data = eval_data.load();
    const std::size_t K = data.num_classes();
    const auto scores = ecp::compute_scores(pred.calibration.method, data, pred.scoring);
    const auto batch = ecp::build_sets(scores, pred.threshold(), data.labels());
    const auto bins = eval_bins.empty() ? ecp::sscv_size_bins(K) : ecp::parse_bins(eval_bins);
    ecp::Table metrics({"method", "delta", "n", "coverage", "size", "size_nonempty", "sscv", "sat"});
    std::optional<double> size_ne, sat;
    if (std::any_of(batch.sizes.begin(), batch.sizes.end(), [](auto s) { return s > 0; })) {
      size_ne = ecp::mean_set_size(batch, true);
    }
    const double sscv = ecp::sscv(batch, bins, pred.calibration.delta);
    if (size_ne) sat = ecp::sat_from(sscv, *size_ne);
    metrics.add_row({std::string(ecp::to_string(pred.calibration.method)), pred.calibration.delta,
                     static_cast<std::int64_t>(batch.size()), ecp::marginal_coverage(batch),
                     ecp::mean_set_size(batch, false), ecp::optional_cell(size_ne), sscv,
                     ecp::optional_cell(sat)});
    if (!eval_out.empty()) {
      fs::create_directories(eval_out);
      ecp::save_report(metrics, fs::path(eval_out) / "metrics.json", ecp::ReportFormat::Json);
      ecp::save_report(stratified_table(ecp::size_stratified(batch, ecp::standard_size_bins(K))),
                       fs::path(eval_out) / "size_strat.csv", ecp::ReportFormat::Csv);
      ecp::save_report(
          stratified_table(ecp::difficulty_stratified(batch, ecp::standard_difficulty_bins(K))),
          fs::path(eval_out) / "difficulty_strat.csv", ecp::ReportFormat::Csv);
    }
    std::cout << ecp::to_json(metrics).dump() << '\n';
  } else if (*exp_cmd) {
    ecp::ExperimentConfig cfg =
        exp_config.empty() ? ecp::ExperimentConfig{} : ecp::load_experiment_config(exp_config);
    if (!exp_logits.empty()) cfg.logits_path = exp_logits;
    if (!exp_labels.empty()) cfg.labels_path = exp_labels;
    if (!exp_format.empty()) cfg.format = ecp::parse_file_format(exp_format);
    if (!exp_methods.empty()) {
      cfg.methods.clear();
      for (const auto& m : exp_methods) cfg.methods.push_back(ecp::parse_method(m));
    }
    if (!exp_deltas.empty()) cfg.deltas = exp_deltas;
    if (exp_trials) cfg.trials = *exp_trials;
    if (exp_frac) cfg.calibration_fraction = *exp_frac;
    if (!exp_activation.empty()) cfg.evidential.activation = ecp::parse_activation(exp_activation);
    if (exp_kreg) cfg.raps.k_reg = *exp_kreg;
    if (exp_lambda) cfg.raps.lambda = *exp_lambda;
    if (!exp_grid.empty()) cfg.lambda_grid = exp_grid;
    if (exp_seed) cfg.seed = *exp_seed;
    if (!exp_bins.empty()) cfg.size_bins = cfg.sscv_bins = ecp::parse_bins(exp_bins);
    if (!exp_out.empty()) cfg.output_dir = exp_out;
    if (exp_workers) cfg.workers = *exp_workers;
    if (exp_randomized) cfg.randomized = true;
    if (cfg.logits_path.empty() || cfg.labels_path.empty()) {
      ecp::fail(ecp::ErrorCode::InvalidArgument, "experiment needs --logits and --labels (or a config)");
    }
    const auto data = ecp::load_logits(cfg.logits_path, cfg.labels_path, cfg.format);
    const auto result = ecp::run_experiment(data, cfg);
    ecp::write_experiment(result, cfg.output_dir);
    std::cout << ecp::render_csv(result.summary);
  } else if (*ls_cmd) {
    const auto data = ls_data.load();
    const auto idx = ecp::split(data, {ls_frac, ls_seed, ls_trial});
    const auto bins = ls_bins.empty() ? ecp::sscv_size_bins(data.num_classes()) : ecp::parse_bins(ls_bins);
    const auto res = ecp::raps_lambda_search(data, idx, ls_grid, ls_kreg, ls_delta, bins,
                                             {ls_randomized, ls_seed});
    ecp::Table t({"lambda", "q_hat", "coverage", "size", "sscv", "sat", "best"});
    for (const auto& ev : res.evaluations) {
      t.add_row({ev.lambda, ev.q_hat, ev.coverage, ev.mean_size, ev.sscv, ecp::optional_cell(ev.sat),
                 static_cast<std::int64_t>(ev.lambda == res.best_lambda)});
    }
    if (!ls_out.empty()) ecp::save_report(t, ls_out, ecp::ReportFormat::Csv);
    std::cout << json{{"best_lambda", res.best_lambda}, {"temperature", res.temperature.value()}}.dump()
              << '\n';
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const ecp::Error& e) {
    std::cerr << json{{"error", {{"code", std::string(ecp::to_string(e.code()))}, {"message", e.detail()}}}}.dump()
              << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << json{{"error", {{"code", "Internal"}, {"message", e.what()}}}}.dump() << '\n';
    return 1;
  }
}
