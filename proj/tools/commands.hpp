#pragma once

#include "run_config.hpp"

#include <filesystem>
#include <ostream>

namespace epigam::cli {

/// Files written and read under the output directory.
namespace files {
inline constexpr const char* prepared = "prepared.json";
inline constexpr const char* ingest_report = "ingest_report.json";
inline constexpr const char* artifact = "artifact.json";
inline constexpr const char* train_log = "train_log.jsonl";
inline constexpr const char* search_trials = "search_trials.json";
inline constexpr const char* forecast = "forecast.csv";
inline constexpr const char* metrics = "metrics.json";
inline constexpr const char* simulation = "simulation.csv";
inline constexpr const char* gradcheck = "gradcheck.json";
} // namespace files

// Each command writes its outputs under config.out_dir and prints a short
// JSON summary to `out`.

void cmd_ingest(const RunConfig& config, std::ostream& out);
/// Hyperparameter search when search.trials > 0, otherwise one training run.
void cmd_train(const RunConfig& config, std::ostream& out);
void cmd_forecast(const RunConfig& config, std::ostream& out);
void cmd_evaluate(const RunConfig& config, std::ostream& out);
/// Per covariate: fairness_<cov>.csv, fairness_<cov>.json and underprediction_<cov>.csv.
void cmd_fairness(const RunConfig& config, std::ostream& out);
/// Fixed-rate trajectory plus R_e from the closed form and the NGM.
void cmd_simulate(const RunConfig& config, std::ostream& out);
/// Throws NumericalError after writing the report when any gradient disagrees.
void cmd_gradcheck(const RunConfig& config, std::ostream& out);
/// Writes the five input CSVs of a synthetic world.
void cmd_synth(const RunConfig& config, std::ostream& out);

/// Machine-readable error line for stderr.
std::string error_json(const std::string& kind, const std::string& message);

} // namespace epigam::cli
