#pragma once

#include "epigam/evaluation.hpp"
#include "epigam/features.hpp"
#include "epigam/synthetic.hpp"
#include "epigam/training.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace epigam::cli {

struct EncoderOptions {
    int lag_depth = 7;
    std::map<Rate, std::vector<std::string>> time_varying = default_wiring();
    std::map<Rate, std::vector<std::string>> statics;
    std::map<Rate, RateBounds> bounds;
    std::map<Rate, double> initial_rates;
};

struct SearchOptions {
    /// 0 trains once with the configured hyperparameters.
    int trials = 0;
    SearchSpace space;
};

struct FairnessOptions {
    /// Static covariates used for binning.
    std::vector<std::string> covariates = {"income"};
    std::size_t bins = 4;
    std::vector<FairnessMetric> metrics = {FairnessMetric::mae, FairnessMetric::nmae, FairnessMetric::me};
    std::size_t bootstrap_samples = 1000;
};

struct SimulateOptions {
    int days = 100;
    double population = 1e6;
    /// Compartment -> count; S is the remainder of the population.
    std::map<Compartment, double> initial = {{Compartment::E, 50.0}, {Compartment::I_doc, 10.0},
                                             {Compartment::I_undoc, 20.0}};
    /// Rate -> value; missing rates use default_initial_rates().
    std::map<Rate, double> rates;
};

struct GradcheckOptions {
    int locations = 2;
    int days = 20;
    int horizon = 3;
    double step = 1e-2;
    double tolerance = 1e-4;
};

/// Everything a subcommand needs. Relative paths are resolved against the
/// directory holding the config file.
struct RunConfig {
    InputPaths inputs;
    Level level = Level::state;
    std::string anchor_date = "2020-01-21";
    int horizon = 14;
    std::optional<int> train_window;
    /// ISO date of T; empty uses the last panel day.
    std::optional<std::string> train_end_date;
    std::uint64_t seed = 0;
    int threads = 1;
    std::string out_dir = "out";

    PrepareOptions prepare;
    LossConfig loss;
    OptimizerConfig optimizer;
    double lambda_tf = 0.5;
    int zeta = 14;
    int head_iterations = 1500;
    double head_learning_rate = 0.02;
    EncoderOptions encoders;
    SearchOptions search;
    FairnessOptions fairness;
    SimulateOptions simulate;
    GradcheckOptions gradcheck;
    SyntheticOptions synthetic;

    /// Throws ConfigError when tau < 1, M <= tau, or threads < 1.
    void validate() const;
    /// Throws ConfigError naming the first input file that does not exist.
    void check_inputs_exist() const;
    TrainConfig train_config(const PanelDataset& panel) const;
};

/// Parses a JSON config. Unknown keys anywhere raise ConfigError with their
/// dotted path.
RunConfig parse_run_config(const std::string& text, const std::filesystem::path& base_dir);
RunConfig load_run_config(const std::filesystem::path& path);

/// Command line overrides applied on top of the file.
struct Overrides {
    std::optional<int> horizon;
    std::optional<std::string> level;
    std::optional<std::uint64_t> seed;
    std::optional<int> threads;
    std::optional<std::string> quantiles; // "0.1,0.5,0.9"
    bool strict = false;
    std::optional<std::string> out_dir;
};

void apply_overrides(RunConfig& config, const Overrides& overrides);

} // namespace epigam::cli
