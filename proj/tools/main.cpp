#include "commands.hpp"

#include "epigam/errors.hpp"

#include <CLI11.hpp>

#include <functional>
#include <iostream>

int main(int argc, char** argv) {
    using namespace epigam::cli;

    CLI::App app{"epigam: interpretable compartmental forecasting"};
    app.require_subcommand(1);

    std::string config_path;
    Overrides o;
    app.add_option("--config", config_path, "JSON run configuration")->required();
    app.add_option("--horizon", o.horizon, "Forecast horizon in days");
    app.add_option("--level", o.level, "state or county");
    app.add_option("--seed", o.seed, "Seed for initial conditions, search and bootstrap");
    app.add_option("--threads", o.threads, "Worker threads for the hyperparameter search");
    app.add_option("--quantiles", o.quantiles, "Comma-separated quantiles; switches to the quantile loss");
    app.add_flag("--strict-paper-mode", o.strict, "Literal constraint and smoothness terms");
    app.add_option("--out", o.out_dir, "Output directory");

    using Command = std::function<void(const RunConfig&, std::ostream&)>;
    const std::pair<const char*, Command> commands[] = {
        {"ingest", cmd_ingest},       {"train", cmd_train},       {"forecast", cmd_forecast},
        {"evaluate", cmd_evaluate},   {"fairness", cmd_fairness}, {"simulate", cmd_simulate},
        {"gradcheck", cmd_gradcheck}, {"synth", cmd_synth},
    };
    const char* descriptions[] = {
        "Load, repair, impute and normalize the inputs",
        "Train (or search) and write the model artifact",
        "Forecast the horizon from the trained artifact",
        "Score the forecast against the observations",
        "Subgroup error distributions and underprediction rates",
        "Fixed-rate trajectory and both R_e computations",
        "Compare tape gradients with finite differences",
        "Write a synthetic input panel",
    };
    Command selected;
    for (std::size_t i = 0; i < std::size(commands); ++i) {
        app.add_subcommand(commands[i].first, descriptions[i])->callback([&, i] { selected = commands[i].second; });
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) {
            return app.exit(e);
        }
        std::cerr << error_json("usage", e.what()) << "\n";
        return 2;
    }

    try {
        RunConfig config = load_run_config(config_path);
        apply_overrides(config, o);
        selected(config, std::cout);
    } catch (const epigam::Error& e) {
        std::cerr << error_json(e.kind(), e.what()) << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << error_json("internal", e.what()) << "\n";
        return 3;
    }
    return 0;
}
