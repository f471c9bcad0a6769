#include "commands.hpp"

#include "epigam/errors.hpp"
#include "epigam/evaluation.hpp"
#include "epigam/gradcheck.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <fstream>
#include <sstream>

namespace epigam::cli {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

fs::path out_path(const RunConfig& c, const std::string& name) { return fs::path(c.out_dir) / name; }

void write_file(const fs::path& path, const std::string& content) {
    fs::create_directories(path.parent_path());
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) {
        throw IoError("cannot write '" + path.string() + "'");
    }
    f << content;
    if (!f) {
        throw IoError("failed writing '" + path.string() + "'");
    }
}

std::string read_artifact_file(const fs::path& path, const char* produced_by) {
    std::ifstream f(path, std::ios::binary);
    if (!f) {
        throw ArtifactError("missing artifact '" + path.string() + "'; run '" + produced_by + "' first");
    }
    std::ostringstream text;
    text << f.rdbuf();
    return text.str();
}

PanelDataset load_prepared(const RunConfig& c) {
    return panel_from_json(read_artifact_file(out_path(c, files::prepared), "ingest"));
}

TrainArtifact load_artifact(const RunConfig& c) {
    return TrainArtifact::from_json(read_artifact_file(out_path(c, files::artifact), "train"));
}

std::string train_log_jsonl(const std::vector<TrainLogEntry>& log) {
    std::string out;
    for (const auto& e : log) {
        ordered_json j = {{"trial", e.trial},
                          {"phase", e.phase},
                          {"iteration", e.iteration},
                          {"train_loss", e.train_loss},
                          {"validation_fit", e.validation_fit}};
        out += j.dump() + "\n";
    }
    return out;
}

ordered_json trials_json(const SearchResult& s) {
    ordered_json arr = ordered_json::array();
    for (const auto& t : s.trials) {
        ordered_json j = {{"index", t.index},
                          {"learning_rate", t.learning_rate},
                          {"z", t.z},
                          {"lambda_comp", t.lambda_comp},
                          {"lambda_smooth", t.lambda_smooth},
                          {"lambda_ls", t.lambda_ls},
                          {"seed", t.seed}};
        if (std::isfinite(t.score)) {
            j["score"] = t.score;
        } else {
            j["score"] = nullptr;
            j["error"] = t.error;
        }
        arr.push_back(j);
    }
    return {{"best_index", s.best_index}, {"trials", arr}};
}

} // namespace

std::string error_json(const std::string& kind, const std::string& message) {
    return ordered_json{{"error", {{"kind", kind}, {"message", message}}}}.dump();
}

void cmd_ingest(const RunConfig& c, std::ostream& out) {
    c.check_inputs_exist();
    IngestReport report;
    PanelDataset panel = load_panel(c.inputs, c.level, c.anchor_date, report);
    prepare(panel, c.prepare, report);
    write_file(out_path(c, files::prepared), panel_to_json(panel));
    write_file(out_path(c, files::ingest_report), report.to_json());
    out << ordered_json{{"locations", panel.locations.size()},
                        {"days", panel.num_days},
                        {"imputations", report.imputation_count()},
                        {"repairs", report.repairs.size()},
                        {"excluded_locations", report.excluded_locations}}
               .dump()
        << "\n";
}

void cmd_train(const RunConfig& c, std::ostream& out) {
    const PanelDataset panel = load_prepared(c);
    const TrainConfig tc = c.train_config(panel);
    TrainResult result;
    if (c.search.trials > 0) {
        SearchResult s = hyperparameter_search(panel, tc, c.search.space, c.search.trials, c.seed, c.threads);
        write_file(out_path(c, files::search_trials), trials_json(s).dump(2) + "\n");
        result = std::move(s.best);
    } else {
        result = train(panel, tc);
    }
    write_file(out_path(c, files::artifact), result.artifact.to_json());
    write_file(out_path(c, files::train_log), train_log_jsonl(result.log));
    out << ordered_json{{"T", result.artifact.T},
                        {"validation_score", result.artifact.validation_score},
                        {"phase1_iterations", result.phase1_iterations},
                        {"best_iteration", result.best_iteration},
                        {"locations", result.artifact.locations.size()}}
               .dump()
        << "\n";
}

void cmd_forecast(const RunConfig& c, std::ostream& out) {
    const TrainArtifact artifact = load_artifact(c);
    const PanelDataset panel = load_prepared(c);
    const auto forecasts = forecast(artifact, panel, c.horizon);
    write_file(out_path(c, files::forecast), forecast_to_csv(artifact, forecasts, c.horizon));
    out << ordered_json{{"T", artifact.T}, {"horizon", c.horizon}, {"locations", forecasts.size()}}.dump() << "\n";
}

void cmd_evaluate(const RunConfig& c, std::ostream& out) {
    const PanelDataset panel = load_prepared(c);
    const fs::path csv = out_path(c, files::forecast);
    if (!fs::exists(csv)) {
        throw ArtifactError("missing artifact '" + csv.string() + "'; run 'forecast' first");
    }
    const ForecastFrame frame = read_forecast_frame(csv.string(), panel);
    const std::string metrics = metrics_json(frame);
    write_file(out_path(c, files::metrics), metrics);
    out << metrics;
}

void cmd_fairness(const RunConfig& c, std::ostream& out) {
    const PanelDataset panel = load_prepared(c);
    const fs::path csv = out_path(c, files::forecast);
    if (!fs::exists(csv)) {
        throw ArtifactError("missing artifact '" + csv.string() + "'; run 'forecast' first");
    }
    const ForecastFrame frame = read_forecast_frame(csv.string(), panel);
    ordered_json summary = ordered_json::object();
    for (const auto& cov : c.fairness.covariates) {
        const auto it = panel.statics.find(cov);
        if (it == panel.statics.end()) {
            throw LookupError("fairness covariate '" + cov + "' is not a static covariate of the panel");
        }
        std::map<std::string, double> values;
        for (const auto& loc : frame.locations()) {
            const double v = it->second[panel.location_index(loc)];
            values[loc] = panel.normalization ? panel.normalization->denormalize(cov, v) : v;
        }
        const SubgroupBinning binning = bin_locations(values, cov, c.fairness.bins);
        const FairnessReport report = fairness_report(frame, binning, c.fairness.metrics);
        const auto under = underprediction_rates(frame, binning, c.fairness.bootstrap_samples, c.seed);
        write_file(out_path(c, "fairness_" + cov + ".csv"), report.to_csv());
        write_file(out_path(c, "fairness_" + cov + ".json"), report.to_json());
        write_file(out_path(c, "underprediction_" + cov + ".csv"), underprediction_csv(binning, under));
        ordered_json bins = ordered_json::array();
        for (std::size_t b = 0; b < under.size(); ++b) {
            bins.push_back({{"bin", b},
                            {"eligible", under[b].eligible},
                            {"underprediction_rate", under[b].rate ? ordered_json(*under[b].rate) : ordered_json()}});
        }
        summary[cov] = bins;
    }
    out << summary.dump() << "\n";
}

void cmd_simulate(const RunConfig& c, std::ostream& out) {
    const SimulateOptions& s = c.simulate;
    if (s.days < 1) {
        throw ConfigError("simulate.days must be >= 1");
    }
    CompartmentState initial;
    initial.N = s.population;
    double seeded = 0.0;
    for (const auto& [comp, v] : s.initial) {
        if (comp == Compartment::S) {
            throw ConfigError("simulate.initial must not set S; it is the population remainder");
        }
        initial[comp] = v;
        if (comp != Compartment::C && comp != Compartment::V) {
            seeded += v;
        }
    }
    initial[Compartment::S] = s.population - seeded;
    if (initial[Compartment::S] < 0.0) {
        throw ConfigError("simulate.initial exceeds the population");
    }
    RateSet rates;
    const auto defaults = default_initial_rates();
    for (Rate r : all_rates()) {
        const auto it = s.rates.find(r);
        rates[r] = it != s.rates.end() ? it->second : defaults[static_cast<std::size_t>(r)];
    }
    const Trajectory traj = simulate(initial, std::vector<RateSet>(static_cast<std::size_t>(s.days), rates));
    write_file(out_path(c, files::simulation), trajectory_to_csv(traj));
    const double closed = effective_reproduction_number(rates);
    const double ngm = ngm_spectral_radius(rates);
    out << ordered_json{{"R_e_closed_form", closed}, {"R_e_ngm", ngm}, {"days", s.days}}.dump() << "\n";
}

void cmd_gradcheck(const RunConfig& c, std::ostream& out) {
    const PanelDataset full = load_prepared(c);
    const GradcheckOptions& g = c.gradcheck;
    if (g.locations < 1 || g.days < 3) {
        throw ConfigError("gradcheck needs at least one location and three days");
    }
    std::vector<std::string> keep(full.locations.begin(),
                                  full.locations.begin() +
                                      std::min<std::ptrdiff_t>(g.locations, std::ssize(full.locations)));
    const PanelDataset panel = full.subset(keep).truncated(std::min(g.days, full.num_days));
    RunConfig small = c;
    small.horizon = g.horizon;
    small.train_window.reset();
    small.train_end_date.reset();
    const TrainConfig tc = small.train_config(panel);
    const TrainingProblem problem(panel, tc);
    ad::ParameterStore store = problem.initial_parameters(c.seed);
    const PhaseSpec phase = problem.phase1();
    const auto report = ad::gradient_check(
        store, [&](ad::Tape& tape, const ad::ParameterStore& s) { return problem.taped_loss(tape, s, phase); },
        [&](const ad::ParameterStore& s) { return problem.value_loss(s, phase).total; },
        ad::GradCheckOptions{g.step, true, g.tolerance, 1e-8});
    write_file(out_path(c, files::gradcheck), report.to_json());
    out << ordered_json{{"parameters", report.entries.size()},
                        {"max_error", report.max_error},
                        {"passed", report.passed}}
               .dump()
        << "\n";
    if (!report.passed) {
        throw NumericalError("gradient check failed: max error " + format_double(report.max_error));
    }
}

void cmd_synth(const RunConfig& c, std::ostream& out) {
    const SyntheticWorld world = make_synthetic_world(c.synthetic);
    fs::create_directories(c.out_dir);
    write_synthetic_csv(world, c.out_dir);
    out << ordered_json{{"locations", world.panel.locations.size()},
                        {"days", world.panel.num_days},
                        {"dir", c.out_dir}}
               .dump()
        << "\n";
}

} // namespace epigam::cli
