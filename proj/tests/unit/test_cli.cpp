#include "commands.hpp"
#include "run_config.hpp"

#include "epigam/errors.hpp"

#include "test_support.hpp"

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include <filesystem>
#include <sstream>

using namespace epigam;
using namespace epigam::cli;
namespace fs = std::filesystem;

namespace {

std::string config_with(const std::string& extra) {
    return R"({"inputs": {"observations": "o.csv", "time_varying": "t.csv", "statics": "s.csv",
               "population": "p.csv", "adjacency": "a.csv"})" +
           extra + "}";
}

fs::path scratch(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / ("epigam_cli_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

} // namespace

TEST(RunConfigTest, DefaultsAndRelativePaths) {
    const RunConfig c = parse_run_config(config_with(""), "/data/run");
    EXPECT_EQ(c.inputs.observations, "/data/run/o.csv");
    EXPECT_EQ(c.out_dir, "/data/run/out");
    EXPECT_EQ(c.horizon, 14);
    EXPECT_EQ(c.level, Level::state);
    EXPECT_EQ(c.loss.kind, LossKind::squared);
    EXPECT_EQ(c.lambda_tf, 0.5);
}

TEST(RunConfigTest, AbsolutePathsAreKept) {
    const RunConfig c = parse_run_config(config_with(R"(, "out": "/tmp/elsewhere")"), "/data/run");
    EXPECT_EQ(c.out_dir, "/tmp/elsewhere");
}

TEST(RunConfigTest, NestedSections) {
    const RunConfig c = parse_run_config(
        config_with(R"(, "level": "county", "horizon": 7, "seed": 9,
                      "loss": {"kind": "quantile", "quantiles": [0.05, 0.5, 0.95], "lambda_Y": {"D": 0.3}},
                      "optimizer": {"learning_rate": 0.02, "patience": 50},
                      "encoders": {"bounds": {"alpha": [0.0, 0.3]}},
                      "fairness": {"covariates": ["density"], "bins": 10, "metrics": ["mae"]})"),
        "/x");
    EXPECT_EQ(c.level, Level::county);
    EXPECT_EQ(c.horizon, 7);
    EXPECT_EQ(c.seed, 9u);
    EXPECT_EQ(c.loss.kind, LossKind::quantile);
    EXPECT_EQ(c.loss.quantiles, (std::vector<double>{0.05, 0.5, 0.95}));
    EXPECT_EQ(c.loss.lambda_Y[static_cast<std::size_t>(Observed::D)], 0.3);
    EXPECT_EQ(c.loss.lambda_Y[static_cast<std::size_t>(Observed::Q)], 0.1);
    EXPECT_EQ(c.optimizer.learning_rate, 0.02);
    EXPECT_EQ(c.optimizer.patience, 50);
    EXPECT_EQ(c.encoders.bounds.at(Rate::alpha).upper, 0.3);
    EXPECT_EQ(c.fairness.bins, 10u);
    EXPECT_EQ(c.fairness.metrics, (std::vector<FairnessMetric>{FairnessMetric::mae}));
}

TEST(RunConfigTest, UnknownKeysReportDottedPath) {
    try {
        parse_run_config(config_with(R"(, "optimizer": {"learning_rte": 0.1})"), "/x");
        FAIL();
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("optimizer.learning_rte"), std::string::npos) << e.what();
    }
    EXPECT_THROW(parse_run_config(config_with(R"(, "colour": 1)"), "/x"), ConfigError);
}

TEST(RunConfigTest, InvalidValuesAreConfigErrors) {
    EXPECT_THROW(parse_run_config(config_with(R"(, "horizon": 0)"), "/x"), ConfigError);
    EXPECT_THROW(parse_run_config(config_with(R"(, "threads": 0)"), "/x"), ConfigError);
    EXPECT_THROW(parse_run_config(config_with(R"(, "level": "city")"), "/x"), ConfigError);
    EXPECT_THROW(parse_run_config(config_with(R"(, "loss": {"quantiles": [0.9, 0.1]})"), "/x"), ConfigError);
    EXPECT_THROW(parse_run_config("{not json", "/x"), ConfigError);
}

TEST(RunConfigTest, OverridesTakePrecedence) {
    RunConfig c = parse_run_config(config_with(""), "/x");
    Overrides o;
    o.horizon = 21;
    o.level = "county";
    o.seed = 4;
    o.threads = 3;
    o.quantiles = "0.2,0.5,0.8";
    o.strict = true;
    o.out_dir = "/tmp/o";
    apply_overrides(c, o);
    EXPECT_EQ(c.horizon, 21);
    EXPECT_EQ(c.level, Level::county);
    EXPECT_EQ(c.seed, 4u);
    EXPECT_EQ(c.threads, 3);
    EXPECT_EQ(c.loss.kind, LossKind::quantile);
    EXPECT_EQ(c.loss.quantiles, (std::vector<double>{0.2, 0.5, 0.8}));
    EXPECT_TRUE(c.loss.strict);
    EXPECT_EQ(c.out_dir, "/tmp/o");
}

TEST(RunConfigTest, MissingInputNamesTheFile) {
    const RunConfig c = parse_run_config(config_with(""), "/nonexistent");
    try {
        c.check_inputs_exist();
        FAIL();
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("o.csv"), std::string::npos) << e.what();
    }
}

TEST(Commands, IngestOfCleanInputHasNoRepairs) {
    RunConfig c = parse_run_config(config_with(R"(, "anchor_date": "2020-03-01",
                                                  "synthetic": {"locations": 2, "days": 40, "noise": 0.0})"),
                                   scratch("clean"));
    c.inputs = {(fs::path(c.out_dir) / "observations.csv").string(), (fs::path(c.out_dir) / "time_varying.csv").string(),
                (fs::path(c.out_dir) / "statics.csv").string(), (fs::path(c.out_dir) / "population.csv").string(),
                (fs::path(c.out_dir) / "adjacency.csv").string()};
    std::ostringstream out;
    cmd_synth(c, out);
    out.str("");
    cmd_ingest(c, out);
    const auto summary = nlohmann::json::parse(out.str());
    EXPECT_EQ(summary["repairs"], 0);
    EXPECT_EQ(summary["imputations"], 0);
    EXPECT_EQ(summary["locations"], 2);
    EXPECT_TRUE(fs::exists(fs::path(c.out_dir) / files::prepared));
    const auto report = nlohmann::json::parse(epigam::testing::read_text(fs::path(c.out_dir) / files::ingest_report));
    EXPECT_TRUE(report["repairs"].empty());
}

TEST(Commands, IngestOfNoisyFixtureRecordsEveryRepair) {
    RunConfig c = load_run_config(fs::path(EPIGAM_FIXTURE_DIR) / "synthetic" / "config.json");
    c.out_dir = scratch("fixture").string();
    std::ostringstream out;
    cmd_ingest(c, out);
    const auto summary = nlohmann::json::parse(out.str());
    const auto report = nlohmann::json::parse(epigam::testing::read_text(fs::path(c.out_dir) / files::ingest_report));
    EXPECT_EQ(summary["repairs"], report["repairs"].size());
    for (const auto& r : report["repairs"]) {
        EXPECT_LT(r["from"].get<double>(), r["to"].get<double>());
    }
}

TEST(Commands, ForecastWithoutArtifactIsArtifactError) {
    RunConfig c = load_run_config(fs::path(EPIGAM_FIXTURE_DIR) / "synthetic" / "config.json");
    c.out_dir = scratch("noartifact").string();
    std::ostringstream out;
    try {
        cmd_forecast(c, out);
        FAIL();
    } catch (const ArtifactError& e) {
        EXPECT_EQ(e.kind(), "artifact");
        EXPECT_NE(std::string(e.what()).find("train"), std::string::npos) << e.what();
    }
}

TEST(Commands, SimulateReportsBothReproductionNumbers) {
    RunConfig c = parse_run_config(config_with(R"(, "simulate": {"days": 30, "rates": {"gamma": 0.0,
                                                  "beta_undoc": 0.3, "rho_I_undoc": 0.1}})"),
                                   scratch("simulate"));
    std::ostringstream out;
    cmd_simulate(c, out);
    const auto j = nlohmann::json::parse(out.str());
    EXPECT_NEAR(j["R_e_closed_form"].get<double>(), 3.0, 1e-12);
    EXPECT_NEAR(j["R_e_ngm"].get<double>(), 3.0, 1e-10);
    const std::string csv = epigam::testing::read_text(fs::path(c.out_dir) / files::simulation);
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 32);
}

TEST(Commands, ErrorJsonShape) {
    const auto j = nlohmann::json::parse(error_json("configuration", "bad \"key\""));
    EXPECT_EQ(j["error"]["kind"], "configuration");
    EXPECT_EQ(j["error"]["message"], "bad \"key\"");
}
