#pragma once

#include "epigam/encoders.hpp"

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace epigam {

enum class Level { state, county };
std::string_view level_name(Level level);
Level parse_level(std::string_view text);

/// Regime start threshold on confirmed cases: 10 for states, 3 for counties.
double regime_threshold(Level level);

/// Supervised series. Q is the confirmed total I_doc + R_doc + H + D.
enum class Observed : std::size_t { Q, D, H, C, V, R_doc };
inline constexpr std::size_t kNumObserved = 6;
std::string_view observed_name(Observed o);
std::optional<Observed> observed_from_name(std::string_view name);
const std::array<Observed, kNumObserved>& all_observed();

/// Day-indexed values with an explicit presence mask.
struct MaskedSeries {
    std::vector<double> values;
    std::vector<std::uint8_t> present;

    MaskedSeries() = default;
    explicit MaskedSeries(std::size_t n) : values(n, 0.0), present(n, 0) {}
    bool has(std::size_t day) const { return day < present.size() && present[day] != 0; }
    std::size_t size() const noexcept { return values.size(); }
};

/// Undirected location adjacency without self-loops.
class GeoGraph {
public:
    void add_edge(const std::string& a, const std::string& b);
    const std::set<std::string>& neighbors(const std::string& location) const;
    const std::map<std::string, std::set<std::string>>& adjacency() const noexcept { return adjacency_; }
    std::size_t edge_count() const;

private:
    std::map<std::string, std::set<std::string>> adjacency_;
};

/// Per-covariate min/max pooled over all locations and days.
struct NormalizationTable {
    std::map<std::string, std::pair<double, double>> ranges;

    double normalize(const std::string& covariate, double x) const;
    double denormalize(const std::string& covariate, double y) const;
    bool operator==(const NormalizationTable&) const = default;
};

/// Aligned observations and covariates for a set of locations. Missing
/// covariate values are NaN until imputation.
struct PanelDataset {
    Level level = Level::state;
    std::string anchor_date = "2020-01-21";
    int num_days = 0;
    std::vector<std::string> locations;
    std::vector<double> population;
    std::vector<std::array<MaskedSeries, kNumObserved>> observations;
    std::map<std::string, std::vector<std::vector<double>>> time_varying; // id -> [location][day]
    std::map<std::string, std::vector<double>> statics;                   // id -> [location]
    GeoGraph graph;
    std::optional<NormalizationTable> normalization;

    std::size_t location_index(const std::string& id) const;
    const MaskedSeries& series(std::size_t location, Observed o) const {
        return observations.at(location)[static_cast<std::size_t>(o)];
    }
    MaskedSeries& series(std::size_t location, Observed o) {
        return observations.at(location)[static_cast<std::size_t>(o)];
    }
    LocationCovariates covariates_of(std::size_t location) const;
    /// Copy restricted to days [0, days).
    PanelDataset truncated(int days) const;
    /// Copy restricted to the given locations (order preserved).
    PanelDataset subset(const std::vector<std::string>& keep) const;
};

struct ImputationRecord {
    std::string covariate;
    std::string location;
    int day = -1; // -1 for static covariates
    double value = 0.0;
    bool derived = false; // derived covariates (lagged case counts, graph features)
};

struct RepairRecord {
    std::string location;
    std::string series;
    int day = 0;
    double from = 0.0;
    double to = 0.0;
};

struct IngestReport {
    std::vector<ImputationRecord> imputations;
    std::vector<RepairRecord> repairs;
    std::vector<std::string> excluded_locations;
    std::vector<std::string> warnings;

    std::size_t imputation_count(bool include_derived = false) const;
    std::string to_json() const;
};

struct InputPaths {
    std::string observations;
    std::string time_varying;
    std::string statics;
    std::string population;
    std::string adjacency;
};

/// Reads the five CSV inputs. Days are counted from `anchor_date`; rows
/// dated earlier are dropped with a warning.
PanelDataset load_panel(const InputPaths& paths, Level level, const std::string& anchor_date, IngestReport& report);

// Individual readers; each returns rows keyed as documented in the README.
struct ObservationRow {
    std::string location;
    std::string date;
    std::array<std::optional<double>, kNumObserved> values;
};
std::vector<ObservationRow> read_observations_csv(const std::string& path);

/// Imputation result for one series.
struct ImputedSeries {
    std::vector<double> values;
    std::vector<int> filled_days;
    bool all_missing = false;
};

/// Forward fill, then backward fill the leading gap. NaN marks a gap. An
/// all-missing series becomes zeros with `all_missing` set.
ImputedSeries impute_time_varying(std::span<const double> series);

/// Fills NaN entries with the median of the present ones. Throws
/// ConfigError naming the covariate if nothing is present.
std::vector<double> impute_static(std::span<const double> values, const std::string& covariate);

/// Pools min/max per covariate over all locations and days.
NormalizationTable compute_normalization(const PanelDataset& panel);
/// Maps every covariate through `table`; throws ConfigError for covariates
/// missing from the table.
void apply_normalization(PanelDataset& panel, const NormalizationTable& table);
/// compute + apply; the table is also stored on the panel.
NormalizationTable normalize(PanelDataset& panel);

enum class Aggregator { mean, median, std, max, sum };
std::string_view aggregator_name(Aggregator a);
std::optional<Aggregator> aggregator_from_name(std::string_view name);
std::string graph_feature_name(const std::string& covariate, Aggregator a);

/// Aggregates a time-varying covariate over each location's neighbors
/// (self excluded). Empty neighborhoods yield 0 and a warning.
std::vector<std::vector<double>> graph_aggregate(const PanelDataset& panel, const GeoGraph& graph,
                                                 const std::string& covariate, Aggregator aggregator,
                                                 std::vector<std::string>* warnings = nullptr);

double aggregate_values(std::vector<double> values, Aggregator aggregator);

std::string lagged_covariate_name(Observed o, int lag);

/// Adds confirmed/deaths covariates shifted by each lag (missing before
/// imputation where no source value exists). Throws ConfigError for lag < 1.
std::vector<std::string> lagged_case_covariates(PanelDataset& panel, const std::vector<int>& lags);

/// Running-max repair of the cumulative Q and D series.
void repair_cumulative(PanelDataset& panel, IngestReport& report);

struct PrepareOptions {
    std::vector<int> case_lags = {1};
    std::vector<std::string> graph_covariates = {"mobility", "confirmed_lag1", "deaths_lag1"};
    std::vector<Aggregator> aggregators = {Aggregator::mean, Aggregator::median, Aggregator::std, Aggregator::max,
                                           Aggregator::sum};
    /// Reuse statistics from an earlier run instead of recomputing them.
    std::optional<NormalizationTable> normalization;
};

/// Repair, lagged case covariates, imputation, normalization and (county
/// level only) graph features.
void prepare(PanelDataset& panel, const PrepareOptions& options, IngestReport& report);

/// First day whose confirmed count exceeds the level threshold.
std::optional<int> regime_start(const PanelDataset& panel, std::size_t location);

std::string panel_to_json(const PanelDataset& panel);
PanelDataset panel_from_json(const std::string& text);

/// Day offset of an ISO-8601 date from `anchor`.
int day_index(const std::string& date, const std::string& anchor);
/// ISO-8601 date `days` after `anchor`.
std::string date_from_index(int days, const std::string& anchor);

} // namespace epigam
