#pragma once

#include "epigam/features.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace epigam {

/// One scored (prediction, actual) pair.
struct ScoredPair {
    double predicted = 0.0;
    double actual = 0.0;
};

double mae(const std::vector<ScoredPair>& pairs);
double rmse(const std::vector<ScoredPair>& pairs);
/// In percent. Pairs with a zero actual are skipped.
double mape(const std::vector<ScoredPair>& pairs);
double rmsle(const std::vector<ScoredPair>& pairs);
/// Positive means overprediction.
double mean_error(const std::vector<ScoredPair>& pairs);

/// (1/tau) sum |pred - actual| / max(actual[tau-1] - actual[0], 1) over the
/// horizon days T+1 .. T+tau, given in order.
double nmae(const std::vector<double>& predicted, const std::vector<double>& actual);

enum class HorizonMode { multi, fixed };
std::string_view horizon_mode_name(HorizonMode mode);

/// A forecast row; `quantile` is empty for point forecasts and `actual` is
/// empty when the observation is masked.
struct ForecastRow {
    std::string location;
    int day = 0;
    Observed compartment = Observed::Q;
    std::optional<double> quantile;
    double predicted = 0.0;
    std::optional<double> actual;
};

struct ForecastFrame {
    int T = 0;
    int horizon = 0;
    std::vector<ForecastRow> rows;

    /// Sorted, unique.
    std::vector<std::string> locations() const;
    /// Point pairs with an actual. Multi mode scores every day in
    /// (T, T+horizon]; fixed mode only T+horizon.
    std::vector<ScoredPair> pairs(Observed compartment, HorizonMode mode,
                                  const std::optional<std::string>& location = std::nullopt) const;
    /// Point predictions and actuals for T+1 .. T+horizon of one location.
    /// Throws PreconditionError when a day or its actual is missing.
    void horizon_series(const std::string& location, Observed compartment, std::vector<double>& predicted,
                        std::vector<double>& actual) const;
    /// Every location with a point row for a compartment must cover every
    /// day in (T, T+horizon]; throws PreconditionError otherwise.
    void validate() const;
};

/// Reads the forecast CSV (location_id,date,compartment,quantile,value) and
/// aligns actuals from the panel. T is the day before the earliest date.
ForecastFrame read_forecast_frame(const std::string& csv_path, const PanelDataset& panel);
ForecastFrame parse_forecast_frame(const std::string& csv_text, const std::string& source, const PanelDataset& panel);

/// Fraction of unmasked actuals inside [q_lo, q_hi]. Restricted to one
/// compartment when given. Throws EmptyMetricError when nothing is scored.
double interval_coverage(const ForecastFrame& frame, double q_lo, double q_hi,
                         std::optional<Observed> compartment = std::nullopt, HorizonMode mode = HorizonMode::multi);

/// Metrics JSON keyed metric -> mode -> compartment. Compartments without a
/// scoreable pair are omitted for that metric.
std::string metrics_json(const ForecastFrame& frame);

struct SubgroupBinning {
    std::string covariate;
    std::vector<std::vector<std::string>> bins;
    /// Smallest and largest covariate value inside each bin.
    std::vector<std::pair<double, double>> ranges;
};

/// Sorts by value (ties by location id) and splits into contiguous
/// equal-count bins; the first size % n_bins bins hold one extra location.
SubgroupBinning bin_locations(const std::map<std::string, double>& values, const std::string& covariate,
                              std::size_t n_bins);

/// Min/max whiskers and linearly interpolated quartiles.
struct BoxStats {
    double min = 0.0;
    double q1 = 0.0;
    double median = 0.0;
    double q3 = 0.0;
    double max = 0.0;
    std::size_t count = 0;
};
BoxStats box_stats(std::vector<double> values);
/// Linear interpolation between closest ranks on sorted data, p in [0, 1].
double sorted_quantile(const std::vector<double>& sorted, double p);

enum class FairnessMetric { mae, nmae, me };
std::string_view fairness_metric_name(FairnessMetric m);
FairnessMetric parse_fairness_metric(std::string_view name);

struct FairnessBin {
    std::vector<std::string> locations;
    double lo = 0.0;
    double hi = 0.0;
    std::map<FairnessMetric, BoxStats> stats;
};

struct FairnessReport {
    std::string covariate;
    Observed compartment = Observed::D;
    std::vector<FairnessBin> bins;

    std::string to_json() const;
    /// One row per (bin, metric).
    std::string to_csv() const;
};

/// Per-location metrics over the multi-horizon window, summarized per bin.
FairnessReport fairness_report(const ForecastFrame& frame, const SubgroupBinning& binning,
                               const std::vector<FairnessMetric>& metrics, Observed compartment = Observed::D);

struct UnderpredictionBin {
    std::size_t eligible = 0;
    std::size_t underpredicted = 0;
    /// Empty when no location in the bin is eligible.
    std::optional<double> rate;
    std::optional<double> ci_lo;
    std::optional<double> ci_hi;
};

/// Per bin, the share of eligible locations (more than one actual death at
/// T+horizon) whose forecast at T+horizon is strictly below the actual. The
/// 95% interval is a percentile bootstrap over the bin's eligible locations
/// with `samples` resamples drawn from substream(seed, bin index).
std::vector<UnderpredictionBin> underprediction_rates(const ForecastFrame& frame, const SubgroupBinning& binning,
                                                      std::size_t samples = 1000, std::uint64_t seed = 0);
std::string underprediction_csv(const SubgroupBinning& binning, const std::vector<UnderpredictionBin>& rates);

} // namespace epigam
