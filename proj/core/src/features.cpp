#include "epigam/features.hpp"

#include "csv.hpp"
#include "epigam/dynamics.hpp"
#include "epigam/errors.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>

namespace epigam {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

constexpr std::array<std::string_view, kNumObserved> kObservedNames = {"Q", "D", "H", "C", "V", "R_doc"};
constexpr std::array<std::string_view, kNumObserved> kObservationColumns = {
    "confirmed", "deaths", "hospitalized", "icu", "ventilator", "recovered"};

std::chrono::sys_days parse_date(const std::string& text) {
    int y = 0;
    unsigned m = 0;
    unsigned d = 0;
    char tail = 0;
    if (text.size() != 10 || std::sscanf(text.c_str(), "%4d-%2u-%2u%c", &y, &m, &d, &tail) != 3) {
        throw SchemaError("invalid ISO-8601 date '" + text + "'");
    }
    const std::chrono::year_month_day ymd{std::chrono::year{y}, std::chrono::month{m}, std::chrono::day{d}};
    if (!ymd.ok()) {
        throw SchemaError("invalid calendar date '" + text + "'");
    }
    return std::chrono::sys_days{ymd};
}

} // namespace

std::string_view level_name(Level level) { return level == Level::state ? "state" : "county"; }

Level parse_level(std::string_view text) {
    if (text == "state") {
        return Level::state;
    }
    if (text == "county") {
        return Level::county;
    }
    throw ConfigError("unknown level '" + std::string(text) + "' (expected state or county)");
}

double regime_threshold(Level level) { return level == Level::state ? 10.0 : 3.0; }

std::string_view observed_name(Observed o) { return kObservedNames[static_cast<std::size_t>(o)]; }

std::optional<Observed> observed_from_name(std::string_view name) {
    for (std::size_t i = 0; i < kNumObserved; ++i) {
        if (kObservedNames[i] == name) {
            return static_cast<Observed>(i);
        }
    }
    return std::nullopt;
}

const std::array<Observed, kNumObserved>& all_observed() {
    static const std::array<Observed, kNumObserved> all = {Observed::Q, Observed::D, Observed::H,
                                                          Observed::C, Observed::V, Observed::R_doc};
    return all;
}

int day_index(const std::string& date, const std::string& anchor) {
    return static_cast<int>((parse_date(date) - parse_date(anchor)).count());
}

std::string date_from_index(int days, const std::string& anchor) {
    const std::chrono::year_month_day ymd{parse_date(anchor) + std::chrono::days{days}};
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%04d-%02u-%02u", static_cast<int>(ymd.year()),
                  static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()));
    return buf;
}

// ---------------------------------------------------------------------------
// GeoGraph

void GeoGraph::add_edge(const std::string& a, const std::string& b) {
    if (a == b) {
        throw SchemaError("adjacency contains a self-loop on '" + a + "'");
    }
    adjacency_[a].insert(b);
    adjacency_[b].insert(a);
}

const std::set<std::string>& GeoGraph::neighbors(const std::string& location) const {
    static const std::set<std::string> empty;
    auto it = adjacency_.find(location);
    return it == adjacency_.end() ? empty : it->second;
}

std::size_t GeoGraph::edge_count() const {
    std::size_t n = 0;
    for (const auto& [_, nbrs] : adjacency_) {
        n += nbrs.size();
    }
    return n / 2;
}

// ---------------------------------------------------------------------------
// NormalizationTable

double NormalizationTable::normalize(const std::string& covariate, double x) const {
    auto it = ranges.find(covariate);
    if (it == ranges.end()) {
        throw ConfigError("normalization table has no entry for covariate '" + covariate + "'");
    }
    const auto [lo, hi] = it->second;
    if (hi == lo) {
        return 0.0;
    }
    return (x - lo) / (hi - lo);
}

double NormalizationTable::denormalize(const std::string& covariate, double y) const {
    auto it = ranges.find(covariate);
    if (it == ranges.end()) {
        throw ConfigError("normalization table has no entry for covariate '" + covariate + "'");
    }
    const auto [lo, hi] = it->second;
    return lo + y * (hi - lo);
}

// ---------------------------------------------------------------------------
// PanelDataset

std::size_t PanelDataset::location_index(const std::string& id) const {
    auto it = std::find(locations.begin(), locations.end(), id);
    if (it == locations.end()) {
        throw LookupError("unknown location '" + id + "'");
    }
    return static_cast<std::size_t>(it - locations.begin());
}

LocationCovariates PanelDataset::covariates_of(std::size_t location) const {
    LocationCovariates out;
    for (const auto& [id, values] : statics) {
        out.statics.emplace(id, values.at(location));
    }
    for (const auto& [id, series] : time_varying) {
        out.series.emplace(id, series.at(location));
    }
    return out;
}

PanelDataset PanelDataset::truncated(int days) const {
    PanelDataset out = *this;
    days = std::clamp(days, 0, num_days);
    out.num_days = days;
    const auto n = static_cast<std::size_t>(days);
    for (auto& obs : out.observations) {
        for (auto& s : obs) {
            s.values.resize(n);
            s.present.resize(n);
        }
    }
    for (auto& [_, per_loc] : out.time_varying) {
        for (auto& s : per_loc) {
            s.resize(n);
        }
    }
    return out;
}

PanelDataset PanelDataset::subset(const std::vector<std::string>& keep) const {
    PanelDataset out;
    out.level = level;
    out.anchor_date = anchor_date;
    out.num_days = num_days;
    out.normalization = normalization;
    for (const auto& id : keep) {
        const std::size_t i = location_index(id);
        out.locations.push_back(id);
        out.population.push_back(population[i]);
        out.observations.push_back(observations[i]);
        for (const auto& [cov, per_loc] : time_varying) {
            out.time_varying[cov].push_back(per_loc[i]);
        }
        for (const auto& [cov, per_loc] : statics) {
            out.statics[cov].push_back(per_loc[i]);
        }
    }
    for (const auto& id : keep) {
        for (const auto& nbr : graph.neighbors(id)) {
            if (std::find(keep.begin(), keep.end(), nbr) != keep.end()) {
                out.graph.add_edge(id, nbr);
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// IngestReport

std::size_t IngestReport::imputation_count(bool include_derived) const {
    return static_cast<std::size_t>(std::count_if(imputations.begin(), imputations.end(), [&](const auto& r) {
        return include_derived || !r.derived;
    }));
}

std::string IngestReport::to_json() const {
    nlohmann::ordered_json j;
    j["imputation_count"] = imputation_count(false);
    j["derived_imputation_count"] = imputation_count(true) - imputation_count(false);
    j["repair_count"] = repairs.size();
    auto& imp = j["imputations"] = nlohmann::ordered_json::array();
    for (const auto& r : imputations) {
        if (r.derived) {
            continue;
        }
        nlohmann::ordered_json e = {{"covariate", r.covariate}, {"location", r.location}};
        if (r.day >= 0) {
            e["day"] = r.day;
        }
        e["value"] = r.value;
        imp.push_back(std::move(e));
    }
    auto& rep = j["repairs"] = nlohmann::ordered_json::array();
    for (const auto& r : repairs) {
        rep.push_back({{"location", r.location}, {"series", r.series}, {"day", r.day}, {"from", r.from},
                       {"to", r.to}});
    }
    j["excluded_locations"] = excluded_locations;
    j["warnings"] = warnings;
    return j.dump(2);
}

// ---------------------------------------------------------------------------
// Readers

std::vector<ObservationRow> read_observations_csv(const std::string& path) {
    const csv::Table t = csv::Table::read_file(path);
    const std::size_t c_loc = t.column("location_id");
    const std::size_t c_date = t.column("date");
    std::array<std::size_t, kNumObserved> cols{};
    for (std::size_t k = 0; k < kNumObserved; ++k) {
        cols[k] = t.column(kObservationColumns[k]);
    }
    std::vector<ObservationRow> rows;
    rows.reserve(t.rows());
    for (std::size_t r = 0; r < t.rows(); ++r) {
        ObservationRow row;
        row.location = t.cell(r, c_loc);
        row.date = t.cell(r, c_date);
        for (std::size_t k = 0; k < kNumObserved; ++k) {
            row.values[k] = t.number(r, cols[k]);
            if (row.values[k] && (!std::isfinite(*row.values[k]) || *row.values[k] < 0.0)) {
                throw SchemaError(path + ":" + std::to_string(t.line_of(r)) + ": column '" +
                                  std::string(kObservationColumns[k]) + "' must be finite and >= 0");
            }
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

PanelDataset load_panel(const InputPaths& paths, Level level, const std::string& anchor_date, IngestReport& report) {
    PanelDataset panel;
    panel.level = level;
    panel.anchor_date = anchor_date;
    parse_date(anchor_date);

    // Population defines the location set.
    {
        const csv::Table t = csv::Table::read_file(paths.population);
        const std::size_t c_loc = t.column("location_id");
        const std::size_t c_pop = t.column("population");
        std::map<std::string, double> pop;
        for (std::size_t r = 0; r < t.rows(); ++r) {
            const double n = t.required_number(r, c_pop);
            if (!(n > 0.0)) {
                throw SchemaError(paths.population + ":" + std::to_string(t.line_of(r)) +
                                  ": population must be positive");
            }
            pop[t.cell(r, c_loc)] = n;
        }
        for (const auto& [id, n] : pop) {
            panel.locations.push_back(id);
            panel.population.push_back(n);
        }
    }
    if (panel.locations.empty()) {
        throw SchemaError(paths.population + ": no locations");
    }
    std::map<std::string, std::size_t> loc_index;
    for (std::size_t i = 0; i < panel.locations.size(); ++i) {
        loc_index[panel.locations[i]] = i;
    }
    auto lookup = [&](const std::string& id, const std::string& source, std::size_t line) {
        auto it = loc_index.find(id);
        if (it == loc_index.end()) {
            throw LookupError(source + ":" + std::to_string(line) + ": location '" + id +
                              "' is not in the population file");
        }
        return it->second;
    };

    // Observations define the day range.
    const std::vector<ObservationRow> obs = read_observations_csv(paths.observations);
    int max_day = -1;
    std::size_t dropped = 0;
    for (const auto& row : obs) {
        const int d = day_index(row.date, anchor_date);
        if (d < 0) {
            ++dropped;
            continue;
        }
        max_day = std::max(max_day, d);
    }
    if (dropped > 0) {
        report.warnings.push_back(std::to_string(dropped) + " observation rows dated before " + anchor_date +
                                  " were dropped");
    }
    if (max_day < 0) {
        throw SchemaError(paths.observations + ": no observation rows on or after " + anchor_date);
    }
    panel.num_days = max_day + 1;
    const auto ndays = static_cast<std::size_t>(panel.num_days);
    panel.observations.assign(panel.locations.size(), {});
    for (auto& per_loc : panel.observations) {
        for (auto& s : per_loc) {
            s = MaskedSeries(ndays);
        }
    }
    {
        const csv::Table t = csv::Table::read_file(paths.observations);
        for (std::size_t r = 0; r < obs.size(); ++r) {
            const auto& row = obs[r];
            const int d = day_index(row.date, anchor_date);
            if (d < 0) {
                continue;
            }
            const std::size_t li = lookup(row.location, paths.observations, t.line_of(r));
            for (std::size_t k = 0; k < kNumObserved; ++k) {
                if (row.values[k]) {
                    auto& s = panel.observations[li][k];
                    s.values[static_cast<std::size_t>(d)] = *row.values[k];
                    s.present[static_cast<std::size_t>(d)] = 1;
                }
            }
        }
    }

    if (!paths.time_varying.empty()) {
        const csv::Table t = csv::Table::read_file(paths.time_varying);
        const std::size_t c_loc = t.column("location_id");
        const std::size_t c_date = t.column("date");
        const std::size_t c_cov = t.column("covariate_id");
        const std::size_t c_val = t.column("value");
        for (std::size_t r = 0; r < t.rows(); ++r) {
            const int d = day_index(t.cell(r, c_date), anchor_date);
            if (d < 0 || d >= panel.num_days) {
                continue;
            }
            const std::size_t li = lookup(t.cell(r, c_loc), paths.time_varying, t.line_of(r));
            auto& per_loc = panel.time_varying[t.cell(r, c_cov)];
            if (per_loc.empty()) {
                per_loc.assign(panel.locations.size(), std::vector<double>(ndays, kNaN));
            }
            const auto v = t.number(r, c_val);
            per_loc[li][static_cast<std::size_t>(d)] = v ? *v : kNaN;
        }
    }

    if (!paths.statics.empty()) {
        const csv::Table t = csv::Table::read_file(paths.statics);
        const std::size_t c_loc = t.column("location_id");
        const std::size_t c_cov = t.column("covariate_id");
        const std::size_t c_val = t.column("value");
        for (std::size_t r = 0; r < t.rows(); ++r) {
            const std::size_t li = lookup(t.cell(r, c_loc), paths.statics, t.line_of(r));
            auto& per_loc = panel.statics[t.cell(r, c_cov)];
            if (per_loc.empty()) {
                per_loc.assign(panel.locations.size(), kNaN);
            }
            const auto v = t.number(r, c_val);
            per_loc[li] = v ? *v : kNaN;
        }
    }

    if (!paths.adjacency.empty()) {
        const csv::Table t = csv::Table::read_file(paths.adjacency);
        const std::size_t c_a = t.column("loc_a");
        const std::size_t c_b = t.column("loc_b");
        for (std::size_t r = 0; r < t.rows(); ++r) {
            const std::string& a = t.cell(r, c_a);
            const std::string& b = t.cell(r, c_b);
            lookup(a, paths.adjacency, t.line_of(r));
            lookup(b, paths.adjacency, t.line_of(r));
            panel.graph.add_edge(a, b);
        }
    }
    return panel;
}

// ---------------------------------------------------------------------------
// Imputation

ImputedSeries impute_time_varying(std::span<const double> series) {
    ImputedSeries out;
    out.values.assign(series.begin(), series.end());
    std::optional<std::size_t> first;
    for (std::size_t i = 0; i < series.size(); ++i) {
        if (!std::isnan(series[i])) {
            first = i;
            break;
        }
    }
    if (!first) {
        out.all_missing = true;
        std::fill(out.values.begin(), out.values.end(), 0.0);
        for (std::size_t i = 0; i < series.size(); ++i) {
            out.filled_days.push_back(static_cast<int>(i));
        }
        return out;
    }
    for (std::size_t i = 0; i < *first; ++i) {
        out.values[i] = series[*first];
        out.filled_days.push_back(static_cast<int>(i));
    }
    double last = series[*first];
    for (std::size_t i = *first; i < series.size(); ++i) {
        if (std::isnan(series[i])) {
            out.values[i] = last;
            out.filled_days.push_back(static_cast<int>(i));
        } else {
            last = series[i];
        }
    }
    std::sort(out.filled_days.begin(), out.filled_days.end());
    return out;
}

std::vector<double> impute_static(std::span<const double> values, const std::string& covariate) {
    std::vector<double> present;
    for (double v : values) {
        if (!std::isnan(v)) {
            present.push_back(v);
        }
    }
    if (present.empty()) {
        throw ConfigError("static covariate '" + covariate + "' is missing for every location");
    }
    std::sort(present.begin(), present.end());
    const std::size_t n = present.size();
    const double median = n % 2 == 1 ? present[n / 2] : 0.5 * (present[n / 2 - 1] + present[n / 2]);
    std::vector<double> out(values.begin(), values.end());
    for (double& v : out) {
        if (std::isnan(v)) {
            v = median;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Normalization

NormalizationTable compute_normalization(const PanelDataset& panel) {
    NormalizationTable table;
    for (const auto& [id, per_loc] : panel.time_varying) {
        double lo = std::numeric_limits<double>::infinity();
        double hi = -lo;
        for (const auto& s : per_loc) {
            for (double v : s) {
                if (!std::isnan(v)) {
                    lo = std::min(lo, v);
                    hi = std::max(hi, v);
                }
            }
        }
        if (lo > hi) {
            lo = hi = 0.0;
        }
        table.ranges[id] = {lo, hi};
    }
    for (const auto& [id, per_loc] : panel.statics) {
        double lo = std::numeric_limits<double>::infinity();
        double hi = -lo;
        for (double v : per_loc) {
            if (!std::isnan(v)) {
                lo = std::min(lo, v);
                hi = std::max(hi, v);
            }
        }
        if (lo > hi) {
            lo = hi = 0.0;
        }
        table.ranges[id] = {lo, hi};
    }
    return table;
}

void apply_normalization(PanelDataset& panel, const NormalizationTable& table) {
    for (auto& [id, per_loc] : panel.time_varying) {
        for (auto& s : per_loc) {
            for (double& v : s) {
                v = table.normalize(id, v);
            }
        }
    }
    for (auto& [id, per_loc] : panel.statics) {
        for (double& v : per_loc) {
            v = table.normalize(id, v);
        }
    }
    if (!panel.normalization) {
        panel.normalization = NormalizationTable{};
    }
    for (const auto& [id, _] : panel.time_varying) {
        panel.normalization->ranges[id] = table.ranges.at(id);
    }
    for (const auto& [id, _] : panel.statics) {
        panel.normalization->ranges[id] = table.ranges.at(id);
    }
}

NormalizationTable normalize(PanelDataset& panel) {
    NormalizationTable table = compute_normalization(panel);
    apply_normalization(panel, table);
    return table;
}

// ---------------------------------------------------------------------------
// Graph features

std::string_view aggregator_name(Aggregator a) {
    switch (a) {
    case Aggregator::mean: return "mean";
    case Aggregator::median: return "median";
    case Aggregator::std: return "std";
    case Aggregator::max: return "max";
    case Aggregator::sum: return "sum";
    }
    return "unknown";
}

std::optional<Aggregator> aggregator_from_name(std::string_view name) {
    for (Aggregator a : {Aggregator::mean, Aggregator::median, Aggregator::std, Aggregator::max, Aggregator::sum}) {
        if (aggregator_name(a) == name) {
            return a;
        }
    }
    return std::nullopt;
}

std::string graph_feature_name(const std::string& covariate, Aggregator a) {
    return covariate + "__nbr_" + std::string(aggregator_name(a));
}

double aggregate_values(std::vector<double> values, Aggregator aggregator) {
    if (values.empty()) {
        return 0.0;
    }
    // Sort first so every aggregator is independent of neighbor order.
    std::sort(values.begin(), values.end());
    const double n = static_cast<double>(values.size());
    const double sum = std::accumulate(values.begin(), values.end(), 0.0);
    switch (aggregator) {
    case Aggregator::mean: return sum / n;
    case Aggregator::sum: return sum;
    case Aggregator::max: return values.back();
    case Aggregator::median: {
        const std::size_t m = values.size();
        return m % 2 == 1 ? values[m / 2] : 0.5 * (values[m / 2 - 1] + values[m / 2]);
    }
    case Aggregator::std: {
        const double mean = sum / n;
        double ss = 0.0;
        for (double v : values) {
            ss += (v - mean) * (v - mean);
        }
        return std::sqrt(ss / n);
    }
    }
    return 0.0;
}

std::vector<std::vector<double>> graph_aggregate(const PanelDataset& panel, const GeoGraph& graph,
                                                 const std::string& covariate, Aggregator aggregator,
                                                 std::vector<std::string>* warnings) {
    auto it = panel.time_varying.find(covariate);
    if (it == panel.time_varying.end()) {
        throw ConfigError("graph aggregation: unknown covariate '" + covariate + "'");
    }
    const auto& per_loc = it->second;
    const auto ndays = static_cast<std::size_t>(panel.num_days);
    std::vector<std::vector<double>> out(panel.locations.size(), std::vector<double>(ndays, 0.0));
    for (std::size_t i = 0; i < panel.locations.size(); ++i) {
        std::vector<std::size_t> nbr_idx;
        for (const auto& nbr : graph.neighbors(panel.locations[i])) {
            auto pos = std::find(panel.locations.begin(), panel.locations.end(), nbr);
            if (pos != panel.locations.end()) {
                nbr_idx.push_back(static_cast<std::size_t>(pos - panel.locations.begin()));
            }
        }
        if (nbr_idx.empty()) {
            if (warnings != nullptr) {
                warnings->push_back("location '" + panel.locations[i] + "' has no neighbors; " +
                                    graph_feature_name(covariate, aggregator) + " set to 0");
            }
            continue;
        }
        std::vector<double> vals(nbr_idx.size());
        for (std::size_t d = 0; d < ndays; ++d) {
            for (std::size_t k = 0; k < nbr_idx.size(); ++k) {
                vals[k] = per_loc[nbr_idx[k]][d];
            }
            out[i][d] = aggregate_values(vals, aggregator);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Lagged case covariates and cumulative repair

std::string lagged_covariate_name(Observed o, int lag) {
    return (o == Observed::Q ? "confirmed_lag" : "deaths_lag") + std::to_string(lag);
}

std::vector<std::string> lagged_case_covariates(PanelDataset& panel, const std::vector<int>& lags) {
    std::vector<std::string> added;
    const auto ndays = static_cast<std::size_t>(panel.num_days);
    for (int lag : lags) {
        if (lag < 1) {
            throw ConfigError("case-count covariate lag must be >= 1 (lag " + std::to_string(lag) +
                              " would expose the target)");
        }
        for (Observed o : {Observed::Q, Observed::D}) {
            const std::string name = lagged_covariate_name(o, lag);
            std::vector<std::vector<double>> per_loc(panel.locations.size(), std::vector<double>(ndays, kNaN));
            for (std::size_t i = 0; i < panel.locations.size(); ++i) {
                const MaskedSeries& s = panel.series(i, o);
                for (std::size_t d = static_cast<std::size_t>(lag); d < ndays; ++d) {
                    const std::size_t src = d - static_cast<std::size_t>(lag);
                    if (s.has(src)) {
                        per_loc[i][d] = s.values[src];
                    }
                }
            }
            panel.time_varying[name] = std::move(per_loc);
            added.push_back(name);
        }
    }
    return added;
}

void repair_cumulative(PanelDataset& panel, IngestReport& report) {
    for (std::size_t i = 0; i < panel.locations.size(); ++i) {
        for (Observed o : {Observed::Q, Observed::D}) {
            MaskedSeries& s = panel.series(i, o);
            double running = -std::numeric_limits<double>::infinity();
            for (std::size_t d = 0; d < s.size(); ++d) {
                if (!s.has(d)) {
                    continue;
                }
                if (s.values[d] < running) {
                    report.repairs.push_back(
                        {panel.locations[i], std::string(observed_name(o)), static_cast<int>(d), s.values[d], running});
                    s.values[d] = running;
                } else {
                    running = s.values[d];
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Full preparation

void prepare(PanelDataset& panel, const PrepareOptions& options, IngestReport& report) {
    repair_cumulative(panel, report);

    std::set<std::string> derived;
    for (const auto& name : lagged_case_covariates(panel, options.case_lags)) {
        derived.insert(name);
    }

    for (auto& [id, per_loc] : panel.time_varying) {
        for (std::size_t i = 0; i < per_loc.size(); ++i) {
            ImputedSeries imp = impute_time_varying(per_loc[i]);
            if (imp.all_missing) {
                report.warnings.push_back("time-varying covariate '" + id + "' is missing for every day at '" +
                                          panel.locations[i] + "'; filled with zeros");
            }
            for (int d : imp.filled_days) {
                report.imputations.push_back({id, panel.locations[i], d, imp.values[static_cast<std::size_t>(d)],
                                              derived.count(id) != 0});
            }
            per_loc[i] = std::move(imp.values);
        }
    }
    for (auto& [id, per_loc] : panel.statics) {
        std::vector<double> filled = impute_static(per_loc, id);
        for (std::size_t i = 0; i < per_loc.size(); ++i) {
            if (std::isnan(per_loc[i])) {
                report.imputations.push_back({id, panel.locations[i], -1, filled[i], false});
            }
        }
        per_loc = std::move(filled);
    }

    if (options.normalization) {
        apply_normalization(panel, *options.normalization);
    } else {
        normalize(panel);
    }

    if (panel.level == Level::county) {
        PanelDataset aggregated;
        aggregated.num_days = panel.num_days;
        aggregated.locations = panel.locations;
        for (const auto& cov : options.graph_covariates) {
            if (panel.time_varying.count(cov) == 0) {
                continue;
            }
            for (Aggregator a : options.aggregators) {
                aggregated.time_varying[graph_feature_name(cov, a)] =
                    graph_aggregate(panel, panel.graph, cov, a, &report.warnings);
            }
        }
        if (options.normalization) {
            apply_normalization(aggregated, *options.normalization);
        } else {
            normalize(aggregated);
        }
        for (auto& [id, per_loc] : aggregated.time_varying) {
            panel.time_varying[id] = std::move(per_loc);
            panel.normalization->ranges[id] = aggregated.normalization->ranges.at(id);
        }
        // Isolated-node warnings repeat per aggregator; keep one of each.
        std::vector<std::string> unique;
        for (auto& w : report.warnings) {
            if (std::find(unique.begin(), unique.end(), w) == unique.end()) {
                unique.push_back(std::move(w));
            }
        }
        report.warnings = std::move(unique);
    }

    for (std::size_t i = 0; i < panel.locations.size(); ++i) {
        if (!regime_start(panel, i)) {
            report.excluded_locations.push_back(panel.locations[i]);
            report.warnings.push_back("location '" + panel.locations[i] +
                                      "' never exceeds the confirmed-case threshold; excluded from training");
        }
    }
}

std::optional<int> regime_start(const PanelDataset& panel, std::size_t location) {
    const MaskedSeries& q = panel.series(location, Observed::Q);
    const double threshold = regime_threshold(panel.level);
    for (std::size_t d = 0; d < q.size(); ++d) {
        if (q.has(d) && q.values[d] > threshold) {
            return static_cast<int>(d);
        }
    }
    return std::nullopt;
}

// ---------------------------------------------------------------------------
// Serialization

std::string panel_to_json(const PanelDataset& panel) {
    nlohmann::ordered_json j;
    j["format"] = "epigam-panel";
    j["version"] = 1;
    j["level"] = std::string(level_name(panel.level));
    j["anchor_date"] = panel.anchor_date;
    j["num_days"] = panel.num_days;
    j["locations"] = panel.locations;
    j["population"] = panel.population;
    auto& obs = j["observations"] = nlohmann::ordered_json::object();
    for (std::size_t i = 0; i < panel.locations.size(); ++i) {
        auto& per = obs[panel.locations[i]] = nlohmann::ordered_json::object();
        for (Observed o : all_observed()) {
            const MaskedSeries& s = panel.series(i, o);
            auto arr = nlohmann::ordered_json::array();
            for (std::size_t d = 0; d < s.size(); ++d) {
                if (s.has(d)) {
                    arr.push_back(s.values[d]);
                } else {
                    arr.push_back(nullptr);
                }
            }
            per[std::string(observed_name(o))] = std::move(arr);
        }
    }
    auto& tv = j["time_varying"] = nlohmann::ordered_json::object();
    for (const auto& [id, per_loc] : panel.time_varying) {
        auto arr = nlohmann::ordered_json::array();
        for (const auto& s : per_loc) {
            auto row = nlohmann::ordered_json::array();
            for (double v : s) {
                if (std::isnan(v)) {
                    row.push_back(nullptr);
                } else {
                    row.push_back(v);
                }
            }
            arr.push_back(std::move(row));
        }
        tv[id] = std::move(arr);
    }
    auto& st = j["statics"] = nlohmann::ordered_json::object();
    for (const auto& [id, per_loc] : panel.statics) {
        auto arr = nlohmann::ordered_json::array();
        for (double v : per_loc) {
            if (std::isnan(v)) {
                arr.push_back(nullptr);
            } else {
                arr.push_back(v);
            }
        }
        st[id] = std::move(arr);
    }
    auto& edges = j["edges"] = nlohmann::ordered_json::array();
    for (const auto& [a, nbrs] : panel.graph.adjacency()) {
        for (const auto& b : nbrs) {
            if (a < b) {
                edges.push_back({a, b});
            }
        }
    }
    if (panel.normalization) {
        auto& norm = j["normalization"] = nlohmann::ordered_json::object();
        for (const auto& [id, range] : panel.normalization->ranges) {
            norm[id] = {range.first, range.second};
        }
    }
    return j.dump();
}

PanelDataset panel_from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError(std::string("prepared dataset is not valid JSON: ") + e.what());
    }
    if (!j.is_object() || !j.contains("format") || j["format"] != "epigam-panel") {
        throw SchemaError("not a prepared dataset file");
    }
    try {
        PanelDataset p;
        p.level = parse_level(j.at("level").get<std::string>());
        p.anchor_date = j.at("anchor_date").get<std::string>();
        p.num_days = j.at("num_days").get<int>();
        p.locations = j.at("locations").get<std::vector<std::string>>();
        p.population = j.at("population").get<std::vector<double>>();
        const auto ndays = static_cast<std::size_t>(p.num_days);
        for (const auto& loc : p.locations) {
            std::array<MaskedSeries, kNumObserved> per;
            const auto& jl = j.at("observations").at(loc);
            for (Observed o : all_observed()) {
                MaskedSeries s(ndays);
                const auto& arr = jl.at(std::string(observed_name(o)));
                for (std::size_t d = 0; d < ndays && d < arr.size(); ++d) {
                    if (!arr[d].is_null()) {
                        s.values[d] = arr[d].get<double>();
                        s.present[d] = 1;
                    }
                }
                per[static_cast<std::size_t>(o)] = std::move(s);
            }
            p.observations.push_back(std::move(per));
        }
        for (const auto& [id, arr] : j.at("time_varying").items()) {
            std::vector<std::vector<double>> per_loc;
            for (const auto& row : arr) {
                std::vector<double> s;
                for (const auto& v : row) {
                    s.push_back(v.is_null() ? kNaN : v.get<double>());
                }
                per_loc.push_back(std::move(s));
            }
            p.time_varying[id] = std::move(per_loc);
        }
        for (const auto& [id, arr] : j.at("statics").items()) {
            std::vector<double> per_loc;
            for (const auto& v : arr) {
                per_loc.push_back(v.is_null() ? kNaN : v.get<double>());
            }
            p.statics[id] = std::move(per_loc);
        }
        for (const auto& e : j.at("edges")) {
            p.graph.add_edge(e.at(0).get<std::string>(), e.at(1).get<std::string>());
        }
        if (j.contains("normalization")) {
            NormalizationTable t;
            for (const auto& [id, range] : j.at("normalization").items()) {
                t.ranges[id] = {range.at(0).get<double>(), range.at(1).get<double>()};
            }
            p.normalization = std::move(t);
        }
        return p;
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError(std::string("malformed prepared dataset: ") + e.what());
    }
}

} // namespace epigam
