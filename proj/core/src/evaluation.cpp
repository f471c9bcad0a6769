#include "epigam/evaluation.hpp"

#include "csv.hpp"
#include "epigam/dynamics.hpp"
#include "epigam/errors.hpp"
#include "epigam/random.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <tuple>

namespace epigam {

namespace {

void require_pairs(const std::vector<ScoredPair>& pairs, const char* metric) {
    if (pairs.empty()) {
        throw EmptyMetricError(std::string(metric) + ": no scoreable pairs");
    }
}

} // namespace

double mae(const std::vector<ScoredPair>& pairs) {
    require_pairs(pairs, "MAE");
    double sum = 0.0;
    for (const auto& p : pairs) {
        sum += std::abs(p.predicted - p.actual);
    }
    return sum / static_cast<double>(pairs.size());
}

double rmse(const std::vector<ScoredPair>& pairs) {
    require_pairs(pairs, "RMSE");
    double sum = 0.0;
    for (const auto& p : pairs) {
        sum += (p.predicted - p.actual) * (p.predicted - p.actual);
    }
    return std::sqrt(sum / static_cast<double>(pairs.size()));
}

double mape(const std::vector<ScoredPair>& pairs) {
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& p : pairs) {
        if (p.actual != 0.0) {
            sum += std::abs(p.predicted - p.actual) / std::abs(p.actual);
            ++n;
        }
    }
    if (n == 0) {
        throw EmptyMetricError("MAPE: no pair with a nonzero actual");
    }
    return 100.0 * sum / static_cast<double>(n);
}

double rmsle(const std::vector<ScoredPair>& pairs) {
    require_pairs(pairs, "RMSLE");
    double sum = 0.0;
    for (const auto& p : pairs) {
        if (!(p.predicted > -1.0) || !(p.actual > -1.0)) {
            throw DomainError("RMSLE needs values above -1");
        }
        const double d = std::log1p(p.predicted) - std::log1p(p.actual);
        sum += d * d;
    }
    return std::sqrt(sum / static_cast<double>(pairs.size()));
}

double mean_error(const std::vector<ScoredPair>& pairs) {
    require_pairs(pairs, "ME");
    double sum = 0.0;
    for (const auto& p : pairs) {
        sum += p.predicted - p.actual;
    }
    return sum / static_cast<double>(pairs.size());
}

double nmae(const std::vector<double>& predicted, const std::vector<double>& actual) {
    if (predicted.size() != actual.size()) {
        throw ShapeError("NMAE: prediction and actual lengths differ");
    }
    if (actual.empty()) {
        throw EmptyMetricError("NMAE: empty horizon");
    }
    const double denom = std::max(actual.back() - actual.front(), 1.0);
    double sum = 0.0;
    for (std::size_t i = 0; i < actual.size(); ++i) {
        sum += std::abs(predicted[i] - actual[i]);
    }
    return sum / static_cast<double>(actual.size()) / denom;
}

std::string_view horizon_mode_name(HorizonMode mode) {
    return mode == HorizonMode::multi ? "multi_horizon" : "fixed_horizon";
}

// ---------------------------------------------------------------------------
// Frames

std::vector<std::string> ForecastFrame::locations() const {
    std::set<std::string> s;
    for (const auto& r : rows) {
        s.insert(r.location);
    }
    return {s.begin(), s.end()};
}

std::vector<ScoredPair> ForecastFrame::pairs(Observed compartment, HorizonMode mode,
                                             const std::optional<std::string>& location) const {
    std::vector<ScoredPair> out;
    for (const auto& r : rows) {
        if (r.quantile || r.compartment != compartment || !r.actual) {
            continue;
        }
        if (location && r.location != *location) {
            continue;
        }
        const bool in_window = mode == HorizonMode::multi ? (r.day > T && r.day <= T + horizon) : r.day == T + horizon;
        if (in_window) {
            out.push_back({r.predicted, *r.actual});
        }
    }
    return out;
}

void ForecastFrame::horizon_series(const std::string& location, Observed compartment, std::vector<double>& predicted,
                                   std::vector<double>& actual) const {
    const auto n = static_cast<std::size_t>(std::max(horizon, 0));
    predicted.assign(n, 0.0);
    actual.assign(n, 0.0);
    std::vector<std::uint8_t> seen(n, 0);
    for (const auto& r : rows) {
        if (r.quantile || r.compartment != compartment || r.location != location || r.day <= T || r.day > T + horizon) {
            continue;
        }
        const auto i = static_cast<std::size_t>(r.day - T - 1);
        if (!r.actual) {
            throw PreconditionError("location '" + location + "' has no actual " +
                                    std::string(observed_name(compartment)) + " on forecast day " +
                                    std::to_string(r.day));
        }
        predicted[i] = r.predicted;
        actual[i] = *r.actual;
        seen[i] = 1;
    }
    for (std::size_t i = 0; i < n; ++i) {
        if (!seen[i]) {
            throw PreconditionError("location '" + location + "' has no " + std::string(observed_name(compartment)) +
                                    " forecast for day " + std::to_string(T + 1 + static_cast<int>(i)));
        }
    }
}

void ForecastFrame::validate() const {
    if (horizon < 1) {
        throw PreconditionError("forecast frame horizon must be >= 1");
    }
    std::map<std::pair<std::string, Observed>, std::set<int>> days;
    for (const auto& r : rows) {
        if (!r.quantile) {
            days[{r.location, r.compartment}].insert(r.day);
        }
    }
    for (const auto& [key, seen] : days) {
        for (int d = T + 1; d <= T + horizon; ++d) {
            if (!seen.count(d)) {
                throw PreconditionError("location '" + key.first + "' has no " +
                                        std::string(observed_name(key.second)) + " forecast for day " +
                                        std::to_string(d));
            }
        }
    }
}

ForecastFrame parse_forecast_frame(const std::string& csv_text, const std::string& source, const PanelDataset& panel) {
    const csv::Table t = csv::Table::parse(csv_text, source);
    const std::size_t c_loc = t.column("location_id");
    const std::size_t c_date = t.column("date");
    const std::size_t c_comp = t.column("compartment");
    const std::size_t c_q = t.column("quantile");
    const std::size_t c_val = t.column("value");
    ForecastFrame frame;
    int first = 0;
    int last = 0;
    for (std::size_t i = 0; i < t.rows(); ++i) {
        const std::string where = t.source() + ":" + std::to_string(t.line_of(i));
        ForecastRow r;
        r.location = t.cell(i, c_loc);
        const std::size_t li = [&] {
            try {
                return panel.location_index(r.location);
            } catch (const LookupError&) {
                throw LookupError(where + ": unknown location '" + r.location + "'");
            }
        }();
        r.day = day_index(t.cell(i, c_date), panel.anchor_date);
        const auto o = observed_from_name(t.cell(i, c_comp));
        if (!o) {
            throw SchemaError(where + ": unknown compartment '" + t.cell(i, c_comp) + "'");
        }
        r.compartment = *o;
        if (t.cell(i, c_q) != "point") {
            r.quantile = t.required_number(i, c_q);
        }
        r.predicted = t.required_number(i, c_val);
        const MaskedSeries& s = panel.series(li, *o);
        if (r.day >= 0 && s.has(static_cast<std::size_t>(r.day))) {
            r.actual = s.values[static_cast<std::size_t>(r.day)];
        }
        if (frame.rows.empty()) {
            first = last = r.day;
        }
        first = std::min(first, r.day);
        last = std::max(last, r.day);
        frame.rows.push_back(std::move(r));
    }
    if (frame.rows.empty()) {
        throw SchemaError(source + ": forecast file has no rows");
    }
    frame.T = first - 1;
    frame.horizon = last - first + 1;
    frame.validate();
    return frame;
}

ForecastFrame read_forecast_frame(const std::string& csv_path, const PanelDataset& panel) {
    std::ifstream in(csv_path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open '" + csv_path + "'");
    }
    std::ostringstream text;
    text << in.rdbuf();
    return parse_forecast_frame(text.str(), csv_path, panel);
}

double interval_coverage(const ForecastFrame& frame, double q_lo, double q_hi, std::optional<Observed> compartment,
                         HorizonMode mode) {
    if (!(q_lo < q_hi)) {
        throw PreconditionError("interval coverage needs q_lo < q_hi");
    }
    struct Band {
        std::optional<double> lo;
        std::optional<double> hi;
        std::optional<double> actual;
    };
    std::map<std::tuple<std::string, int, Observed>, Band> bands;
    for (const auto& r : frame.rows) {
        if (!r.quantile || (compartment && r.compartment != *compartment)) {
            continue;
        }
        const bool in_window =
            mode == HorizonMode::multi ? (r.day > frame.T && r.day <= frame.T + frame.horizon) : r.day == frame.T + frame.horizon;
        if (!in_window) {
            continue;
        }
        Band& b = bands[{r.location, r.day, r.compartment}];
        if (*r.quantile == q_lo) {
            b.lo = r.predicted;
        } else if (*r.quantile == q_hi) {
            b.hi = r.predicted;
        }
        b.actual = r.actual;
    }
    std::size_t inside = 0;
    std::size_t total = 0;
    for (const auto& [key, b] : bands) {
        if (!b.actual || !b.lo || !b.hi) {
            continue;
        }
        ++total;
        if (*b.actual >= *b.lo && *b.actual <= *b.hi) {
            ++inside;
        }
    }
    if (total == 0) {
        throw EmptyMetricError("interval coverage: no actual has both quantile bounds");
    }
    return static_cast<double>(inside) / static_cast<double>(total);
}

std::string metrics_json(const ForecastFrame& frame) {
    using nlohmann::json;
    json j;
    j["T"] = frame.T;
    j["horizon"] = frame.horizon;
    json metrics = json::object();
    const std::pair<const char*, double (*)(const std::vector<ScoredPair>&)> table[] = {
        {"mae", mae}, {"rmse", rmse}, {"mape", mape}, {"rmsle", rmsle}, {"me", mean_error}};
    for (const auto& [name, fn] : table) {
        for (HorizonMode mode : {HorizonMode::multi, HorizonMode::fixed}) {
            for (Observed o : all_observed()) {
                const auto pairs = frame.pairs(o, mode);
                try {
                    metrics[name][std::string(horizon_mode_name(mode))][std::string(observed_name(o))] = fn(pairs);
                } catch (const EmptyMetricError&) {
                }
            }
        }
    }
    j["metrics"] = metrics;

    std::set<double> qs;
    for (const auto& r : frame.rows) {
        if (r.quantile) {
            qs.insert(*r.quantile);
        }
    }
    if (qs.size() >= 2) {
        json cov = json::object();
        cov["quantiles"] = {*qs.begin(), *qs.rbegin()};
        for (HorizonMode mode : {HorizonMode::multi, HorizonMode::fixed}) {
            const std::string m(horizon_mode_name(mode));
            try {
                cov[m]["all"] = interval_coverage(frame, *qs.begin(), *qs.rbegin(), std::nullopt, mode);
            } catch (const EmptyMetricError&) {
            }
            for (Observed o : all_observed()) {
                try {
                    cov[m][std::string(observed_name(o))] = interval_coverage(frame, *qs.begin(), *qs.rbegin(), o, mode);
                } catch (const EmptyMetricError&) {
                }
            }
        }
        j["interval_coverage"] = cov;
    }
    return j.dump(2) + "\n";
}

// ---------------------------------------------------------------------------
// Fairness

SubgroupBinning bin_locations(const std::map<std::string, double>& values, const std::string& covariate,
                              std::size_t n_bins) {
    if (n_bins == 0) {
        throw PreconditionError("binning needs at least one bin");
    }
    if (values.size() < n_bins) {
        throw PreconditionError("cannot split " + std::to_string(values.size()) + " locations into " +
                                std::to_string(n_bins) + " bins");
    }
    std::vector<std::pair<double, std::string>> sorted;
    for (const auto& [loc, v] : values) {
        if (!std::isfinite(v)) {
            throw DomainError("covariate '" + covariate + "' is not finite for location '" + loc + "'");
        }
        sorted.emplace_back(v, loc);
    }
    // Pairs order by value, then by location id.
    std::sort(sorted.begin(), sorted.end());
    SubgroupBinning b;
    b.covariate = covariate;
    const std::size_t base = sorted.size() / n_bins;
    const std::size_t extra = sorted.size() % n_bins;
    std::size_t pos = 0;
    for (std::size_t i = 0; i < n_bins; ++i) {
        const std::size_t size = base + (i < extra ? 1 : 0);
        std::vector<std::string> bin;
        b.ranges.emplace_back(sorted[pos].first, sorted[pos + size - 1].first);
        for (std::size_t k = 0; k < size; ++k) {
            bin.push_back(sorted[pos + k].second);
        }
        pos += size;
        b.bins.push_back(std::move(bin));
    }
    return b;
}

double sorted_quantile(const std::vector<double>& sorted, double p) {
    if (sorted.empty()) {
        throw EmptyMetricError("quantile of an empty sample");
    }
    const double h = p * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
    return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

BoxStats box_stats(std::vector<double> values) {
    if (values.empty()) {
        throw EmptyMetricError("box statistics of an empty sample");
    }
    std::sort(values.begin(), values.end());
    BoxStats s;
    s.min = values.front();
    s.q1 = sorted_quantile(values, 0.25);
    s.median = sorted_quantile(values, 0.5);
    s.q3 = sorted_quantile(values, 0.75);
    s.max = values.back();
    s.count = values.size();
    return s;
}

std::string_view fairness_metric_name(FairnessMetric m) {
    switch (m) {
    case FairnessMetric::mae:
        return "mae";
    case FairnessMetric::nmae:
        return "nmae";
    case FairnessMetric::me:
        return "me";
    }
    return "?";
}

FairnessMetric parse_fairness_metric(std::string_view name) {
    for (FairnessMetric m : {FairnessMetric::mae, FairnessMetric::nmae, FairnessMetric::me}) {
        if (fairness_metric_name(m) == name) {
            return m;
        }
    }
    throw ConfigError("unknown fairness metric '" + std::string(name) + "' (expected mae, nmae or me)");
}

FairnessReport fairness_report(const ForecastFrame& frame, const SubgroupBinning& binning,
                               const std::vector<FairnessMetric>& metrics, Observed compartment) {
    if (binning.ranges.size() != binning.bins.size()) {
        throw ShapeError("binning ranges do not match its bins");
    }
    FairnessReport report;
    report.covariate = binning.covariate;
    report.compartment = compartment;
    for (std::size_t b = 0; b < binning.bins.size(); ++b) {
        FairnessBin out;
        out.locations = binning.bins[b];
        out.lo = binning.ranges[b].first;
        out.hi = binning.ranges[b].second;
        for (FairnessMetric m : metrics) {
            std::vector<double> values;
            for (const auto& loc : out.locations) {
                if (m == FairnessMetric::nmae) {
                    std::vector<double> pred;
                    std::vector<double> act;
                    frame.horizon_series(loc, compartment, pred, act);
                    values.push_back(nmae(pred, act));
                    continue;
                }
                const auto pairs = frame.pairs(compartment, HorizonMode::multi, loc);
                if (pairs.empty()) {
                    throw LookupError("location '" + loc + "' has no scored forecast");
                }
                values.push_back(m == FairnessMetric::mae ? mae(pairs) : mean_error(pairs));
            }
            out.stats[m] = box_stats(std::move(values));
        }
        report.bins.push_back(std::move(out));
    }
    return report;
}

std::string FairnessReport::to_json() const {
    using nlohmann::ordered_json;
    ordered_json j;
    j["covariate"] = covariate;
    j["compartment"] = std::string(observed_name(compartment));
    j["bins"] = ordered_json::array();
    for (std::size_t b = 0; b < bins.size(); ++b) {
        ordered_json jb;
        jb["bin"] = b;
        jb["lo"] = bins[b].lo;
        jb["hi"] = bins[b].hi;
        jb["locations"] = bins[b].locations;
        for (const auto& [m, s] : bins[b].stats) {
            jb[std::string(fairness_metric_name(m))] = {{"min", s.min},       {"q1", s.q1}, {"median", s.median},
                                                        {"q3", s.q3},         {"max", s.max}, {"count", s.count}};
        }
        j["bins"].push_back(jb);
    }
    return j.dump(2) + "\n";
}

std::string FairnessReport::to_csv() const {
    std::string out = "covariate,bin,lo,hi,metric,count,min,q1,median,q3,max\n";
    for (std::size_t b = 0; b < bins.size(); ++b) {
        for (const auto& [m, s] : bins[b].stats) {
            out += covariate + "," + std::to_string(b) + "," + format_double(bins[b].lo) + "," +
                   format_double(bins[b].hi) + "," + std::string(fairness_metric_name(m)) + "," +
                   std::to_string(s.count) + "," + format_double(s.min) + "," + format_double(s.q1) + "," +
                   format_double(s.median) + "," + format_double(s.q3) + "," + format_double(s.max) + "\n";
        }
    }
    return out;
}

std::vector<UnderpredictionBin> underprediction_rates(const ForecastFrame& frame, const SubgroupBinning& binning,
                                                      std::size_t samples, std::uint64_t seed) {
    if (samples == 0) {
        throw PreconditionError("bootstrap needs at least one resample");
    }
    const int last = frame.T + frame.horizon;
    std::map<std::string, std::pair<double, double>> at_last; // location -> (predicted, actual)
    for (const auto& r : frame.rows) {
        if (!r.quantile && r.compartment == Observed::D && r.day == last && r.actual) {
            at_last[r.location] = {r.predicted, *r.actual};
        }
    }
    std::vector<UnderpredictionBin> out;
    for (std::size_t b = 0; b < binning.bins.size(); ++b) {
        UnderpredictionBin res;
        std::vector<std::uint8_t> under;
        for (const auto& loc : binning.bins[b]) {
            const auto it = at_last.find(loc);
            if (it == at_last.end() || !(it->second.second > 1.0)) {
                continue;
            }
            under.push_back(it->second.first < it->second.second ? 1 : 0);
        }
        res.eligible = under.size();
        res.underpredicted = static_cast<std::size_t>(std::count(under.begin(), under.end(), 1));
        if (!under.empty()) {
            const double n = static_cast<double>(under.size());
            res.rate = static_cast<double>(res.underpredicted) / n;
            Rng rng = substream(seed, b);
            std::vector<double> boot;
            boot.reserve(samples);
            for (std::size_t s = 0; s < samples; ++s) {
                std::size_t k = 0;
                for (std::size_t i = 0; i < under.size(); ++i) {
                    k += under[uniform_index(rng, under.size())];
                }
                boot.push_back(static_cast<double>(k) / n);
            }
            std::sort(boot.begin(), boot.end());
            res.ci_lo = sorted_quantile(boot, 0.025);
            res.ci_hi = sorted_quantile(boot, 0.975);
        }
        out.push_back(res);
    }
    return out;
}

std::string underprediction_csv(const SubgroupBinning& binning, const std::vector<UnderpredictionBin>& rates) {
    std::string out = "covariate,bin,lo,hi,eligible,underpredicted,rate,ci_lo,ci_hi\n";
    auto opt = [](const std::optional<double>& v) { return v ? format_double(*v) : std::string(); };
    for (std::size_t b = 0; b < rates.size(); ++b) {
        out += binning.covariate + "," + std::to_string(b) + "," + format_double(binning.ranges[b].first) + "," +
               format_double(binning.ranges[b].second) + "," + std::to_string(rates[b].eligible) + "," +
               std::to_string(rates[b].underpredicted) + "," + opt(rates[b].rate) + "," + opt(rates[b].ci_lo) + "," +
               opt(rates[b].ci_hi) + "\n";
    }
    return out;
}

} // namespace epigam
