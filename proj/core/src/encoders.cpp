#include "epigam/encoders.hpp"

#include "epigam/errors.hpp"

#include <algorithm>
#include <cmath>

namespace epigam {

std::string CovariateSlot::label() const {
    if (kind == CovariateKind::static_value) {
        return covariate;
    }
    return covariate + "@" + std::to_string(lag);
}

RateBounds default_bounds(Rate r) {
    switch (r) {
    case Rate::beta_doc:
    case Rate::beta_undoc: return {0.0, 10.0};
    case Rate::alpha: return {0.0, 0.2};
    default: return {0.0, 0.1};
    }
}

void RateEncoder::validate() const {
    const std::string name(rate_name(variable));
    if (!(lower_bound < upper_bound)) {
        throw ConfigError("encoder " + name + ": lower bound must be below upper bound");
    }
    if (weights.size() != covariate_spec.size()) {
        throw ConfigError("encoder " + name + ": " + std::to_string(weights.size()) + " weights for " +
                          std::to_string(covariate_spec.size()) + " covariate slots");
    }
    for (const auto& slot : covariate_spec) {
        if (slot.kind == CovariateKind::time_varying && slot.lag < 1) {
            throw ConfigError("encoder " + name + ": slot " + slot.label() + " needs lag >= 1");
        }
    }
}

double RateEncoder::local_bias_of(const std::string& location) const {
    auto it = local_bias.find(location);
    if (it == local_bias.end()) {
        throw LookupError("encoder " + std::string(rate_name(variable)) + ": unknown location '" + location + "'");
    }
    return it->second;
}

std::vector<double> resolve_covariates(const RateEncoder& encoder, const StaticCovariates& statics,
                                       const CovariateWindows& windows) {
    std::vector<double> x;
    x.reserve(encoder.covariate_spec.size());
    for (const auto& slot : encoder.covariate_spec) {
        if (slot.kind == CovariateKind::static_value) {
            auto it = statics.find(slot.covariate);
            if (it == statics.end()) {
                throw ConfigError("encoder " + std::string(rate_name(encoder.variable)) +
                                  ": missing covariate slot '" + slot.label() + "'");
            }
            x.push_back(it->second);
        } else {
            auto it = windows.find(slot.covariate);
            if (it == windows.end() || slot.lag < 1 || static_cast<std::size_t>(slot.lag) > it->second.size()) {
                throw ConfigError("encoder " + std::string(rate_name(encoder.variable)) +
                                  ": missing covariate slot '" + slot.label() + "'");
            }
            x.push_back(it->second[static_cast<std::size_t>(slot.lag - 1)]);
        }
    }
    return x;
}

double encode_rate(const RateEncoder& encoder, const StaticCovariates& statics, const CovariateWindows& windows,
                   const std::string& location) {
    encoder.validate();
    const std::vector<double> x = resolve_covariates(encoder, statics, windows);
    const double local = encoder.local_bias_of(location);
    const double logit = encoder_logit<double>(encoder.global_bias, local, encoder.weights, x);
    return bounded_rate(encoder.lower_bound, encoder.upper_bound, logit);
}

EncoderGradient encode_rate_gradient(const RateEncoder& encoder, std::span<const double> x,
                                     const std::string& location) {
    encoder.validate();
    if (x.size() != encoder.weights.size()) {
        throw ShapeError("covariate vector length does not match encoder weights");
    }
    const double local = encoder.local_bias_of(location);
    const double logit = encoder_logit<double>(encoder.global_bias, local, encoder.weights, x);
    const double s = sigmoid(logit);
    EncoderGradient g;
    g.value = encoder.lower_bound + (encoder.upper_bound - encoder.lower_bound) * s;
    g.d_bias = (encoder.upper_bound - encoder.lower_bound) * s * (1.0 - s);
    g.d_weights.resize(x.size());
    for (std::size_t k = 0; k < x.size(); ++k) {
        g.d_weights[k] = g.d_bias * x[k];
    }
    return g;
}

CovariateWindows windows_at(const LocationCovariates& covariates, int day, int max_lag) {
    CovariateWindows out;
    for (const auto& [id, series] : covariates.series) {
        if (series.empty()) {
            throw LookupError("covariate '" + id + "' has no history");
        }
        std::vector<double> w(static_cast<std::size_t>(max_lag));
        for (int j = 1; j <= max_lag; ++j) {
            const int d = std::max(day - j, 0);
            if (d >= static_cast<int>(series.size())) {
                throw LookupError("covariate '" + id + "' unavailable at day " + std::to_string(d));
            }
            w[static_cast<std::size_t>(j - 1)] = series[static_cast<std::size_t>(d)];
        }
        out.emplace(id, std::move(w));
    }
    return out;
}

namespace {

int max_lag_of(const RateEncoder& e) {
    int lag = 0;
    for (const auto& slot : e.covariate_spec) {
        lag = std::max(lag, slot.lag);
    }
    return lag;
}

} // namespace

std::vector<RateSet> encode_rates_over_time(const EncoderSet& encoders, const LocationCovariates& covariates,
                                            const std::string& location, int t_begin, int t_end) {
    int max_lag = 0;
    // Only the series some encoder reads need to cover the requested days.
    LocationCovariates used;
    used.statics = covariates.statics;
    for (const auto& e : encoders.encoders) {
        max_lag = std::max(max_lag, max_lag_of(e));
        for (const auto& slot : e.covariate_spec) {
            if (slot.kind != CovariateKind::time_varying || used.series.count(slot.covariate) != 0) {
                continue;
            }
            auto it = covariates.series.find(slot.covariate);
            if (it != covariates.series.end()) {
                used.series.emplace(it->first, it->second);
            }
        }
    }
    std::vector<RateSet> out;
    out.reserve(static_cast<std::size_t>(std::max(t_end - t_begin, 0)));
    for (int t = t_begin; t < t_end; ++t) {
        const CovariateWindows windows = windows_at(used, t, max_lag);
        RateSet rs;
        for (Rate r : all_rates()) {
            try {
                rs[r] = encode_rate(encoders[r], covariates.statics, windows, location);
            } catch (const Error& e) {
                throw ConfigError(std::string(e.what()) + " (variable " + std::string(rate_name(r)) + ", day " +
                                  std::to_string(t) + ")");
            }
        }
        out.push_back(rs);
    }
    return out;
}

std::vector<std::vector<double>> design_rows(const RateEncoder& encoder, const LocationCovariates& covariates,
                                             int t_begin, int t_end) {
    const std::string name(rate_name(encoder.variable));
    // Resolve every slot once, then read lags per day.
    std::vector<const std::vector<double>*> sources;
    std::vector<double> static_values;
    for (const auto& slot : encoder.covariate_spec) {
        if (slot.kind == CovariateKind::static_value) {
            auto it = covariates.statics.find(slot.covariate);
            if (it == covariates.statics.end()) {
                throw ConfigError("encoder " + name + ": missing covariate slot '" + slot.label() + "'");
            }
            sources.push_back(nullptr);
            static_values.push_back(it->second);
        } else {
            auto it = covariates.series.find(slot.covariate);
            if (it == covariates.series.end() || it->second.empty()) {
                throw ConfigError("encoder " + name + ": missing covariate slot '" + slot.label() + "'");
            }
            sources.push_back(&it->second);
            static_values.push_back(0.0);
        }
    }
    std::vector<std::vector<double>> rows;
    rows.reserve(static_cast<std::size_t>(std::max(t_end - t_begin, 0)));
    for (int t = t_begin; t < t_end; ++t) {
        std::vector<double> row(encoder.covariate_spec.size());
        for (std::size_t k = 0; k < row.size(); ++k) {
            if (sources[k] == nullptr) {
                row[k] = static_values[k];
                continue;
            }
            const int d = std::max(t - encoder.covariate_spec[k].lag, 0);
            if (d >= static_cast<int>(sources[k]->size())) {
                throw LookupError("covariate '" + encoder.covariate_spec[k].covariate + "' unavailable at day " +
                                  std::to_string(d));
            }
            row[k] = (*sources[k])[static_cast<std::size_t>(d)];
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

} // namespace epigam
