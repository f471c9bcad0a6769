#pragma once

#include "epigam/autodiff.hpp"
#include "epigam/dynamics.hpp"

#include <map>
#include <span>
#include <string>
#include <vector>

namespace epigam {

enum class CovariateKind { static_value, time_varying };

/// One input of an encoder: a static covariate, or a time-varying covariate
/// observed `lag` days before the encoded day.
struct CovariateSlot {
    std::string covariate;
    CovariateKind kind = CovariateKind::static_value;
    int lag = 0;

    /// "income" for statics, "mobility@3" for lag 3 of a time-varying one.
    std::string label() const;
    bool operator==(const CovariateSlot&) const = default;
};

struct RateBounds {
    double lower = 0.0;
    double upper = 0.1;
};

/// v_L = 0 everywhere; v_U = 10 for the contact rates, 0.2 for alpha,
/// 0.1 for everything else.
RateBounds default_bounds(Rate r);

/// Sigmoid-bounded generalized additive encoder of a single rate:
///   v = lower + (upper - lower) * sigmoid(global_bias + local_bias[loc] + w . x)
struct RateEncoder {
    Rate variable = Rate::alpha;
    double lower_bound = 0.0;
    double upper_bound = 0.1;
    double global_bias = 0.0;
    std::map<std::string, double> local_bias;
    std::vector<double> weights;
    std::vector<CovariateSlot> covariate_spec;

    /// Throws ConfigError when bounds are not ordered or weights and slots differ in length.
    void validate() const;
    /// Local bias for `location`; throws LookupError if absent.
    double local_bias_of(const std::string& location) const;
};

using StaticCovariates = std::map<std::string, double>;
/// Time-varying covariate id -> values at lags 1..k (element 0 is lag 1).
using CovariateWindows = std::map<std::string, std::vector<double>>;

/// Gathers the encoder's covariate vector. Throws ConfigError naming the
/// first slot that cannot be resolved.
std::vector<double> resolve_covariates(const RateEncoder& encoder, const StaticCovariates& statics,
                                       const CovariateWindows& windows);

template <class T>
T encoder_logit(const T& global_bias, const T& local_bias, std::span<const T> weights, std::span<const double> x) {
    T logit = global_bias + local_bias;
    for (std::size_t k = 0; k < weights.size(); ++k) {
        if (x[k] != 0.0) {
            logit = logit + weights[k] * x[k];
        }
    }
    return logit;
}

template <class T>
T bounded_rate(double lower, double upper, const T& logit) {
    return lower + (upper - lower) * sigmoid(logit);
}

double encode_rate(const RateEncoder& encoder, const StaticCovariates& statics, const CovariateWindows& windows,
                   const std::string& location);

/// d(rate)/d(global_bias) (equal to the local-bias derivative) and d(rate)/d(w).
struct EncoderGradient {
    double value = 0.0;
    double d_bias = 0.0;
    std::vector<double> d_weights;
};
EncoderGradient encode_rate_gradient(const RateEncoder& encoder, std::span<const double> x,
                                     const std::string& location);

/// One encoder per rate variable, indexed by Rate.
struct EncoderSet {
    std::array<RateEncoder, kNumRates> encoders;

    RateEncoder& operator[](Rate r) { return encoders[static_cast<std::size_t>(r)]; }
    const RateEncoder& operator[](Rate r) const { return encoders[static_cast<std::size_t>(r)]; }
};

/// Covariates of a single location. Time-varying series are day-indexed and
/// may extend past the last observed day with forecasted values.
struct LocationCovariates {
    StaticCovariates statics;
    std::map<std::string, std::vector<double>> series;
};

/// Windows for day t: values at t-1 .. t-max_lag. Days before the first
/// series entry clamp to day 0; days past the end throw LookupError.
CovariateWindows windows_at(const LocationCovariates& covariates, int day, int max_lag);

/// Rates for every day in [t_begin, t_end). The rate set for day t drives
/// the transition from day t-1 to day t.
std::vector<RateSet> encode_rates_over_time(const EncoderSet& encoders, const LocationCovariates& covariates,
                                            const std::string& location, int t_begin, int t_end);

/// Design rows (one per day in [t_begin, t_end)) for a single encoder.
std::vector<std::vector<double>> design_rows(const RateEncoder& encoder, const LocationCovariates& covariates,
                                             int t_begin, int t_end);

} // namespace epigam
