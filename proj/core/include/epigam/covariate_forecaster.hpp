#pragma once

#include <span>
#include <vector>

namespace epigam {

/// Linear autoregressive model over the last `zeta` values plus their
/// peak-to-mean ratio. weights[0..zeta-1] multiply the window in time
/// order (oldest first); weights[zeta] multiplies the peak-to-mean feature.
struct CovariateForecaster {
    int zeta = 14;
    std::vector<double> weights;

    void validate() const;
};

/// max/mean of the window; defined as 0 when the mean is 0.
double peak_to_mean(std::span<const double> window);

/// Feature vector [window..., peak_to_mean(window)] for one prediction.
std::vector<double> forecaster_features(std::span<const double> window);

/// Autoregressive rollout of `steps` new values after `history`; forecasted
/// values feed later windows.
std::vector<double> forecast_covariate(const CovariateForecaster& forecaster, std::span<const double> history,
                                       int steps);

/// Ordinary least squares over every sliding window of `history`. Falls back
/// to iterated ridge regression (penalty 1e-6, four passes) when the design
/// is rank deficient.
/// Requires history.size() >= 2 * zeta.
CovariateForecaster fit_covariate_forecaster(std::span<const double> history, int zeta = 14);

inline constexpr double kForecasterRidge = 1e-6;
inline constexpr int kForecasterRidgePasses = 4;

} // namespace epigam
