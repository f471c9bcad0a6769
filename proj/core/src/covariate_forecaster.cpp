#include "epigam/covariate_forecaster.hpp"

#include "epigam/errors.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>

namespace epigam {

void CovariateForecaster::validate() const {
    if (zeta < 2) {
        throw ConfigError("covariate forecaster window must be at least 2, got " + std::to_string(zeta));
    }
    if (weights.size() != static_cast<std::size_t>(zeta) + 1) {
        throw ConfigError("covariate forecaster needs " + std::to_string(zeta + 1) + " weights, got " +
                          std::to_string(weights.size()));
    }
    for (double w : weights) {
        if (!std::isfinite(w)) {
            throw ConfigError("covariate forecaster weight is not finite");
        }
    }
}

double peak_to_mean(std::span<const double> window) {
    if (window.empty()) {
        return 0.0;
    }
    const double mean = std::accumulate(window.begin(), window.end(), 0.0) / static_cast<double>(window.size());
    if (mean == 0.0) {
        return 0.0;
    }
    return *std::max_element(window.begin(), window.end()) / mean;
}

std::vector<double> forecaster_features(std::span<const double> window) {
    std::vector<double> f(window.begin(), window.end());
    f.push_back(peak_to_mean(window));
    return f;
}

std::vector<double> forecast_covariate(const CovariateForecaster& forecaster, std::span<const double> history,
                                       int steps) {
    forecaster.validate();
    const auto zeta = static_cast<std::size_t>(forecaster.zeta);
    if (history.size() < zeta) {
        throw PreconditionError("covariate forecast needs at least " + std::to_string(zeta) +
                                " history values, got " + std::to_string(history.size()));
    }
    for (std::size_t i = history.size() - zeta; i < history.size(); ++i) {
        if (!std::isfinite(history[i])) {
            throw PreconditionError("covariate history contains a non-finite value");
        }
    }
    std::vector<double> buffer(history.end() - static_cast<std::ptrdiff_t>(zeta), history.end());
    std::vector<double> out;
    out.reserve(static_cast<std::size_t>(std::max(steps, 0)));
    for (int s = 0; s < steps; ++s) {
        std::span<const double> window(buffer.data() + buffer.size() - zeta, zeta);
        const std::vector<double> f = forecaster_features(window);
        double next = 0.0;
        for (std::size_t k = 0; k < f.size(); ++k) {
            next += forecaster.weights[k] * f[k];
        }
        out.push_back(next);
        buffer.push_back(next);
    }
    return out;
}

CovariateForecaster fit_covariate_forecaster(std::span<const double> history, int zeta) {
    if (zeta < 2) {
        throw ConfigError("covariate forecaster window must be at least 2, got " + std::to_string(zeta));
    }
    const auto z = static_cast<std::size_t>(zeta);
    if (history.size() < 2 * z) {
        throw PreconditionError("covariate forecaster fit needs at least " + std::to_string(2 * z) +
                                " values, got " + std::to_string(history.size()));
    }
    const std::size_t rows = history.size() - z;
    const std::size_t cols = z + 1;
    Eigen::MatrixXd X(rows, cols);
    Eigen::VectorXd y(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const std::vector<double> f = forecaster_features(history.subspan(r, z));
        for (std::size_t c = 0; c < cols; ++c) {
            X(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = f[c];
        }
        y(static_cast<Eigen::Index>(r)) = history[r + z];
    }

    Eigen::VectorXd w;
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(X);
    if (qr.rank() == static_cast<Eigen::Index>(cols)) {
        w = qr.solve(y);
    } else {
        const Eigen::MatrixXd gram =
            X.transpose() * X + kForecasterRidge * Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(cols),
                                                                             static_cast<Eigen::Index>(cols));
        const auto ldlt = gram.ldlt();
        // Iterated ridge: each pass re-solves for the remaining residual, which
        // removes the shrinkage bias on directions the data do determine.
        w = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(cols));
        for (int pass = 0; pass < kForecasterRidgePasses; ++pass) {
            w += ldlt.solve(X.transpose() * (y - X * w));
        }
    }

    CovariateForecaster fc;
    fc.zeta = zeta;
    fc.weights.assign(w.data(), w.data() + w.size());
    return fc;
}

} // namespace epigam
