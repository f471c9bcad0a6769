#include "epigam/covariate_forecaster.hpp"
#include "epigam/encoders.hpp"
#include "epigam/errors.hpp"
#include "epigam/random.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

using namespace epigam;

namespace {

RateEncoder bare(Rate r, double lo, double hi) {
    RateEncoder e;
    e.variable = r;
    e.lower_bound = lo;
    e.upper_bound = hi;
    e.local_bias["A"] = 0.0;
    return e;
}

RateEncoder with_slots(Rate r, double lo, double hi, const std::vector<CovariateSlot>& slots) {
    RateEncoder e = bare(r, lo, hi);
    e.covariate_spec = slots;
    e.weights.assign(slots.size(), 0.0);
    return e;
}

double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

EncoderSet bias_only_set() {
    EncoderSet set;
    for (Rate r : all_rates()) {
        const RateBounds b = default_bounds(r);
        set[r] = bare(r, b.lower, b.upper);
    }
    return set;
}

// Reference autoregressive rollout written against the documented feature
// layout: oldest-first window, then max/mean.
std::vector<double> reference_rollout(const std::vector<double>& w, std::vector<double> h, int zeta, int steps) {
    std::vector<double> out;
    for (int s = 0; s < steps; ++s) {
        const auto first = h.end() - zeta;
        double mean = 0.0;
        double peak = *first;
        for (auto it = first; it != h.end(); ++it) {
            mean += *it;
            peak = std::max(peak, *it);
        }
        mean /= zeta;
        double y = w[static_cast<std::size_t>(zeta)] * (mean == 0.0 ? 0.0 : peak / mean);
        for (int k = 0; k < zeta; ++k) {
            y += w[static_cast<std::size_t>(k)] * first[k];
        }
        out.push_back(y);
        h.push_back(y);
    }
    return out;
}

} // namespace

TEST(EncodeRate, ZeroParametersGiveBoundMidpoint) {
    EXPECT_DOUBLE_EQ(encode_rate(bare(Rate::h, 0.0, 0.1), {}, {}, "A"), 0.05);
}

TEST(EncodeRate, SaturatesAtUpperBound) {
    RateEncoder e = bare(Rate::beta_doc, 0.0, 10.0);
    e.global_bias = 40.0;
    EXPECT_NEAR(encode_rate(e, {}, {}, "A"), 10.0, 1e-12);
}

TEST(EncodeRate, SingleCovariateLogit) {
    RateEncoder e = with_slots(Rate::gamma, 0.0, 1.0, {{"x", CovariateKind::static_value, 0}});
    e.weights = {2.0};
    EXPECT_NEAR(encode_rate(e, {{"x", 1.0}}, {}, "A"), 0.8807970779778823, 1e-15);
}

TEST(EncodeRate, CombinesBiasesAndLaggedWindows) {
    RateEncoder e = with_slots(Rate::beta_undoc, 0.0, 10.0,
                               {{"density", CovariateKind::static_value, 0},
                                {"mobility", CovariateKind::time_varying, 1},
                                {"mobility", CovariateKind::time_varying, 3}});
    e.weights = {0.5, -1.0, 2.0};
    e.global_bias = -0.3;
    e.local_bias["A"] = 0.2;
    const CovariateWindows w = {{"mobility", {0.9, 0.4, 0.25}}};
    const double logit = -0.3 + 0.2 + 0.5 * 0.6 - 1.0 * 0.9 + 2.0 * 0.25;
    EXPECT_NEAR(encode_rate(e, {{"density", 0.6}}, w, "A"), 10.0 * logistic(logit), 1e-14);
}

TEST(EncodeRate, MissingSlotAndUnknownLocationAreErrors) {
    RateEncoder e = with_slots(Rate::gamma, 0.0, 0.1, {{"testing", CovariateKind::time_varying, 2}});
    try {
        encode_rate(e, {}, {{"testing", {0.1}}}, "A");
        FAIL();
    } catch (const ConfigError& err) {
        EXPECT_NE(std::string(err.what()).find("testing@2"), std::string::npos) << err.what();
    }
    EXPECT_THROW(encode_rate(bare(Rate::h, 0, 0.1), {}, {}, "nowhere"), LookupError);
}

TEST(EncodeRate, OutputStaysInsideBounds) {
    Rng rng(11);
    for (int i = 0; i < 2000; ++i) {
        const double lo = uniform(rng, 0.0, 1.0);
        const double hi = lo + uniform(rng, 0.01, 5.0);
        RateEncoder e = with_slots(Rate::alpha, lo, hi, {{"x", CovariateKind::static_value, 0}});
        e.weights = {uniform(rng, -10.0, 10.0)};
        e.global_bias = uniform(rng, -10.0, 10.0);
        e.local_bias["A"] = uniform(rng, -5.0, 5.0);
        const double v = encode_rate(e, {{"x", uniform01(rng)}}, {}, "A");
        EXPECT_GT(v, lo);
        EXPECT_LT(v, hi);
    }
}

TEST(EncodeRate, IncreasingInPositivelyWeightedCovariate) {
    Rng rng(12);
    for (int i = 0; i < 200; ++i) {
        RateEncoder e = with_slots(Rate::beta_doc, 0.0, 10.0,
                                   {{"x", CovariateKind::static_value, 0}, {"y", CovariateKind::static_value, 0}});
        e.weights = {uniform(rng, 0.01, 5.0), uniform(rng, -5.0, 5.0)};
        e.global_bias = uniform(rng, -3.0, 3.0);
        const double y = uniform01(rng);
        const double x1 = uniform(rng, 0.0, 0.5);
        const double x2 = x1 + uniform(rng, 0.01, 0.5);
        EXPECT_LT(encode_rate(e, {{"x", x1}, {"y", y}}, {}, "A"), encode_rate(e, {{"x", x2}, {"y", y}}, {}, "A"));
    }
}

TEST(EncodeRate, GradientMatchesFiniteDifferences) {
    Rng rng(13);
    const double h = 1e-5;
    for (int i = 0; i < 100; ++i) {
        RateEncoder e = with_slots(Rate::rho_H, 0.0, 0.1,
                                   {{"a", CovariateKind::static_value, 0}, {"b", CovariateKind::static_value, 0}});
        e.weights = {uniform(rng, -2, 2), uniform(rng, -2, 2)};
        e.global_bias = uniform(rng, -2, 2);
        e.local_bias["A"] = uniform(rng, -1, 1);
        const std::vector<double> x = {uniform01(rng), uniform01(rng)};
        const StaticCovariates st = {{"a", x[0]}, {"b", x[1]}};
        const EncoderGradient g = encode_rate_gradient(e, x, "A");
        EXPECT_DOUBLE_EQ(g.value, encode_rate(e, st, {}, "A"));

        auto rel = [](double a, double n) { return std::abs(a - n) / std::max(std::abs(a), 1e-12); };
        RateEncoder up = e;
        RateEncoder down = e;
        up.global_bias += h;
        down.global_bias -= h;
        const double fd_bias = (encode_rate(up, st, {}, "A") - encode_rate(down, st, {}, "A")) / (2 * h);
        EXPECT_LE(rel(g.d_bias, fd_bias), 1e-6);
        for (std::size_t k = 0; k < 2; ++k) {
            up = e;
            down = e;
            up.weights[k] += h;
            down.weights[k] -= h;
            const double fd = (encode_rate(up, st, {}, "A") - encode_rate(down, st, {}, "A")) / (2 * h);
            EXPECT_LE(rel(g.d_weights[k], fd), 1e-6) << k;
        }
    }
}

TEST(EncodeRatesOverTime, ConstantCovariatesGiveConstantRates) {
    EncoderSet set = bias_only_set();
    set[Rate::beta_doc] = with_slots(Rate::beta_doc, 0, 10, {{"mobility", CovariateKind::time_varying, 1}});
    set[Rate::beta_doc].weights = {1.5};
    LocationCovariates cov;
    cov.series["mobility"] = std::vector<double>(30, 0.4);
    const auto rates = encode_rates_over_time(set, cov, "A", 1, 30);
    ASSERT_EQ(rates.size(), 29u);
    for (const auto& r : rates) {
        EXPECT_EQ(r.values, rates.front().values);
    }
}

TEST(EncodeRatesOverTime, BiasOnlyAlphaSitsAtMidpoint) {
    LocationCovariates cov;
    for (const auto& r : encode_rates_over_time(bias_only_set(), cov, "A", 0, 10)) {
        EXPECT_DOUBLE_EQ(r[Rate::alpha], 0.1);
    }
}

TEST(EncodeRatesOverTime, StepChangeReachesContactRatesOneDayLater) {
    EncoderSet set = bias_only_set();
    for (Rate r : {Rate::beta_doc, Rate::beta_undoc}) {
        set[r] = with_slots(r, 0, 10, {{"mobility", CovariateKind::time_varying, 1}});
        set[r].weights = {2.0};
    }
    const int t_star = 12;
    LocationCovariates cov;
    cov.series["mobility"].assign(25, 0.2);
    std::fill(cov.series["mobility"].begin() + t_star, cov.series["mobility"].end(), 0.8);
    const auto rates = encode_rates_over_time(set, cov, "A", 1, 25);
    const double before = 10.0 * logistic(2.0 * 0.2);
    const double after = 10.0 * logistic(2.0 * 0.8);
    for (int t = 1; t < 25; ++t) {
        const double expected = t <= t_star ? before : after;
        EXPECT_DOUBLE_EQ(rates[static_cast<std::size_t>(t - 1)][Rate::beta_doc], expected) << t;
        EXPECT_DOUBLE_EQ(rates[static_cast<std::size_t>(t - 1)][Rate::beta_undoc], expected) << t;
    }
}

TEST(DefaultBounds, FollowPerRateLimits) {
    EXPECT_EQ(default_bounds(Rate::beta_doc).upper, 10.0);
    EXPECT_EQ(default_bounds(Rate::beta_undoc).upper, 10.0);
    EXPECT_EQ(default_bounds(Rate::alpha).upper, 0.2);
    for (Rate r : all_rates()) {
        EXPECT_EQ(default_bounds(r).lower, 0.0);
        if (r != Rate::beta_doc && r != Rate::beta_undoc && r != Rate::alpha) {
            EXPECT_EQ(default_bounds(r).upper, 0.1) << rate_name(r);
        }
    }
}

TEST(CovariateForecaster, ZeroWeightsForecastZeros) {
    CovariateForecaster f;
    f.zeta = 5;
    f.weights.assign(6, 0.0);
    const std::vector<double> h = {1, 2, 3, 4, 5, 6};
    for (double v : forecast_covariate(f, h, 9)) {
        EXPECT_EQ(v, 0.0);
    }
}

TEST(CovariateForecaster, PeakToMeanOfZeroWindowIsZero) {
    const std::vector<double> zeros(14, 0.0);
    EXPECT_EQ(peak_to_mean(zeros), 0.0);
    const std::vector<double> w = {1.0, 3.0};
    EXPECT_DOUBLE_EQ(peak_to_mean(w), 1.5);
}

TEST(CovariateForecaster, ConstantHistoryStaysConstant) {
    const std::vector<double> h(40, 0.37);
    const CovariateForecaster f = fit_covariate_forecaster(h, 14);
    for (double v : forecast_covariate(f, h, 14)) {
        EXPECT_NEAR(v, 0.37, 1e-6);
    }
    // In-sample one-step predictions reproduce the constant.
    for (std::size_t t = 14; t < h.size(); ++t) {
        const auto fc = forecast_covariate(f, std::span<const double>(h.data(), t), 1);
        EXPECT_NEAR(fc[0], 0.37, 1e-9);
    }
}

TEST(CovariateForecaster, RecoversExactAutoregression) {
    std::vector<double> h = {1.0};
    for (int t = 1; t < 60; ++t) {
        h.push_back(0.9 * h.back());
    }
    const CovariateForecaster f = fit_covariate_forecaster(h, 14);
    for (std::size_t t = 14; t < h.size(); ++t) {
        const auto fc = forecast_covariate(f, std::span<const double>(h.data(), t), 1);
        EXPECT_NEAR(fc[0], h[t], 1e-9) << t;
    }
}

TEST(CovariateForecaster, SawtoothRolloutKeepsPeriodSeven) {
    std::vector<double> h;
    for (int t = 0; t < 70; ++t) {
        h.push_back(0.1 + 0.1 * (t % 7));
    }
    const CovariateForecaster f = fit_covariate_forecaster(h, 14);
    const auto fc = forecast_covariate(f, h, 21);
    const auto ref = reference_rollout(f.weights, h, 14, 21);
    ASSERT_EQ(fc.size(), ref.size());
    for (std::size_t i = 0; i < fc.size(); ++i) {
        EXPECT_NEAR(fc[i], ref[i], 1e-12);
    }
    // History ends at phase 6 (the peak), so forecast peaks land on i = 6, 13, 20.
    for (std::size_t i = 0; i < fc.size(); ++i) {
        const bool peak = i % 7 == 6;
        EXPECT_EQ(peak, fc[i] > 0.6) << i << " " << fc[i];
    }
}

TEST(CovariateForecaster, ShortHistoryIsPreconditionError) {
    const std::vector<double> h(27, 1.0);
    EXPECT_THROW(fit_covariate_forecaster(h, 14), PreconditionError);
}

TEST(CovariateForecaster, RolloutIsBitIdenticalAcrossRuns) {
    Rng rng(14);
    std::vector<double> h;
    for (int t = 0; t < 50; ++t) {
        h.push_back(uniform01(rng));
    }
    const CovariateForecaster f = fit_covariate_forecaster(h, 14);
    EXPECT_EQ(forecast_covariate(f, h, 14), forecast_covariate(f, h, 14));
    EXPECT_EQ(fit_covariate_forecaster(h, 14).weights, f.weights);
}
