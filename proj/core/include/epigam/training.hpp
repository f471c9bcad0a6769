#pragma once

#include "epigam/autodiff.hpp"
#include "epigam/covariate_forecaster.hpp"
#include "epigam/dynamics.hpp"
#include "epigam/encoders.hpp"
#include "epigam/errors.hpp"
#include "epigam/features.hpp"
#include "epigam/random.hpp"

#include <array>
#include <climits>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace epigam {

enum class LossKind { squared, quantile };

struct LossConfig {
    /// Indexed by Observed (Q, D, H, C, V, R_doc).
    std::array<double, kNumObserved> lambda_Y = {0.1, 0.1, 0.01, 0.001, 0.001, 0.001};
    double z = 0.0;
    double lambda_comp = 1.0;
    double lambda_smooth = 0.0;
    double lambda_ls = 0.01;
    LossKind kind = LossKind::squared;
    std::vector<double> quantiles = {0.1, 0.5, 0.9};
    /// Constraint loss reads recovery rates from the first day of the window
    /// and leaves the undocumented-infection hinge and smoothness unsquared.
    bool strict = false;

    void validate() const;
};

struct TeacherForcingPolicy {
    double lambda_tf = 1.0;
    /// Forcing applies to states on days <= cutoff_day; later days run free.
    int cutoff_day = INT_MAX;

    void validate() const;
};

struct OptimizerConfig {
    double learning_rate = 0.01;
    double rms_decay = 0.9;
    double epsilon = 1e-8;
    int max_iterations = 3000;
    int fine_tune_iterations = 300;
    int patience = 200;
    /// Learning rate decays geometrically from learning_rate to
    /// learning_rate * final_lr_fraction over max_iterations. 1 keeps it constant.
    double final_lr_fraction = 1.0;
    std::uint64_t seed = 0;

    void validate() const;
};

// ---------------------------------------------------------------------------
// Losses

/// Observable predictions of one location. values[o][k] is the prediction
/// for day start_day + k.
template <class T>
struct SeriesPrediction {
    int start_day = 0;
    std::array<std::vector<T>, kNumObserved> values;

    int end_day() const { return start_day + static_cast<int>(values[0].size()); }
};

using Observations = std::array<MaskedSeries, kNumObserved>;

/// Number of (window start, offset) pairs of the windowed fit sum that land
/// on `day`.
int window_multiplicity(int day, int t_start, int t_end, int tau);

inline double pinball(double y, double y_hat, double q) {
    return q * max0(y - y_hat) + (1.0 - q) * max0(y_hat - y);
}

template <class T>
T pinball(double y, const T& y_hat, double q) {
    return q * max0(y - y_hat) + (1.0 - q) * max0(y_hat - y);
}

namespace detail {

inline void check_fit_shapes(int start_day, std::size_t len, const Observations& obs, int t_start, int t_end,
                             int tau) {
    if (tau < 1) {
        throw ShapeError("fit loss horizon must be >= 1");
    }
    const int last = t_end;
    if (t_end - tau >= t_start && last >= start_day + static_cast<int>(len)) {
        throw ShapeError("predictions end at day " + std::to_string(start_day + static_cast<int>(len) - 1) +
                         " but the fit window reaches day " + std::to_string(last));
    }
    for (const auto& s : obs) {
        if (s.present.size() != s.values.size()) {
            throw ShapeError("observation mask length differs from its values");
        }
        if (t_end - tau >= t_start && static_cast<int>(s.size()) <= last) {
            throw ShapeError("observations end before day " + std::to_string(last));
        }
    }
}

} // namespace detail

/// Windowed fit loss: for each compartment, window start t in
/// [t_start, t_end - tau] and offset i in [1, tau], adds
/// lambda_Y * mask * exp((t + i - t_start) z) * (Y - Y_hat)^2. Days before
/// the prediction start are not scored.
template <class T>
T fit_loss(const SeriesPrediction<T>& pred, const Observations& obs, const LossConfig& cfg, int t_start, int t_end,
           int tau) {
    detail::check_fit_shapes(pred.start_day, pred.values[0].size(), obs, t_start, t_end, tau);
    T total = 0.0;
    for (int d = t_start + 1; d <= t_end; ++d) {
        const int mult = window_multiplicity(d, t_start, t_end, tau);
        if (mult == 0 || d < pred.start_day) {
            continue;
        }
        const double w = mult * std::exp(static_cast<double>(d - t_start) * cfg.z);
        const auto k = static_cast<std::size_t>(d - pred.start_day);
        for (std::size_t o = 0; o < kNumObserved; ++o) {
            if (cfg.lambda_Y[o] == 0.0 || !obs[o].has(static_cast<std::size_t>(d))) {
                continue;
            }
            total = total + (cfg.lambda_Y[o] * w) * square(pred.values[o][k] - obs[o].values[static_cast<std::size_t>(d)]);
        }
    }
    return total;
}

/// Same window structure with the pinball loss summed over quantiles;
/// preds[j] holds the trajectory for quantiles[j].
template <class T>
T quantile_fit_loss(const std::vector<SeriesPrediction<T>>& preds, const std::vector<double>& quantiles,
                    const Observations& obs, const LossConfig& cfg, int t_start, int t_end, int tau) {
    if (preds.size() != quantiles.size()) {
        throw ShapeError("quantile fit loss needs one prediction per quantile");
    }
    T total = 0.0;
    for (std::size_t j = 0; j < preds.size(); ++j) {
        const auto& pred = preds[j];
        detail::check_fit_shapes(pred.start_day, pred.values[0].size(), obs, t_start, t_end, tau);
        for (int d = t_start + 1; d <= t_end; ++d) {
            const int mult = window_multiplicity(d, t_start, t_end, tau);
            if (mult == 0 || d < pred.start_day) {
                continue;
            }
            const double w = mult * std::exp(static_cast<double>(d - t_start) * cfg.z);
            const auto k = static_cast<std::size_t>(d - pred.start_day);
            for (std::size_t o = 0; o < kNumObserved; ++o) {
                if (cfg.lambda_Y[o] == 0.0 || !obs[o].has(static_cast<std::size_t>(d))) {
                    continue;
                }
                total = total + (cfg.lambda_Y[o] * w) *
                                    pinball(obs[o].values[static_cast<std::size_t>(d)], pred.values[o][k], quantiles[j]);
            }
        }
    }
    return total;
}

/// Squared hinge excess of the five outflow sums, summed over `rates`.
/// Strict mode takes hospital, ICU and ventilator recovery from rates[0] and
/// leaves the undocumented-infection term unsquared.
template <class T>
T constraint_loss(const std::vector<BasicRateSet<T>>& rates, bool strict = false) {
    using R = Rate;
    T total = 0.0;
    if (rates.empty()) {
        return total;
    }
    const BasicRateSet<T>& first = rates.front();
    for (const auto& r : rates) {
        const T& rho_H = strict ? first[R::rho_H] : r[R::rho_H];
        const T& rho_C = strict ? first[R::rho_C] : r[R::rho_C];
        const T& rho_V = strict ? first[R::rho_V] : r[R::rho_V];
        const T undoc = max0(r[R::rho_I_undoc] + r[R::gamma] - 1.0);
        total = total + square(max0(r[R::rho_I_doc] + r[R::kappa_I_doc] + r[R::h] - 1.0));
        total = total + (strict ? undoc : square(undoc));
        total = total + square(max0(r[R::c_icu] + r[R::kappa_H] + rho_H - 1.0));
        total = total + square(max0(r[R::v_vent] + r[R::kappa_C] + rho_C - 1.0));
        total = total + square(max0(r[R::kappa_V] + rho_V - 1.0));
    }
    return total;
}

/// Sum over sequences of (y[t-1] + y[t+1] - 2 y[t])^2 at interior points
/// (raw second differences when `squared` is false).
template <class T>
T smoothness_loss(const std::vector<std::vector<T>>& sequences, bool squared = true) {
    T total = 0.0;
    for (const auto& y : sequences) {
        for (std::size_t t = 1; t + 1 < y.size(); ++t) {
            const T second = y[t - 1] + y[t + 1] - 2.0 * y[t];
            total = total + (squared ? square(second) : second);
        }
    }
    return total;
}

/// Sum of squared per-location biases.
template <class T>
T local_bias_reg(const std::vector<T>& biases) {
    T total = 0.0;
    for (const auto& b : biases) {
        total = total + square(b);
    }
    return total;
}

double local_bias_reg(const EncoderSet& encoders);

template <class T>
struct LossBreakdown {
    T fit = 0.0;
    T comp = 0.0;
    T smooth = 0.0;
    T ls = 0.0;
    T total = 0.0;
};

template <class T>
T total_loss(const T& fit, const T& comp, const T& smooth, const T& ls, const LossConfig& cfg) {
    return fit + cfg.lambda_comp * comp + cfg.lambda_smooth * smooth + cfg.lambda_ls * ls;
}

// ---------------------------------------------------------------------------
// Rollout

/// Observable view of a state: Q, D, H, C, V, R_doc.
template <class T>
std::array<T, kNumObserved> observables_of(const BasicCompartmentState<T>& s) {
    using C = Compartment;
    return {confirmed_of(s), s[C::D], s[C::H], s[C::C], s[C::V], s[C::R_doc]};
}

namespace detail {

template <class T>
T floor_at(const T& x, double lo) {
    return x + max0(lo - x);
}

} // namespace detail

/// Replaces each observed compartment of `s` by the blend
/// (1 - lambda) * observed + lambda * predicted. Observed Q is matched by
/// rescaling the Q constituents that are not observed themselves; the
/// remainder is clamped at zero when the pinned constituents already exceed Q.
template <class T>
BasicCompartmentState<T> teacher_force(const BasicCompartmentState<T>& s, const Observations& obs, std::size_t day,
                                       double lambda) {
    using C = Compartment;
    BasicCompartmentState<T> out = s;
    auto blend = [&](Observed o, const T& predicted) -> T {
        return (1.0 - lambda) * obs[static_cast<std::size_t>(o)].values[day] + lambda * predicted;
    };
    const std::array<std::pair<Observed, C>, 5> direct = {
        std::pair{Observed::D, C::D}, std::pair{Observed::H, C::H}, std::pair{Observed::C, C::C},
        std::pair{Observed::V, C::V}, std::pair{Observed::R_doc, C::R_doc}};
    for (const auto& [o, c] : direct) {
        if (obs[static_cast<std::size_t>(o)].has(day)) {
            out[c] = blend(o, s[c]);
        }
    }
    if (obs[static_cast<std::size_t>(Observed::Q)].has(day)) {
        const T target = blend(Observed::Q, confirmed_of(s));
        T pinned = 0.0;
        T loose = s[C::I_doc];
        std::vector<C> scaled = {C::I_doc};
        for (auto [o, c] : {std::pair{Observed::R_doc, C::R_doc}, std::pair{Observed::H, C::H},
                            std::pair{Observed::D, C::D}}) {
            if (obs[static_cast<std::size_t>(o)].has(day)) {
                pinned = pinned + out[c];
            } else {
                loose = loose + s[c];
                scaled.push_back(c);
            }
        }
        const T factor = max0(target - pinned) / detail::floor_at(loose, 1e-8);
        for (C c : scaled) {
            out[c] = s[c] * factor;
        }
    }
    return out;
}

/// states[0] = initial (day start_day); states[k+1] = step(force(states[k]),
/// rates[k]). Returned states are the propagated values before forcing.
template <class T>
std::vector<BasicCompartmentState<T>> teacher_forced_rollout(const BasicCompartmentState<T>& initial,
                                                             const std::vector<BasicRateSet<T>>& rates,
                                                             const Observations& obs, int start_day,
                                                             const TeacherForcingPolicy& policy) {
    std::vector<BasicCompartmentState<T>> states;
    states.reserve(rates.size() + 1);
    states.push_back(initial);
    for (std::size_t k = 0; k < rates.size(); ++k) {
        const int day = start_day + static_cast<int>(k);
        if (policy.lambda_tf == 1.0 || day > policy.cutoff_day) {
            states.push_back(step_unchecked(states.back(), rates[k]));
        } else {
            if (obs[0].size() <= static_cast<std::size_t>(day)) {
                throw ShapeError("teacher forcing needs observations through day " + std::to_string(day));
            }
            states.push_back(
                step_unchecked(teacher_force(states.back(), obs, static_cast<std::size_t>(day), policy.lambda_tf),
                               rates[k]));
        }
    }
    return states;
}

template <class T>
SeriesPrediction<T> predictions_of(const std::vector<BasicCompartmentState<T>>& states, int start_day) {
    SeriesPrediction<T> p;
    p.start_day = start_day;
    for (auto& v : p.values) {
        v.reserve(states.size());
    }
    for (const auto& s : states) {
        const auto obs = observables_of(s);
        for (std::size_t o = 0; o < kNumObserved; ++o) {
            p.values[o].push_back(obs[o]);
        }
    }
    return p;
}

// ---------------------------------------------------------------------------
// Initial conditions and optimizer

/// Draws a starting state from the observations on `day` (the regime start).
/// Throws PreconditionError when confirmed cases are absent or zero there.
CompartmentState sample_initial_conditions(const Observations& obs, int day, double population, Rng& rng);

/// The compartments that carry trainable initial values (S is the remainder).
const std::array<Compartment, 9>& trainable_compartments();

struct RmsPropState {
    std::vector<double> mean_square;
};

/// v <- decay v + (1 - decay) g^2; theta <- theta - lr g / (sqrt(v) + eps).
/// Throws DivergenceError naming the first non-finite gradient.
void rmsprop_update(std::vector<double>& params, const std::vector<double>& grads, RmsPropState& state,
                    const OptimizerConfig& cfg, const std::vector<std::string>& names = {});
void rmsprop_step(ad::ParameterStore& store, RmsPropState& state, const OptimizerConfig& cfg);

// ---------------------------------------------------------------------------
// Training configuration and problem

struct TrainConfig {
    int horizon = 14;
    /// History length M; nullopt uses everything from day 0.
    std::optional<int> train_window;
    /// Last training day T; nullopt uses the last panel day.
    std::optional<int> train_end_day;
    LossConfig loss;
    OptimizerConfig optimizer;
    double lambda_tf = 0.5;
    /// Bounds and covariate wiring; weights and biases are initialized here.
    EncoderSet encoders;
    /// Rates the global biases start at (logit of the position inside the bounds).
    std::array<double, kNumRates> initial_rates{};
    int zeta = 14;
    int head_iterations = 1500;
    double head_learning_rate = 0.02;

    void validate() const;
};

/// Plausible daily rates the encoders start from before training.
std::array<double, kNumRates> default_initial_rates();

/// Encoders with default bounds and the given time-varying wiring (lags 1..lag_depth).
EncoderSet make_encoders(const std::map<Rate, std::vector<std::string>>& time_varying,
                         const std::map<Rate, std::vector<std::string>>& statics, int lag_depth);

/// Betas read mobility, gamma reads testing; everything else is bias only.
std::map<Rate, std::vector<std::string>> default_wiring();

struct PhaseSpec {
    int t_start = 0;
    int t_end = 0;
    TeacherForcingPolicy policy;
    /// Validation range scored with z = 0 on the same rollout.
    int val_start = 0;
    int val_end = 0;
};

/// Everything needed to evaluate the training objective on one panel:
/// parameter layout, per-location regime starts and precomputed encoder
/// design rows.
class TrainingProblem {
public:
    TrainingProblem(const PanelDataset& panel, const TrainConfig& config);

    /// Fresh store: encoder weights 0, global biases from the initial rates,
    /// local biases 0, initial conditions drawn with `seed`.
    ad::ParameterStore initial_parameters(std::uint64_t seed) const;

    int end_day() const noexcept { return T_; }
    int window_start() const noexcept { return window_start_; }
    const std::vector<std::size_t>& locations() const noexcept { return locations_; }
    const std::vector<int>& start_days() const noexcept { return starts_; }
    const PanelDataset& panel() const noexcept { return *panel_; }
    const TrainConfig& config() const noexcept { return config_; }

    PhaseSpec phase1() const;
    PhaseSpec phase2() const;

    struct Result {
        double total = 0.0;
        double validation_fit = 0.0;
        LossBreakdown<double> parts;
    };

    /// Records the total loss on `tape` and returns it with the validation fit.
    ad::Var taped_loss(ad::Tape& tape, const ad::ParameterStore& store, const PhaseSpec& phase,
                       Result* result = nullptr) const;
    Result value_loss(const ad::ParameterStore& store, const PhaseSpec& phase) const;

    /// Free-running rollout of every trained location through `end_day`
    /// using observed covariates.
    std::vector<SeriesPrediction<double>> fitted(const ad::ParameterStore& store, int end_day,
                                                 const TeacherForcingPolicy& policy = {}) const;

    /// Writes trained encoder values from the store into a copy of the configured encoders.
    EncoderSet encoders_from(const ad::ParameterStore& store) const;
    /// Trained initial state of each location.
    std::vector<CompartmentState> initial_states(const ad::ParameterStore& store) const;

private:
    template <class T>
    LossBreakdown<T> evaluate(const std::vector<T>& params, const PhaseSpec& phase, double* validation) const;
    template <class T>
    std::vector<BasicRateSet<T>> rates_for(const std::vector<T>& params, std::size_t loc, int end_day) const;
    template <class T>
    BasicCompartmentState<T> initial_for(const std::vector<T>& params, std::size_t loc) const;

    const PanelDataset* panel_;
    TrainConfig config_;
    int T_ = 0;
    int window_start_ = 0;
    std::vector<std::size_t> locations_; // panel indices of trained locations
    std::vector<int> starts_;
    std::vector<std::string> excluded_;

    struct RateLayout {
        ad::ParamId global = 0;
        std::vector<ad::ParamId> weights;
        std::vector<ad::ParamId> local; // per trained location
    };
    std::array<RateLayout, kNumRates> rate_layout_;
    std::vector<std::array<ad::ParamId, 9>> ic_layout_;
    std::vector<std::string> param_names_;
    std::vector<std::string> param_groups_;
    // design_[rate][loc][k]: covariates for day start + 1 + k.
    std::array<std::vector<std::vector<std::vector<double>>>, kNumRates> design_;
    std::vector<LocationCovariates> covariates_;
};

// ---------------------------------------------------------------------------
// Artifact, training and forecasting

struct LocationFit {
    std::string location;
    int start_day = 0;
    CompartmentState initial;
};

/// Affine map from the propagated value to one quantile:
/// y_q = y * (1 + slope) + offset * unit.
struct QuantileHead {
    Observed compartment = Observed::Q;
    double quantile = 0.5;
    double slope = 0.0;
    double offset = 0.0;
};

struct TrainLogEntry {
    int trial = 0;
    int phase = 1;
    int iteration = 0;
    double train_loss = 0.0;
    double validation_fit = 0.0;
};

struct TrainArtifact {
    int version = 1;
    Level level = Level::state;
    std::string anchor_date;
    EncoderSet encoders;
    std::vector<LocationFit> locations;
    LossConfig loss;
    NormalizationTable normalization;
    double validation_score = 0.0;
    int T = 0;
    int M = 0;
    int tau = 0;
    int zeta = 14;
    /// covariate -> location -> forecaster.
    std::map<std::string, std::map<std::string, CovariateForecaster>> forecasters;
    std::vector<QuantileHead> heads;
    std::array<double, kNumObserved> head_units{};
    std::vector<std::string> excluded_locations;
    std::map<std::string, double> hyperparameters;

    std::string to_json() const;
    static TrainArtifact from_json(const std::string& text);
};

struct TrainResult {
    TrainArtifact artifact;
    std::vector<TrainLogEntry> log;
    int phase1_iterations = 0;
    int best_iteration = -1;
};

/// Two-phase training: teacher-forced optimization with early stopping on
/// the validation fit, then fine-tuning on the whole window without forcing.
/// Throws DivergenceError on a non-finite loss.
TrainResult train(const PanelDataset& panel, const TrainConfig& config, int trial = 0);

struct SearchRange {
    double lo = 0.0;
    double hi = 0.0;
    bool log_scale = false;
};

struct SearchSpace {
    SearchRange learning_rate{1e-4, 1e-1, true};
    SearchRange z{0.0, 0.02, false};
    SearchRange lambda_comp{0.1, 100.0, true};
    SearchRange lambda_smooth{1e-8, 1e-4, true};
    SearchRange lambda_ls{1e-4, 1.0, true};
};

struct TrialResult {
    int index = 0;
    double learning_rate = 0.0;
    double z = 0.0;
    double lambda_comp = 0.0;
    double lambda_smooth = 0.0;
    double lambda_ls = 0.0;
    std::uint64_t seed = 0;
    double score = 0.0; // +inf for diverged trials
    std::string error;
};

struct SearchResult {
    TrainResult best;
    int best_index = -1;
    std::vector<TrialResult> trials;
};

/// Seeded random search; trials run on up to `threads` workers and merge by
/// (score, index). Throws ConfigError for zero trials and DivergenceError
/// if every trial diverges.
SearchResult hyperparameter_search(const PanelDataset& panel, const TrainConfig& base, const SearchSpace& space,
                                   int trials, std::uint64_t seed, int threads = 1);

/// Draws trial `index` of a search.
TrainConfig sample_trial(const TrainConfig& base, const SearchSpace& space, std::uint64_t seed, int index,
                         TrialResult* record = nullptr);

struct LocationForecast {
    std::string location;
    int start_day = 0; // first day of `point`
    /// Full free-running trajectory from the location's start day.
    SeriesPrediction<double> point;
    /// Per head quantile (sorted ascending); empty for point artifacts.
    std::vector<double> quantiles;
    std::vector<SeriesPrediction<double>> quantile_paths;
};

/// Covariates extended past T by the artifact's forecasters, with observed
/// values up to T.
LocationCovariates extended_covariates(const TrainArtifact& artifact, const PanelDataset& panel, std::size_t location,
                                       int horizon);

/// Free-runs each trained location from its start day through T + horizon.
/// Quantile paths are sorted per day so they never cross.
std::vector<LocationForecast> forecast(const TrainArtifact& artifact, const PanelDataset& panel, int horizon);

/// Applies the heads of `artifact` to a point trajectory.
std::vector<SeriesPrediction<double>> apply_heads(const TrainArtifact& artifact, const SeriesPrediction<double>& point);

/// Forecast rows location_id,date,compartment,quantile,value for days
/// T+1..T+horizon; values are clamped at 0.
std::string forecast_to_csv(const TrainArtifact& artifact, const std::vector<LocationForecast>& forecasts,
                            int horizon);

} // namespace epigam
