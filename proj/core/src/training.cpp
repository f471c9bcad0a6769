#include "epigam/training.hpp"

#include "epigam/errors.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <limits>
#include <set>
#include <thread>

namespace epigam {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double logit_of(double rate, double lower, double upper) {
    const double p = std::clamp((rate - lower) / (upper - lower), 1e-6, 1.0 - 1e-6);
    return std::log(p / (1.0 - p));
}

} // namespace

// ---------------------------------------------------------------------------
// Configuration validation

void LossConfig::validate() const {
    for (std::size_t o = 0; o < kNumObserved; ++o) {
        if (!(lambda_Y[o] >= 0.0) || !std::isfinite(lambda_Y[o])) {
            throw ConfigError("loss weight for " + std::string(observed_name(static_cast<Observed>(o))) +
                              " must be finite and >= 0");
        }
    }
    if (!std::isfinite(z)) {
        throw ConfigError("time-weighting exponent z must be finite");
    }
    for (double v : {lambda_comp, lambda_smooth, lambda_ls}) {
        if (!(v >= 0.0) || !std::isfinite(v)) {
            throw ConfigError("regularizer weights must be finite and >= 0");
        }
    }
    if (kind == LossKind::quantile && quantiles.empty()) {
        throw ConfigError("quantile loss needs at least one quantile");
    }
    for (std::size_t i = 0; i < quantiles.size(); ++i) {
        if (!(quantiles[i] > 0.0 && quantiles[i] < 1.0)) {
            throw ConfigError("quantiles must lie in (0, 1)");
        }
        if (i > 0 && !(quantiles[i] > quantiles[i - 1])) {
            throw ConfigError("quantiles must be strictly increasing");
        }
    }
}

void TeacherForcingPolicy::validate() const {
    if (!(lambda_tf >= 0.0 && lambda_tf <= 1.0)) {
        throw ConfigError("teacher forcing lambda must lie in [0, 1]");
    }
}

void OptimizerConfig::validate() const {
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
        throw ConfigError("learning rate must be positive");
    }
    if (!(rms_decay > 0.0 && rms_decay < 1.0)) {
        throw ConfigError("RMSProp decay must lie in (0, 1)");
    }
    if (!(epsilon > 0.0)) {
        throw ConfigError("RMSProp epsilon must be positive");
    }
    if (!(final_lr_fraction > 0.0 && final_lr_fraction <= 1.0)) {
        throw ConfigError("final_lr_fraction must be in (0, 1]");
    }
    if (max_iterations < 0 || fine_tune_iterations < 0 || patience < 1) {
        throw ConfigError("iteration counts must be >= 0 and patience >= 1");
    }
}

void TrainConfig::validate() const {
    if (horizon < 1) {
        throw ConfigError("horizon must be >= 1");
    }
    if (train_window && *train_window <= horizon) {
        throw ConfigError("training window M must exceed the horizon");
    }
    loss.validate();
    optimizer.validate();
    TeacherForcingPolicy{lambda_tf}.validate();
    for (const auto& e : encoders.encoders) {
        e.validate();
    }
    for (Rate r : all_rates()) {
        const auto& e = encoders[r];
        const double v = initial_rates[static_cast<std::size_t>(r)];
        if (!(v > e.lower_bound && v < e.upper_bound)) {
            throw ConfigError("initial rate for " + std::string(rate_name(r)) + " must lie inside its bounds");
        }
    }
    if (zeta < 2) {
        throw ConfigError("covariate forecaster window must be at least 2");
    }
    if (head_iterations < 0 || !(head_learning_rate > 0.0)) {
        throw ConfigError("quantile head iterations must be >= 0 with a positive learning rate");
    }
}

// ---------------------------------------------------------------------------
// Losses

int window_multiplicity(int day, int t_start, int t_end, int tau) {
    const int lo = std::max(1, day - (t_end - tau));
    const int hi = std::min(tau, day - t_start);
    return std::max(0, hi - lo + 1);
}

double local_bias_reg(const EncoderSet& encoders) {
    double total = 0.0;
    for (const auto& e : encoders.encoders) {
        for (const auto& [_, b] : e.local_bias) {
            total += b * b;
        }
    }
    return total;
}

// ---------------------------------------------------------------------------
// Initial conditions and optimizer

const std::array<Compartment, 9>& trainable_compartments() {
    using C = Compartment;
    static const std::array<Compartment, 9> list = {C::E, C::I_doc, C::I_undoc, C::R_doc, C::R_undoc,
                                                    C::H, C::C,     C::V,       C::D};
    return list;
}

CompartmentState sample_initial_conditions(const Observations& obs, int day, double population, Rng& rng) {
    using C = Compartment;
    const auto d = static_cast<std::size_t>(day);
    const auto& q = obs[static_cast<std::size_t>(Observed::Q)];
    if (day < 0 || !q.has(d) || !(q.values[d] > 0.0)) {
        throw PreconditionError("initial conditions need a positive confirmed count on day " + std::to_string(day));
    }
    if (!(population > 0.0)) {
        throw PreconditionError("initial conditions need a positive population");
    }
    auto observed = [&](Observed o) -> std::optional<double> {
        const auto& s = obs[static_cast<std::size_t>(o)];
        if (s.has(d)) {
            return s.values[d];
        }
        return std::nullopt;
    };
    const double Q0 = q.values[d];
    // Fixed draw order keeps the stream stable whatever is observed.
    const double psi_e1 = uniform01(rng);
    const double psi_e2 = uniform01(rng);
    const double psi_u1 = uniform01(rng);
    const double psi_u2 = uniform01(rng);
    const double psi_r = uniform01(rng);
    const double psi_h = uniform01(rng);
    const double psi_c = uniform01(rng);
    const double psi_v = uniform01(rng);

    CompartmentState s;
    s.N = population;
    s[C::E] = std::max(100.0 * psi_e1, 10.0 * psi_e2 * Q0);
    s[C::I_doc] = Q0;
    s[C::I_undoc] = std::max(100.0 * psi_u1, 10.0 * psi_u2 * Q0);
    s[C::R_doc] = observed(Observed::R_doc).value_or(0.0);
    s[C::R_undoc] = 5.0 * psi_r * s[C::R_doc];
    s[C::H] = observed(Observed::H).value_or(0.5 * psi_h * Q0);
    s[C::C] = std::min(observed(Observed::C).value_or(0.2 * psi_c * Q0), s[C::H]);
    s[C::V] = std::min(observed(Observed::V).value_or(0.5 * psi_v * Q0), s[C::C]);
    s[C::D] = observed(Observed::D).value_or(0.0);
    const double used = s[C::E] + s[C::I_doc] + s[C::I_undoc] + s[C::R_doc] + s[C::R_undoc] + s[C::H] + s[C::D];
    s[C::S] = population - used;
    if (s[C::S] < 0.0) {
        throw PreconditionError("sampled initial compartments exceed the population on day " + std::to_string(day));
    }
    return s;
}

void rmsprop_update(std::vector<double>& params, const std::vector<double>& grads, RmsPropState& state,
                    const OptimizerConfig& cfg, const std::vector<std::string>& names) {
    if (grads.size() != params.size()) {
        throw ShapeError("RMSProp: gradient count differs from parameter count");
    }
    if (state.mean_square.empty()) {
        state.mean_square.assign(params.size(), 0.0);
    }
    if (state.mean_square.size() != params.size()) {
        throw ShapeError("RMSProp: optimizer state does not match the parameters");
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (!std::isfinite(grads[i])) {
            const std::string name = i < names.size() ? names[i] : "#" + std::to_string(i);
            throw DivergenceError("non-finite gradient for parameter '" + name + "'");
        }
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        const double g = grads[i];
        double& v = state.mean_square[i];
        v = cfg.rms_decay * v + (1.0 - cfg.rms_decay) * g * g;
        params[i] -= cfg.learning_rate * g / (std::sqrt(v) + cfg.epsilon);
    }
}

void rmsprop_step(ad::ParameterStore& store, RmsPropState& state, const OptimizerConfig& cfg) {
    std::vector<double> params = store.values();
    std::vector<std::string> names;
    names.reserve(store.size());
    for (const auto& p : store.parameters()) {
        names.push_back(p.name);
    }
    rmsprop_update(params, store.gradients(), state, cfg, names);
    store.set_values(params);
}

// ---------------------------------------------------------------------------
// Defaults

std::array<double, kNumRates> default_initial_rates() {
    std::array<double, kNumRates> r{};
    auto set = [&](Rate rate, double v) { r[static_cast<std::size_t>(rate)] = v; };
    set(Rate::beta_doc, 0.05);
    set(Rate::beta_undoc, 0.3);
    set(Rate::eta, 0.001);
    set(Rate::alpha, 0.1);
    set(Rate::gamma, 0.05);
    set(Rate::h, 0.01);
    set(Rate::c_icu, 0.02);
    set(Rate::v_vent, 0.02);
    set(Rate::rho_I_doc, 0.05);
    set(Rate::rho_I_undoc, 0.05);
    set(Rate::rho_H, 0.05);
    set(Rate::rho_C, 0.05);
    set(Rate::rho_V, 0.05);
    set(Rate::kappa_I_doc, 0.001);
    set(Rate::kappa_H, 0.005);
    set(Rate::kappa_C, 0.005);
    set(Rate::kappa_V, 0.01);
    return r;
}

std::map<Rate, std::vector<std::string>> default_wiring() {
    return {{Rate::beta_doc, {"mobility"}}, {Rate::beta_undoc, {"mobility"}}, {Rate::gamma, {"testing"}}};
}

EncoderSet make_encoders(const std::map<Rate, std::vector<std::string>>& time_varying,
                         const std::map<Rate, std::vector<std::string>>& statics, int lag_depth) {
    if (lag_depth < 1) {
        throw ConfigError("lag depth must be >= 1");
    }
    EncoderSet set;
    for (Rate r : all_rates()) {
        RateEncoder& e = set[r];
        e.variable = r;
        const RateBounds b = default_bounds(r);
        e.lower_bound = b.lower;
        e.upper_bound = b.upper;
        if (auto it = statics.find(r); it != statics.end()) {
            for (const auto& cov : it->second) {
                e.covariate_spec.push_back({cov, CovariateKind::static_value, 0});
            }
        }
        if (auto it = time_varying.find(r); it != time_varying.end()) {
            for (const auto& cov : it->second) {
                for (int lag = 1; lag <= lag_depth; ++lag) {
                    e.covariate_spec.push_back({cov, CovariateKind::time_varying, lag});
                }
            }
        }
        e.weights.assign(e.covariate_spec.size(), 0.0);
    }
    return set;
}

// ---------------------------------------------------------------------------
// TrainingProblem

TrainingProblem::TrainingProblem(const PanelDataset& panel, const TrainConfig& config)
    : panel_(&panel), config_(config) {
    config_.validate();
    if (panel.num_days < 1 || panel.locations.empty()) {
        throw PreconditionError("training needs a non-empty panel");
    }
    T_ = config_.train_end_day.value_or(panel.num_days - 1);
    if (T_ < 0 || T_ >= panel.num_days) {
        throw ConfigError("training end day " + std::to_string(T_) + " is outside the panel (0.." +
                          std::to_string(panel.num_days - 1) + ")");
    }
    const int tau = config_.horizon;
    window_start_ = config_.train_window ? std::max(0, T_ - *config_.train_window) : 0;
    if (T_ - window_start_ <= tau + 1) {
        throw PreconditionError("history of " + std::to_string(T_ - window_start_ + 1) +
                                " days is too short for horizon " + std::to_string(tau));
    }

    // Every encoder slot must resolve against the panel.
    for (const auto& e : config_.encoders.encoders) {
        for (const auto& slot : e.covariate_spec) {
            const bool ok = slot.kind == CovariateKind::static_value ? panel.statics.count(slot.covariate) != 0
                                                                     : panel.time_varying.count(slot.covariate) != 0;
            if (!ok) {
                throw ConfigError("missing covariate slot '" + slot.label() + "' for " +
                                  std::string(rate_name(e.variable)));
            }
        }
    }

    for (std::size_t i = 0; i < panel.locations.size(); ++i) {
        const auto regime = regime_start(panel, i);
        if (!regime) {
            excluded_.push_back(panel.locations[i]);
            continue;
        }
        const MaskedSeries& q = panel.series(i, Observed::Q);
        int start = std::max(*regime, window_start_);
        while (start <= T_ && !(q.has(static_cast<std::size_t>(start)) && q.values[static_cast<std::size_t>(start)] > 0.0)) {
            ++start;
        }
        // Need at least one scored training day before validation begins.
        if (start >= T_ - tau - 1) {
            excluded_.push_back(panel.locations[i]);
            continue;
        }
        locations_.push_back(i);
        starts_.push_back(start);
    }
    if (locations_.empty()) {
        throw PreconditionError("no location reaches the confirmed-case threshold early enough to train");
    }

    // Parameter layout.
    auto add = [&](std::string name, std::string group) {
        param_names_.push_back(std::move(name));
        param_groups_.push_back(std::move(group));
        return static_cast<ad::ParamId>(param_names_.size() - 1);
    };
    for (Rate r : all_rates()) {
        const std::string rn(rate_name(r));
        const RateEncoder& e = config_.encoders[r];
        RateLayout& lay = rate_layout_[static_cast<std::size_t>(r)];
        lay.global = add("encoder/" + rn + "/global_bias", "encoder");
        for (const auto& slot : e.covariate_spec) {
            lay.weights.push_back(add("encoder/" + rn + "/w/" + slot.label(), "encoder"));
        }
        for (std::size_t li : locations_) {
            lay.local.push_back(add("local_bias/" + rn + "/" + panel.locations[li], "local_bias"));
        }
    }
    for (std::size_t k = 0; k < locations_.size(); ++k) {
        std::array<ad::ParamId, 9> ids{};
        const auto& comps = trainable_compartments();
        for (std::size_t c = 0; c < comps.size(); ++c) {
            ids[c] = add("initial/" + panel.locations[locations_[k]] + "/" + std::string(compartment_name(comps[c])),
                         "initial_condition");
        }
        ic_layout_.push_back(ids);
    }

    // Covariate design rows for days start+1..T.
    for (std::size_t k = 0; k < locations_.size(); ++k) {
        covariates_.push_back(panel.covariates_of(locations_[k]));
    }
    for (Rate r : all_rates()) {
        auto& per_loc = design_[static_cast<std::size_t>(r)];
        per_loc.resize(locations_.size());
        const RateEncoder& e = config_.encoders[r];
        if (e.covariate_spec.empty()) {
            continue;
        }
        for (std::size_t k = 0; k < locations_.size(); ++k) {
            per_loc[k] = design_rows(e, covariates_[k], starts_[k] + 1, T_ + 1);
        }
    }
}

ad::ParameterStore TrainingProblem::initial_parameters(std::uint64_t seed) const {
    ad::ParameterStore store;
    std::vector<double> values(param_names_.size(), 0.0);
    for (Rate r : all_rates()) {
        const auto ri = static_cast<std::size_t>(r);
        const RateEncoder& e = config_.encoders[r];
        const RateLayout& lay = rate_layout_[ri];
        values[lay.global] = logit_of(config_.initial_rates[ri], e.lower_bound, e.upper_bound);
        for (std::size_t w = 0; w < lay.weights.size(); ++w) {
            values[lay.weights[w]] = e.weights[w];
        }
    }
    for (std::size_t k = 0; k < locations_.size(); ++k) {
        const std::size_t li = locations_[k];
        Rng rng = substream(seed, li);
        const CompartmentState s =
            sample_initial_conditions(panel_->observations[li], starts_[k], panel_->population[li], rng);
        const auto& comps = trainable_compartments();
        for (std::size_t c = 0; c < comps.size(); ++c) {
            values[ic_layout_[k][c]] = std::log1p(s[comps[c]]);
        }
    }
    for (std::size_t i = 0; i < param_names_.size(); ++i) {
        store.add(param_names_[i], param_groups_[i], values[i]);
    }
    return store;
}

PhaseSpec TrainingProblem::phase1() const {
    PhaseSpec p;
    p.t_start = window_start_;
    p.t_end = T_ - config_.horizon - 1;
    p.policy = {config_.lambda_tf, p.t_end};
    p.val_start = T_ - config_.horizon;
    p.val_end = T_;
    return p;
}

PhaseSpec TrainingProblem::phase2() const {
    PhaseSpec p;
    p.t_start = window_start_;
    p.t_end = T_;
    p.policy = {1.0, T_};
    p.val_start = T_ - config_.horizon;
    p.val_end = T_;
    return p;
}

template <class T>
std::vector<BasicRateSet<T>> TrainingProblem::rates_for(const std::vector<T>& params, std::size_t loc,
                                                        int end_day) const {
    const int start = starts_[loc];
    const auto n = static_cast<std::size_t>(std::max(0, end_day - start));
    std::vector<BasicRateSet<T>> rates(n);
    std::vector<T> w;
    for (Rate r : all_rates()) {
        const auto ri = static_cast<std::size_t>(r);
        const RateEncoder& e = config_.encoders[r];
        const RateLayout& lay = rate_layout_[ri];
        const T base = params[lay.global] + params[lay.local[loc]];
        if (lay.weights.empty()) {
            const T v = bounded_rate(e.lower_bound, e.upper_bound, base);
            for (auto& rs : rates) {
                rs[r] = v;
            }
            continue;
        }
        w.clear();
        for (ad::ParamId id : lay.weights) {
            w.push_back(params[id]);
        }
        const auto& rows = design_[ri][loc];
        for (std::size_t k = 0; k < n; ++k) {
            const T logit = encoder_logit<T>(base, T(0.0), std::span<const T>(w), std::span<const double>(rows[k]));
            rates[k][r] = bounded_rate(e.lower_bound, e.upper_bound, logit);
        }
    }
    return rates;
}

template <class T>
BasicCompartmentState<T> TrainingProblem::initial_for(const std::vector<T>& params, std::size_t loc) const {
    using C = Compartment;
    using std::exp;
    BasicCompartmentState<T> s;
    s.N = panel_->population[locations_[loc]];
    const auto& comps = trainable_compartments();
    for (std::size_t c = 0; c < comps.size(); ++c) {
        s[comps[c]] = exp(params[ic_layout_[loc][c]]) - 1.0;
    }
    s[C::S] = s.N - (s[C::E] + s[C::I_doc] + s[C::I_undoc] + s[C::R_doc] + s[C::R_undoc] + s[C::H] + s[C::D]);
    return s;
}

template <class T>
LossBreakdown<T> TrainingProblem::evaluate(const std::vector<T>& params, const PhaseSpec& phase,
                                           double* validation) const {
    using std::exp;
    LossBreakdown<T> out;
    const int tau = config_.horizon;
    LossConfig val_cfg = config_.loss;
    val_cfg.z = 0.0;
    double val = 0.0;
    for (std::size_t k = 0; k < locations_.size(); ++k) {
        const std::size_t li = locations_[k];
        const int start = starts_[k];
        const Observations& obs = panel_->observations[li];
        const auto rates = rates_for(params, k, T_);
        const auto states = teacher_forced_rollout(initial_for(params, k), rates, obs, start, phase.policy);
        const SeriesPrediction<T> pred = predictions_of(states, start);
        out.fit = out.fit + fit_loss(pred, obs, config_.loss, phase.t_start, phase.t_end, tau);

        // Rates for days within the window (rates[j] belongs to day start + 1 + j).
        std::vector<BasicRateSet<T>> window_rates;
        for (int d = std::max(phase.t_start, start + 1); d <= phase.t_end; ++d) {
            window_rates.push_back(rates[static_cast<std::size_t>(d - start - 1)]);
        }
        out.comp = out.comp + constraint_loss(window_rates, config_.loss.strict);

        if (config_.loss.lambda_smooth != 0.0) {
            std::vector<std::vector<T>> seqs;
            const int first = std::max(phase.t_start, start);
            for (std::size_t o = 0; o < kNumObserved; ++o) {
                std::vector<T> seq;
                for (int d = first; d <= phase.t_end; ++d) {
                    seq.push_back(pred.values[o][static_cast<std::size_t>(d - start)]);
                }
                seqs.push_back(std::move(seq));
            }
            out.smooth = out.smooth + smoothness_loss(seqs, !config_.loss.strict);
        }

        if (validation != nullptr) {
            SeriesPrediction<double> pv;
            pv.start_day = start;
            for (std::size_t o = 0; o < kNumObserved; ++o) {
                for (const auto& v : pred.values[o]) {
                    pv.values[o].push_back(value_of(v));
                }
            }
            val += fit_loss(pv, obs, val_cfg, phase.val_start, phase.val_end, tau);
        }
    }
    std::vector<T> biases;
    for (const auto& lay : rate_layout_) {
        for (ad::ParamId id : lay.local) {
            biases.push_back(params[id]);
        }
    }
    out.ls = local_bias_reg(biases);
    out.total = total_loss(out.fit, out.comp, out.smooth, out.ls, config_.loss);
    if (validation != nullptr) {
        *validation = val;
    }
    return out;
}

ad::Var TrainingProblem::taped_loss(ad::Tape& tape, const ad::ParameterStore& store, const PhaseSpec& phase,
                                    Result* result) const {
    if (store.size() != param_names_.size()) {
        throw ShapeError("parameter store does not match the training layout");
    }
    std::vector<ad::Var> params;
    params.reserve(store.size());
    for (ad::ParamId i = 0; i < store.size(); ++i) {
        params.push_back(tape.parameter(store, i));
    }
    double val = 0.0;
    const LossBreakdown<ad::Var> parts = evaluate(params, phase, result != nullptr ? &val : nullptr);
    if (result != nullptr) {
        result->total = parts.total.value();
        result->validation_fit = val;
        result->parts = {parts.fit.value(), parts.comp.value(), parts.smooth.value(), parts.ls.value(),
                         parts.total.value()};
    }
    return parts.total;
}

TrainingProblem::Result TrainingProblem::value_loss(const ad::ParameterStore& store, const PhaseSpec& phase) const {
    if (store.size() != param_names_.size()) {
        throw ShapeError("parameter store does not match the training layout");
    }
    Result r;
    r.parts = evaluate(store.values(), phase, &r.validation_fit);
    r.total = r.parts.total;
    return r;
}

std::vector<SeriesPrediction<double>> TrainingProblem::fitted(const ad::ParameterStore& store, int end_day,
                                                              const TeacherForcingPolicy& policy) const {
    if (end_day > T_) {
        throw PreconditionError("fitted trajectories end at the training end day");
    }
    const std::vector<double> params = store.values();
    std::vector<SeriesPrediction<double>> out;
    for (std::size_t k = 0; k < locations_.size(); ++k) {
        const auto rates = rates_for(params, k, std::max(end_day, starts_[k]));
        const auto states = teacher_forced_rollout(initial_for(params, k), rates, panel_->observations[locations_[k]],
                                                   starts_[k], policy);
        out.push_back(predictions_of(states, starts_[k]));
    }
    return out;
}

EncoderSet TrainingProblem::encoders_from(const ad::ParameterStore& store) const {
    EncoderSet set = config_.encoders;
    for (Rate r : all_rates()) {
        RateEncoder& e = set[r];
        const RateLayout& lay = rate_layout_[static_cast<std::size_t>(r)];
        e.global_bias = store.value(lay.global);
        for (std::size_t w = 0; w < lay.weights.size(); ++w) {
            e.weights[w] = store.value(lay.weights[w]);
        }
        e.local_bias.clear();
        for (const auto& loc : panel_->locations) {
            e.local_bias[loc] = 0.0;
        }
        for (std::size_t k = 0; k < locations_.size(); ++k) {
            e.local_bias[panel_->locations[locations_[k]]] = store.value(lay.local[k]);
        }
    }
    return set;
}

std::vector<CompartmentState> TrainingProblem::initial_states(const ad::ParameterStore& store) const {
    const std::vector<double> params = store.values();
    std::vector<CompartmentState> out;
    for (std::size_t k = 0; k < locations_.size(); ++k) {
        out.push_back(initial_for(params, k));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Artifact serialization

namespace {

using ojson = nlohmann::ordered_json;

ojson encoder_to_json(const RateEncoder& e) {
    ojson j;
    j["variable"] = std::string(rate_name(e.variable));
    j["lower_bound"] = e.lower_bound;
    j["upper_bound"] = e.upper_bound;
    j["global_bias"] = e.global_bias;
    auto& w = j["weights"] = ojson::array();
    for (std::size_t k = 0; k < e.covariate_spec.size(); ++k) {
        const auto& s = e.covariate_spec[k];
        w.push_back({{"slot", s.label()},
                     {"covariate", s.covariate},
                     {"kind", s.kind == CovariateKind::static_value ? "static" : "time_varying"},
                     {"lag", s.lag},
                     {"weight", e.weights[k]}});
    }
    j["local_bias"] = ojson::object();
    for (const auto& [loc, b] : e.local_bias) {
        j["local_bias"][loc] = b;
    }
    return j;
}

RateEncoder encoder_from_json(const nlohmann::json& j) {
    RateEncoder e;
    const auto r = rate_from_name(j.at("variable").get<std::string>());
    if (!r) {
        throw ArtifactError("unknown rate variable '" + j.at("variable").get<std::string>() + "'");
    }
    e.variable = *r;
    e.lower_bound = j.at("lower_bound").get<double>();
    e.upper_bound = j.at("upper_bound").get<double>();
    e.global_bias = j.at("global_bias").get<double>();
    for (const auto& w : j.at("weights")) {
        CovariateSlot s;
        s.covariate = w.at("covariate").get<std::string>();
        s.kind = w.at("kind").get<std::string>() == "static" ? CovariateKind::static_value : CovariateKind::time_varying;
        s.lag = w.at("lag").get<int>();
        e.covariate_spec.push_back(s);
        e.weights.push_back(w.at("weight").get<double>());
    }
    for (const auto& [loc, b] : j.at("local_bias").items()) {
        e.local_bias[loc] = b.get<double>();
    }
    e.validate();
    return e;
}

ojson state_to_json(const CompartmentState& s) {
    ojson j;
    j["N"] = s.N;
    for (Compartment c : all_compartments()) {
        j[std::string(compartment_name(c))] = s[c];
    }
    return j;
}

CompartmentState state_from_json(const nlohmann::json& j) {
    CompartmentState s;
    s.N = j.at("N").get<double>();
    for (Compartment c : all_compartments()) {
        s[c] = j.at(std::string(compartment_name(c))).get<double>();
    }
    return s;
}

} // namespace

std::string TrainArtifact::to_json() const {
    ojson j;
    j["format"] = "epigam-artifact";
    j["version"] = version;
    j["level"] = std::string(level_name(level));
    j["anchor_date"] = anchor_date;
    j["window"] = {{"T", T}, {"M", M}, {"tau", tau}};
    j["validation_score"] = validation_score;
    auto& lj = j["loss"];
    for (Observed o : all_observed()) {
        lj["lambda"][std::string(observed_name(o))] = loss.lambda_Y[static_cast<std::size_t>(o)];
    }
    lj["z"] = loss.z;
    lj["lambda_comp"] = loss.lambda_comp;
    lj["lambda_smooth"] = loss.lambda_smooth;
    lj["lambda_ls"] = loss.lambda_ls;
    lj["kind"] = loss.kind == LossKind::squared ? "squared" : "quantile";
    lj["quantiles"] = loss.quantiles;
    lj["strict"] = loss.strict;
    j["hyperparameters"] = ojson::object();
    for (const auto& [k, v] : hyperparameters) {
        j["hyperparameters"][k] = v;
    }
    auto& enc = j["encoders"] = ojson::array();
    for (const auto& e : encoders.encoders) {
        enc.push_back(encoder_to_json(e));
    }
    auto& locs = j["locations"] = ojson::array();
    for (const auto& l : locations) {
        locs.push_back({{"location", l.location}, {"start_day", l.start_day}, {"initial", state_to_json(l.initial)}});
    }
    j["excluded_locations"] = excluded_locations;
    auto& norm = j["normalization"] = ojson::object();
    for (const auto& [id, range] : normalization.ranges) {
        norm[id] = {range.first, range.second};
    }
    j["zeta"] = zeta;
    auto& fc = j["forecasters"] = ojson::object();
    for (const auto& [cov, per_loc] : forecasters) {
        for (const auto& [loc, f] : per_loc) {
            fc[cov][loc] = f.weights;
        }
    }
    auto& heads_j = j["quantile_heads"] = ojson::array();
    for (const auto& h : heads) {
        heads_j.push_back({{"compartment", std::string(observed_name(h.compartment))},
                           {"quantile", h.quantile},
                           {"slope", h.slope},
                           {"offset", h.offset}});
    }
    auto& units = j["head_units"] = ojson::object();
    for (Observed o : all_observed()) {
        units[std::string(observed_name(o))] = head_units[static_cast<std::size_t>(o)];
    }
    return j.dump(2);
}

TrainArtifact TrainArtifact::from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw ArtifactError(std::string("artifact is not valid JSON: ") + e.what());
    }
    if (!j.is_object() || !j.contains("format") || j["format"] != "epigam-artifact") {
        throw ArtifactError("not a training artifact");
    }
    try {
        TrainArtifact a;
        a.version = j.at("version").get<int>();
        if (a.version != 1) {
            throw ArtifactError("unsupported artifact version " + std::to_string(a.version));
        }
        a.level = parse_level(j.at("level").get<std::string>());
        a.anchor_date = j.at("anchor_date").get<std::string>();
        a.T = j.at("window").at("T").get<int>();
        a.M = j.at("window").at("M").get<int>();
        a.tau = j.at("window").at("tau").get<int>();
        a.validation_score = j.at("validation_score").get<double>();
        const auto& lj = j.at("loss");
        for (Observed o : all_observed()) {
            a.loss.lambda_Y[static_cast<std::size_t>(o)] = lj.at("lambda").at(std::string(observed_name(o))).get<double>();
        }
        a.loss.z = lj.at("z").get<double>();
        a.loss.lambda_comp = lj.at("lambda_comp").get<double>();
        a.loss.lambda_smooth = lj.at("lambda_smooth").get<double>();
        a.loss.lambda_ls = lj.at("lambda_ls").get<double>();
        a.loss.kind = lj.at("kind").get<std::string>() == "quantile" ? LossKind::quantile : LossKind::squared;
        a.loss.quantiles = lj.at("quantiles").get<std::vector<double>>();
        a.loss.strict = lj.at("strict").get<bool>();
        for (const auto& [k, v] : j.at("hyperparameters").items()) {
            a.hyperparameters[k] = v.get<double>();
        }
        const auto& enc = j.at("encoders");
        if (enc.size() != kNumRates) {
            throw ArtifactError("artifact must hold one encoder per rate variable");
        }
        for (const auto& e : enc) {
            RateEncoder re = encoder_from_json(e);
            a.encoders[re.variable] = std::move(re);
        }
        for (const auto& l : j.at("locations")) {
            a.locations.push_back({l.at("location").get<std::string>(), l.at("start_day").get<int>(),
                                   state_from_json(l.at("initial"))});
        }
        a.excluded_locations = j.at("excluded_locations").get<std::vector<std::string>>();
        for (const auto& [id, range] : j.at("normalization").items()) {
            a.normalization.ranges[id] = {range.at(0).get<double>(), range.at(1).get<double>()};
        }
        a.zeta = j.at("zeta").get<int>();
        for (const auto& [cov, per_loc] : j.at("forecasters").items()) {
            for (const auto& [loc, w] : per_loc.items()) {
                CovariateForecaster f;
                f.zeta = a.zeta;
                f.weights = w.get<std::vector<double>>();
                f.validate();
                a.forecasters[cov][loc] = std::move(f);
            }
        }
        for (const auto& h : j.at("quantile_heads")) {
            const auto o = observed_from_name(h.at("compartment").get<std::string>());
            if (!o) {
                throw ArtifactError("unknown compartment in quantile head");
            }
            a.heads.push_back({*o, h.at("quantile").get<double>(), h.at("slope").get<double>(),
                               h.at("offset").get<double>()});
        }
        for (Observed o : all_observed()) {
            a.head_units[static_cast<std::size_t>(o)] = j.at("head_units").at(std::string(observed_name(o))).get<double>();
        }
        return a;
    } catch (const nlohmann::json::exception& e) {
        throw ArtifactError(std::string("malformed artifact: ") + e.what());
    } catch (const ConfigError& e) {
        throw ArtifactError(std::string("malformed artifact: ") + e.what());
    }
}

// ---------------------------------------------------------------------------
// Training

namespace {

// Heads map the point trajectory to quantiles, calibrated on the residuals of
// the free-running fitted trajectory over [first_day, last_day].
std::vector<QuantileHead> fit_heads(const TrainingProblem& problem, const ad::ParameterStore& store,
                                    const std::array<double, kNumObserved>& units, int first_day, int last_day) {
    const TrainConfig& cfg = problem.config();
    const auto& qs = cfg.loss.quantiles;

    struct Point {
        double predicted;
        double actual;
    };
    std::array<std::vector<Point>, kNumObserved> points;
    const auto rollouts = problem.fitted(store, last_day);
    for (std::size_t k = 0; k < rollouts.size(); ++k) {
        const int start = problem.start_days()[k];
        const Observations& obs = problem.panel().observations[problem.locations()[k]];
        for (int d = std::max(first_day, start); d <= last_day; ++d) {
            for (std::size_t o = 0; o < kNumObserved; ++o) {
                if (obs[o].has(static_cast<std::size_t>(d))) {
                    points[o].push_back({rollouts[k].values[o][static_cast<std::size_t>(d - start)],
                                         obs[o].values[static_cast<std::size_t>(d)]});
                }
            }
        }
    }

    // Parameters per (compartment, quantile): slope then offset.
    std::vector<double> params(2 * kNumObserved * qs.size(), 0.0);
    std::vector<double> grads(params.size(), 0.0);
    auto slot = [&](std::size_t o, std::size_t j) { return 2 * (o * qs.size() + j); };

    OptimizerConfig opt = cfg.optimizer;
    RmsPropState state;
    const int iters = cfg.head_iterations;
    for (int it = 0; it < iters; ++it) {
        // Geometric decay to 1% of the initial step keeps the final
        // oscillation small relative to the compartment scale.
        opt.learning_rate = cfg.head_learning_rate * std::pow(0.01, static_cast<double>(it) / std::max(1, iters - 1));
        std::fill(grads.begin(), grads.end(), 0.0);
        for (std::size_t o = 0; o < kNumObserved; ++o) {
            if (points[o].empty()) {
                continue;
            }
            const double n = static_cast<double>(points[o].size());
            for (std::size_t j = 0; j < qs.size(); ++j) {
                const std::size_t i = slot(o, j);
                const double scale = 1.0 + params[i];
                const double shift = params[i + 1] * units[o];
                double gs = 0.0;
                double gb = 0.0;
                for (const Point& pt : points[o]) {
                    // d pinball / d prediction: -q below the actual, 1 - q above.
                    const double g = pt.actual > scale * pt.predicted + shift ? -qs[j] : 1.0 - qs[j];
                    gs += g * pt.predicted;
                    gb += g * units[o];
                }
                grads[i] = gs / (n * units[o]);
                grads[i + 1] = gb / (n * units[o]);
            }
        }
        rmsprop_update(params, grads, state, opt);
    }

    std::vector<QuantileHead> out;
    for (std::size_t o = 0; o < kNumObserved; ++o) {
        for (std::size_t j = 0; j < qs.size(); ++j) {
            out.push_back({static_cast<Observed>(o), qs[j], params[slot(o, j)], params[slot(o, j) + 1]});
        }
    }
    return out;
}

std::set<std::string> used_time_varying(const EncoderSet& encoders) {
    std::set<std::string> out;
    for (const auto& e : encoders.encoders) {
        for (const auto& s : e.covariate_spec) {
            if (s.kind == CovariateKind::time_varying) {
                out.insert(s.covariate);
            }
        }
    }
    return out;
}

} // namespace

TrainResult train(const PanelDataset& panel, const TrainConfig& config, int trial) {
    TrainingProblem problem(panel, config);
    const OptimizerConfig& opt = problem.config().optimizer;
    ad::ParameterStore store = problem.initial_parameters(opt.seed);
    const PhaseSpec p1 = problem.phase1();
    const PhaseSpec p2 = problem.phase2();

    TrainResult result;
    auto run_phase = [&](int phase_no, const PhaseSpec& phase, int max_iters, int patience,
                         std::vector<double>& best, double& best_val) {
        RmsPropState state;
        int since_best = 0;
        int iterations = 0;
        for (int it = 0; it < max_iters; ++it) {
            ad::Tape tape;
            TrainingProblem::Result r;
            const ad::Var root = problem.taped_loss(tape, store, phase, &r);
            if (!std::isfinite(r.total) || !std::isfinite(r.validation_fit)) {
                throw DivergenceError("training loss became non-finite in phase " + std::to_string(phase_no) +
                                      " at iteration " + std::to_string(it));
            }
            result.log.push_back({trial, phase_no, it, r.total, r.validation_fit});
            if (r.validation_fit < best_val) {
                best_val = r.validation_fit;
                best = store.values();
                since_best = 0;
                if (phase_no == 1) {
                    result.best_iteration = it;
                }
            } else if (++since_best >= patience) {
                iterations = it + 1;
                break;
            }
            iterations = it + 1;
            if (!root.tracked()) {
                continue;
            }
            tape.backward(root, store);
            OptimizerConfig step = opt;
            if (phase_no == 1) {
                step.learning_rate *= std::pow(opt.final_lr_fraction,
                                               static_cast<double>(it) / std::max(1, max_iters - 1));
            } else {
                step.learning_rate *= opt.final_lr_fraction;
            }
            rmsprop_step(store, state, step);
        }
        // The parameters after the final update have not been scored yet.
        if (max_iters > 0) {
            const TrainingProblem::Result r = problem.value_loss(store, phase);
            if (std::isfinite(r.validation_fit) && r.validation_fit < best_val) {
                best_val = r.validation_fit;
                best = store.values();
            }
        }
        return iterations;
    };

    std::vector<double> best = store.values();
    double best_val = kInf;
    if (opt.max_iterations == 0) {
        best_val = problem.value_loss(store, p1).validation_fit;
    }
    result.phase1_iterations = run_phase(1, p1, opt.max_iterations, opt.patience, best, best_val);
    const double score = best_val;
    store.set_values(best);

    if (opt.fine_tune_iterations > 0) {
        std::vector<double> best2 = store.values();
        double best_val2 = kInf;
        run_phase(2, p2, opt.fine_tune_iterations, std::numeric_limits<int>::max(), best2, best_val2);
        store.set_values(best2);
    }

    TrainArtifact& a = result.artifact;
    a.level = panel.level;
    a.anchor_date = panel.anchor_date;
    a.encoders = problem.encoders_from(store);
    const auto initial = problem.initial_states(store);
    for (std::size_t k = 0; k < problem.locations().size(); ++k) {
        a.locations.push_back({panel.locations[problem.locations()[k]], problem.start_days()[k], initial[k]});
    }
    for (const auto& loc : panel.locations) {
        if (std::none_of(a.locations.begin(), a.locations.end(), [&](const auto& l) { return l.location == loc; })) {
            a.excluded_locations.push_back(loc);
        }
    }
    a.loss = problem.config().loss;
    a.normalization = panel.normalization.value_or(NormalizationTable{});
    a.validation_score = score;
    a.T = problem.end_day();
    a.M = problem.end_day() - problem.window_start();
    a.tau = config.horizon;
    a.zeta = config.zeta;
    a.hyperparameters = {{"learning_rate", opt.learning_rate},
                         {"z", a.loss.z},
                         {"lambda_comp", a.loss.lambda_comp},
                         {"lambda_smooth", a.loss.lambda_smooth},
                         {"lambda_ls", a.loss.lambda_ls},
                         {"lambda_tf", config.lambda_tf},
                         {"seed", static_cast<double>(opt.seed)}};

    for (const auto& cov : used_time_varying(a.encoders)) {
        for (std::size_t k = 0; k < problem.locations().size(); ++k) {
            const std::size_t li = problem.locations()[k];
            const auto& series = panel.time_varying.at(cov)[li];
            const std::span<const double> history(series.data(), static_cast<std::size_t>(a.T + 1));
            a.forecasters[cov][panel.locations[li]] = fit_covariate_forecaster(history, config.zeta);
        }
    }

    if (a.loss.kind == LossKind::quantile) {
        for (std::size_t o = 0; o < kNumObserved; ++o) {
            double sum = 0.0;
            std::size_t n = 0;
            for (std::size_t k = 0; k < problem.locations().size(); ++k) {
                const MaskedSeries& s = panel.observations[problem.locations()[k]][o];
                for (int d = problem.start_days()[k]; d <= a.T; ++d) {
                    if (s.has(static_cast<std::size_t>(d))) {
                        sum += std::abs(s.values[static_cast<std::size_t>(d)]);
                        ++n;
                    }
                }
            }
            a.head_units[o] = (n > 0 && sum > 0.0) ? sum / static_cast<double>(n) : 1.0;
        }
        a.heads = fit_heads(problem, store, a.head_units, problem.window_start(), problem.end_day());
    }
    return result;
}

// ---------------------------------------------------------------------------
// Hyperparameter search

namespace {

double draw(Rng& rng, const SearchRange& r) {
    if (r.log_scale) {
        return std::exp(uniform(rng, std::log(r.lo), std::log(r.hi)));
    }
    return uniform(rng, r.lo, r.hi);
}

void check_range(const SearchRange& r, const char* name) {
    if (!(r.lo <= r.hi) || (r.log_scale && !(r.lo > 0.0))) {
        throw ConfigError(std::string("invalid search range for ") + name);
    }
}

} // namespace

TrainConfig sample_trial(const TrainConfig& base, const SearchSpace& space, std::uint64_t seed, int index,
                         TrialResult* record) {
    Rng rng = substream(seed, static_cast<std::uint64_t>(index));
    TrainConfig cfg = base;
    cfg.optimizer.learning_rate = draw(rng, space.learning_rate);
    cfg.loss.z = draw(rng, space.z);
    cfg.loss.lambda_comp = draw(rng, space.lambda_comp);
    cfg.loss.lambda_smooth = draw(rng, space.lambda_smooth);
    cfg.loss.lambda_ls = draw(rng, space.lambda_ls);
    cfg.optimizer.seed = rng();
    if (record != nullptr) {
        record->index = index;
        record->learning_rate = cfg.optimizer.learning_rate;
        record->z = cfg.loss.z;
        record->lambda_comp = cfg.loss.lambda_comp;
        record->lambda_smooth = cfg.loss.lambda_smooth;
        record->lambda_ls = cfg.loss.lambda_ls;
        record->seed = cfg.optimizer.seed;
    }
    return cfg;
}

SearchResult hyperparameter_search(const PanelDataset& panel, const TrainConfig& base, const SearchSpace& space,
                                   int trials, std::uint64_t seed, int threads) {
    if (trials < 1) {
        throw ConfigError("hyperparameter search needs at least one trial");
    }
    check_range(space.learning_rate, "learning_rate");
    check_range(space.z, "z");
    check_range(space.lambda_comp, "lambda_comp");
    check_range(space.lambda_smooth, "lambda_smooth");
    check_range(space.lambda_ls, "lambda_ls");
    // Surface configuration problems once, before any worker starts.
    { const TrainingProblem check(panel, base); }

    const auto n = static_cast<std::size_t>(trials);
    std::vector<TrialResult> records(n);
    std::vector<std::optional<TrainResult>> results(n);
    std::vector<std::exception_ptr> failures(n);
    std::atomic<std::size_t> next{0};

    auto worker = [&]() {
        for (std::size_t i = next++; i < n; i = next++) {
            const TrainConfig cfg = sample_trial(base, space, seed, static_cast<int>(i), &records[i]);
            try {
                results[i] = train(panel, cfg, static_cast<int>(i));
                records[i].score = results[i]->artifact.validation_score;
            } catch (const DivergenceError& e) {
                records[i].score = kInf;
                records[i].error = e.what();
            } catch (const NumericalError& e) {
                records[i].score = kInf;
                records[i].error = e.what();
            } catch (...) {
                records[i].score = kInf;
                failures[i] = std::current_exception();
            }
        }
    };
    const int workers = std::clamp(threads, 1, trials);
    if (workers == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int w = 0; w < workers; ++w) {
            pool.emplace_back(worker);
        }
        for (auto& t : pool) {
            t.join();
        }
    }
    for (const auto& f : failures) {
        if (f) {
            std::rethrow_exception(f);
        }
    }

    SearchResult out;
    std::size_t best = n;
    for (std::size_t i = 0; i < n; ++i) {
        if (!results[i] || !std::isfinite(records[i].score)) {
            continue;
        }
        if (best == n || records[i].score < records[best].score) {
            best = i;
        }
    }
    if (best == n) {
        throw DivergenceError("every hyperparameter trial diverged");
    }
    out.best = std::move(*results[best]);
    out.best_index = static_cast<int>(best);
    out.trials = std::move(records);
    return out;
}

// ---------------------------------------------------------------------------
// Forecasting

LocationCovariates extended_covariates(const TrainArtifact& artifact, const PanelDataset& panel, std::size_t location,
                                       int horizon) {
    LocationCovariates cov = panel.covariates_of(location);
    const std::string& loc = panel.locations[location];
    const auto keep = static_cast<std::size_t>(artifact.T + 1);
    for (auto& [id, series] : cov.series) {
        if (series.size() < keep) {
            throw PreconditionError("covariate '" + id + "' has no history through the training end day");
        }
        series.resize(keep);
    }
    for (const auto& id : used_time_varying(artifact.encoders)) {
        auto it = cov.series.find(id);
        if (it == cov.series.end()) {
            throw LookupError("missing covariate history for '" + id + "' at '" + loc + "'");
        }
        const auto fc = artifact.forecasters.find(id);
        if (fc == artifact.forecasters.end() || fc->second.count(loc) == 0) {
            throw ArtifactError("artifact has no forecaster for covariate '" + id + "' at '" + loc + "'");
        }
        const std::vector<double> ext = forecast_covariate(fc->second.at(loc), it->second, horizon);
        it->second.insert(it->second.end(), ext.begin(), ext.end());
    }
    return cov;
}

std::vector<SeriesPrediction<double>> apply_heads(const TrainArtifact& artifact, const SeriesPrediction<double>& point) {
    std::vector<double> qs;
    for (const auto& h : artifact.heads) {
        if (std::find(qs.begin(), qs.end(), h.quantile) == qs.end()) {
            qs.push_back(h.quantile);
        }
    }
    std::sort(qs.begin(), qs.end());
    std::vector<SeriesPrediction<double>> out(qs.size());
    for (std::size_t j = 0; j < qs.size(); ++j) {
        out[j].start_day = point.start_day;
        out[j].values = point.values;
    }
    for (const auto& h : artifact.heads) {
        const auto j = static_cast<std::size_t>(std::find(qs.begin(), qs.end(), h.quantile) - qs.begin());
        const auto o = static_cast<std::size_t>(h.compartment);
        const double unit = artifact.head_units[o];
        for (double& v : out[j].values[o]) {
            v = v * (1.0 + h.slope) + h.offset * unit;
        }
    }
    // Sort per day so quantile paths never cross.
    for (std::size_t o = 0; o < kNumObserved; ++o) {
        std::vector<double> col(qs.size());
        for (std::size_t k = 0; k < point.values[o].size(); ++k) {
            for (std::size_t j = 0; j < qs.size(); ++j) {
                col[j] = out[j].values[o][k];
            }
            std::sort(col.begin(), col.end());
            for (std::size_t j = 0; j < qs.size(); ++j) {
                out[j].values[o][k] = col[j];
            }
        }
    }
    return out;
}

std::vector<LocationForecast> forecast(const TrainArtifact& artifact, const PanelDataset& panel, int horizon) {
    if (horizon < 0) {
        throw ConfigError("forecast horizon must be >= 0");
    }
    if (horizon == 0) {
        return {};
    }
    if (panel.num_days <= artifact.T) {
        throw PreconditionError("dataset ends before the artifact's training end day");
    }
    if (panel.normalization) {
        for (const auto& [id, range] : artifact.normalization.ranges) {
            auto it = panel.normalization->ranges.find(id);
            if (it != panel.normalization->ranges.end() && it->second != range) {
                throw ArtifactError("normalization of covariate '" + id + "' differs from the artifact's");
            }
        }
    }
    std::vector<double> qs;
    for (const auto& h : artifact.heads) {
        if (std::find(qs.begin(), qs.end(), h.quantile) == qs.end()) {
            qs.push_back(h.quantile);
        }
    }
    std::sort(qs.begin(), qs.end());

    std::vector<LocationForecast> out;
    for (const auto& fit : artifact.locations) {
        const std::size_t li = panel.location_index(fit.location);
        const LocationCovariates cov = extended_covariates(artifact, panel, li, horizon);
        const std::vector<RateSet> rates =
            encode_rates_over_time(artifact.encoders, cov, fit.location, fit.start_day + 1, artifact.T + horizon + 1);
        const auto states =
            teacher_forced_rollout(fit.initial, rates, panel.observations[li], fit.start_day, TeacherForcingPolicy{});
        LocationForecast f;
        f.location = fit.location;
        f.start_day = fit.start_day;
        f.point = predictions_of(states, fit.start_day);
        if (!artifact.heads.empty()) {
            f.quantiles = qs;
            f.quantile_paths = apply_heads(artifact, f.point);
        }
        out.push_back(std::move(f));
    }
    return out;
}

std::string forecast_to_csv(const TrainArtifact& artifact, const std::vector<LocationForecast>& forecasts,
                            int horizon) {
    std::string out = "location_id,date,compartment,quantile,value\n";
    for (const auto& f : forecasts) {
        for (int d = artifact.T + 1; d <= artifact.T + horizon; ++d) {
            const auto k = static_cast<std::size_t>(d - f.start_day);
            const std::string date = date_from_index(d, artifact.anchor_date);
            for (Observed o : all_observed()) {
                const auto oi = static_cast<std::size_t>(o);
                const std::string prefix = f.location + "," + date + "," + std::string(observed_name(o)) + ",";
                out += prefix + "point," + format_double(std::max(0.0, f.point.values[oi][k])) + "\n";
                for (std::size_t j = 0; j < f.quantiles.size(); ++j) {
                    out += prefix + format_double(f.quantiles[j]) + "," +
                           format_double(std::max(0.0, f.quantile_paths[j].values[oi][k])) + "\n";
                }
            }
        }
    }
    return out;
}

} // namespace epigam
