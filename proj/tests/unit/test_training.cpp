#include "epigam/errors.hpp"
#include "epigam/training.hpp"

#include "test_support.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

using namespace epigam;
using epigam::testing::prepared_world;

namespace {

Observations full_observations(const std::vector<std::array<double, kNumObserved>>& rows) {
    Observations obs;
    for (auto& s : obs) {
        s = MaskedSeries(rows.size());
    }
    for (std::size_t d = 0; d < rows.size(); ++d) {
        for (std::size_t o = 0; o < kNumObserved; ++o) {
            obs[o].values[d] = rows[d][o];
            obs[o].present[d] = 1;
        }
    }
    return obs;
}

SeriesPrediction<double> prediction_from(const Observations& obs, double shift = 0.0) {
    SeriesPrediction<double> p;
    for (std::size_t o = 0; o < kNumObserved; ++o) {
        for (double v : obs[o].values) {
            p.values[o].push_back(v + shift);
        }
    }
    return p;
}

Observations random_observations(Rng& rng, std::size_t days) {
    std::vector<std::array<double, kNumObserved>> rows(days);
    for (auto& r : rows) {
        for (double& v : r) {
            v = uniform(rng, 0.0, 100.0);
        }
    }
    return full_observations(rows);
}

CompartmentState seed_state() {
    using C = Compartment;
    CompartmentState s;
    s.N = 1e5;
    s[C::E] = 300;
    s[C::I_doc] = 120;
    s[C::I_undoc] = 200;
    s[C::R_doc] = 40;
    s[C::R_undoc] = 60;
    s[C::H] = 30;
    s[C::C] = 10;
    s[C::V] = 4;
    s[C::D] = 5;
    s[C::S] = s.N - (300 + 120 + 200 + 40 + 60 + 30 + 5);
    return s;
}

RateSet plain_rates() {
    RateSet r;
    const auto init = default_initial_rates();
    for (Rate x : all_rates()) {
        r[x] = init[static_cast<std::size_t>(x)];
    }
    return r;
}

SyntheticOptions small_world(int locations = 1, int days = 60) {
    SyntheticOptions o;
    o.locations = locations;
    o.days = days;
    return o;
}

TrainConfig quick_config(const PanelDataset& panel, int iterations) {
    TrainConfig c;
    c.horizon = 7;
    c.train_end_day = panel.num_days - 1 - 7;
    c.encoders = make_encoders(default_wiring(), {}, 3);
    c.initial_rates = default_initial_rates();
    c.optimizer.max_iterations = iterations;
    c.optimizer.fine_tune_iterations = iterations / 2;
    c.optimizer.patience = std::max(iterations, 1);
    c.optimizer.seed = 5;
    c.head_iterations = 50;
    return c;
}

} // namespace

// ---------------------------------------------------------------------------
// Loss identities

TEST(FitLoss, PerfectPredictionsGiveZero) {
    Rng rng(41);
    const Observations obs = random_observations(rng, 20);
    EXPECT_EQ(fit_loss(prediction_from(obs), obs, LossConfig{}, 2, 19, 4), 0.0);
    EXPECT_GT(fit_loss(prediction_from(obs, 1e-3), obs, LossConfig{}, 2, 19, 4), 0.0);
}

TEST(FitLoss, ZeroExponentMatchesUnweightedSum) {
    Rng rng(42);
    const Observations obs = random_observations(rng, 25);
    const SeriesPrediction<double> pred = prediction_from(random_observations(rng, 25));
    LossConfig cfg;
    cfg.z = 0.0;
    const int ts = 3;
    const int te = 22;
    const int tau = 5;
    // Direct double sum over window starts and offsets.
    double expected = 0.0;
    for (int t = ts; t <= te - tau; ++t) {
        for (int i = 1; i <= tau; ++i) {
            for (std::size_t o = 0; o < kNumObserved; ++o) {
                const auto d = static_cast<std::size_t>(t + i);
                expected += cfg.lambda_Y[o] * std::pow(pred.values[o][d] - obs[o].values[d], 2);
            }
        }
    }
    EXPECT_NEAR(fit_loss(pred, obs, cfg, ts, te, tau), expected, 1e-12 * expected);

    // With z != 0 every term carries exp((t + i - ts) z).
    cfg.z = 0.03;
    double weighted = 0.0;
    for (int t = ts; t <= te - tau; ++t) {
        for (int i = 1; i <= tau; ++i) {
            for (std::size_t o = 0; o < kNumObserved; ++o) {
                const auto d = static_cast<std::size_t>(t + i);
                weighted += cfg.lambda_Y[o] * std::exp((t + i - ts) * cfg.z) *
                            std::pow(pred.values[o][d] - obs[o].values[d], 2);
            }
        }
    }
    EXPECT_NEAR(fit_loss(pred, obs, cfg, ts, te, tau), weighted, 1e-12 * weighted);
}

TEST(FitLoss, MaskedObservationsContributeNothing) {
    Rng rng(43);
    Observations obs = random_observations(rng, 12);
    for (auto& s : obs) {
        std::fill(s.present.begin(), s.present.end(), 0);
    }
    EXPECT_EQ(fit_loss(prediction_from(random_observations(rng, 12)), obs, LossConfig{}, 0, 11, 3), 0.0);
}

TEST(FitLoss, ShortPredictionsAreShapeErrors) {
    Rng rng(44);
    const Observations obs = random_observations(rng, 12);
    SeriesPrediction<double> pred = prediction_from(obs);
    for (auto& v : pred.values) {
        v.resize(6);
    }
    EXPECT_THROW(fit_loss(pred, obs, LossConfig{}, 0, 11, 3), ShapeError);
}

TEST(Pinball, MedianIsHalfAbsoluteError) {
    Rng rng(45);
    for (int i = 0; i < 1000; ++i) {
        const double y = uniform(rng, -50, 50);
        const double yh = uniform(rng, -50, 50);
        EXPECT_DOUBLE_EQ(pinball(y, yh, 0.5), 0.5 * std::abs(y - yh));
    }
}

TEST(ConstraintLoss, FeasibleIsZeroAndSingleExcess) {
    Rng rng(46);
    std::vector<RateSet> feasible;
    for (int i = 0; i < 20; ++i) {
        feasible.push_back(epigam::testing::random_feasible_rates(rng));
    }
    EXPECT_EQ(constraint_loss(feasible), 0.0);
    RateSet r = feasible.front();
    r[Rate::rho_I_doc] = 0.5;
    r[Rate::kappa_I_doc] = 0.5;
    r[Rate::h] = 0.5;
    EXPECT_DOUBLE_EQ(constraint_loss(std::vector<RateSet>{r}), 0.25);
}

TEST(ConstraintLoss, MatchesFormulaReevaluation) {
    Rng rng(47);
    auto hinge2 = [](double x) { return x > 1.0 ? (x - 1.0) * (x - 1.0) : 0.0; };
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<RateSet> seq;
        for (int t = 0; t < 5; ++t) {
            RateSet r;
            for (Rate x : all_rates()) {
                r[x] = uniform(rng, 0.0, 0.7);
            }
            seq.push_back(r);
        }
        double expected = 0.0;
        double strict = 0.0;
        for (const auto& r : seq) {
            using R = Rate;
            const double a = hinge2(r[R::rho_I_doc] + r[R::kappa_I_doc] + r[R::h]);
            const double b = hinge2(r[R::rho_I_undoc] + r[R::gamma]);
            const double bu = std::max(0.0, r[R::rho_I_undoc] + r[R::gamma] - 1.0);
            expected += a + b + hinge2(r[R::c_icu] + r[R::kappa_H] + r[R::rho_H]) +
                        hinge2(r[R::v_vent] + r[R::kappa_C] + r[R::rho_C]) + hinge2(r[R::kappa_V] + r[R::rho_V]);
            strict += a + bu + hinge2(r[R::c_icu] + r[R::kappa_H] + seq[0][R::rho_H]) +
                      hinge2(r[R::v_vent] + r[R::kappa_C] + seq[0][R::rho_C]) +
                      hinge2(r[R::kappa_V] + seq[0][R::rho_V]);
        }
        EXPECT_NEAR(constraint_loss(seq), expected, 1e-14);
        EXPECT_NEAR(constraint_loss(seq, true), strict, 1e-14);
    }
}

TEST(SmoothnessLoss, Examples) {
    EXPECT_EQ(smoothness_loss(std::vector<std::vector<double>>{{1, 3, 5, 7}}), 0.0);
    EXPECT_EQ(smoothness_loss(std::vector<std::vector<double>>{{0, 1, 0}}), 4.0);
    Rng rng(48);
    std::vector<double> y;
    for (int i = 0; i < 30; ++i) {
        y.push_back(uniform(rng, -5, 5));
    }
    double expected = 0.0;
    for (std::size_t t = 1; t + 1 < y.size(); ++t) {
        expected += std::pow(y[t - 1] + y[t + 1] - 2 * y[t], 2);
    }
    EXPECT_NEAR(smoothness_loss(std::vector<std::vector<double>>{y}), expected, 1e-12);
}

TEST(LocalBiasReg, Examples) {
    EXPECT_EQ(local_bias_reg(std::vector<double>{0.0, 0.0}), 0.0);
    EXPECT_EQ(local_bias_reg(std::vector<double>{1.0, -2.0}), 5.0);
    EncoderSet set = make_encoders({}, {}, 1);
    set[Rate::h].local_bias["a"] = 1.0;
    set[Rate::gamma].local_bias["b"] = -2.0;
    EXPECT_EQ(local_bias_reg(set), 5.0);
    set[Rate::eta].local_bias["c"] = 0.0;
    EXPECT_EQ(local_bias_reg(set), 5.0);
}

TEST(TotalLoss, WeightedComponentSum) {
    LossConfig cfg;
    cfg.lambda_comp = 0.0;
    cfg.lambda_smooth = 0.0;
    cfg.lambda_ls = 0.0;
    EXPECT_EQ(total_loss(3.25, 9.0, 7.0, 2.0, cfg), 3.25);
    cfg.lambda_comp = 2.0;
    cfg.lambda_smooth = 0.5;
    cfg.lambda_ls = 0.01;
    EXPECT_DOUBLE_EQ(total_loss(3.25, 9.0, 7.0, 2.0, cfg), 3.25 + 18.0 + 3.5 + 0.02);
}

TEST(TotalLoss, ProblemLossEqualsComponentSum) {
    const SyntheticWorld w = prepared_world(small_world(2, 40));
    TrainConfig cfg = quick_config(w.panel, 0);
    cfg.loss.lambda_smooth = 1e-4;
    const TrainingProblem problem(w.panel, cfg);
    ad::ParameterStore store = problem.initial_parameters(3);
    // Perturb so every component is active.
    std::vector<double> v = store.values();
    for (std::size_t i = 0; i < v.size(); ++i) {
        v[i] += 0.01 * static_cast<double>(i % 7);
    }
    store.set_values(v);
    for (const PhaseSpec& phase : {problem.phase1(), problem.phase2()}) {
        const auto r = problem.value_loss(store, phase);
        const auto& p = r.parts;
        const double sum = p.fit + cfg.loss.lambda_comp * p.comp + cfg.loss.lambda_smooth * p.smooth +
                           cfg.loss.lambda_ls * p.ls;
        EXPECT_NEAR(r.total, sum, 1e-12 * std::abs(sum));
        ad::Tape tape;
        TrainingProblem::Result taped;
        const ad::Var root = problem.taped_loss(tape, store, phase, &taped);
        EXPECT_NEAR(root.value(), r.total, 1e-12 * std::abs(r.total));
        EXPECT_NEAR(taped.validation_fit, r.validation_fit, 1e-12 * r.validation_fit);
    }
}

// ---------------------------------------------------------------------------
// Teacher forcing

TEST(TeacherForcing, LambdaOneIsSimulate) {
    const std::vector<RateSet> rates(15, plain_rates());
    Rng rng(49);
    const Observations obs = random_observations(rng, 20);
    const auto states = teacher_forced_rollout(seed_state(), rates, obs, 0, TeacherForcingPolicy{1.0});
    const Trajectory traj = simulate(seed_state(), rates);
    ASSERT_EQ(states.size(), traj.states.size());
    for (std::size_t k = 0; k < states.size(); ++k) {
        EXPECT_EQ(states[k].values, traj.states[k].values) << k;
    }
}

TEST(TeacherForcing, LambdaZeroPinsObservedCompartments) {
    Rng rng(50);
    std::vector<std::array<double, kNumObserved>> rows(10);
    for (auto& r : rows) {
        const double rd = uniform(rng, 10, 50);
        const double h = uniform(rng, 5, 30);
        const double c = uniform(rng, 0, h);
        const double v = uniform(rng, 0, c);
        const double d = uniform(rng, 0, 10);
        r = {rd + h + d + uniform(rng, 20, 200), d, h, c, v, rd};
    }
    const Observations obs = full_observations(rows);
    const std::vector<RateSet> rates(9, plain_rates());
    auto states = teacher_forced_rollout(seed_state(), rates, obs, 0, TeacherForcingPolicy{0.0});
    for (std::size_t d = 0; d < 9; ++d) {
        const CompartmentState forced = teacher_force(states[d], obs, d, 0.0);
        const auto view = observables_of(forced);
        for (std::size_t o = 0; o < kNumObserved; ++o) {
            EXPECT_NEAR(view[o], rows[d][o], 1e-9 * rows[d][o]) << "day " << d << " obs " << o;
        }
        EXPECT_EQ(states[d + 1].values, step_unchecked(forced, rates[d]).values);
    }
}

TEST(TeacherForcing, HalfBlendMatchesHandRollout) {
    using C = Compartment;
    Observations obs;
    for (auto& s : obs) {
        s = MaskedSeries(3);
    }
    auto& deaths = obs[static_cast<std::size_t>(Observed::D)];
    deaths.values = {25.0, 40.0, 0.0};
    deaths.present = {1, 1, 0};
    const RateSet r = plain_rates();
    const auto states = teacher_forced_rollout(seed_state(), {r, r, r}, obs, 0, TeacherForcingPolicy{0.5});

    CompartmentState s = seed_state();
    s[C::D] = (s[C::D] + 25.0) / 2.0;
    s = step_unchecked(s, r);
    EXPECT_EQ(states[1].values, s.values);
    s[C::D] = (s[C::D] + 40.0) / 2.0;
    s = step_unchecked(s, r);
    EXPECT_EQ(states[2].values, s.values);
    // Day 2 has no ground truth: the prediction passes through unchanged.
    EXPECT_EQ(states[3].values, step_unchecked(s, r).values);
}

TEST(TeacherForcing, RejectsLambdaOutsideUnitInterval) {
    EXPECT_THROW(TeacherForcingPolicy{1.5}.validate(), ConfigError);
    EXPECT_THROW(TeacherForcingPolicy{-0.1}.validate(), ConfigError);
}

// ---------------------------------------------------------------------------
// Initial conditions and optimizer

TEST(InitialConditions, ObservedHospitalizationIsKept) {
    Observations obs;
    for (auto& s : obs) {
        s = MaskedSeries(1);
    }
    obs[static_cast<std::size_t>(Observed::Q)].values[0] = 100;
    obs[static_cast<std::size_t>(Observed::Q)].present[0] = 1;
    obs[static_cast<std::size_t>(Observed::H)].values[0] = 7;
    obs[static_cast<std::size_t>(Observed::H)].present[0] = 1;
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        Rng rng(seed);
        const CompartmentState s = sample_initial_conditions(obs, 0, 1e6, rng);
        EXPECT_EQ(s[Compartment::H], 7.0);
        EXPECT_EQ(s[Compartment::I_doc], 100.0);
        EXPECT_GE(s[Compartment::E], 0.0);
        EXPECT_LE(s[Compartment::E], std::max(100.0, 1000.0));
        EXPECT_NEAR(conserved_total(s), 1e6, 1e-6);
    }
    Rng a(9);
    Rng b(9);
    EXPECT_EQ(sample_initial_conditions(obs, 0, 1e6, a).values, sample_initial_conditions(obs, 0, 1e6, b).values);
}

TEST(InitialConditions, ZeroConfirmedIsPreconditionError) {
    Observations obs;
    for (auto& s : obs) {
        s = MaskedSeries(1);
    }
    obs[0].present[0] = 1;
    Rng rng(1);
    EXPECT_THROW(sample_initial_conditions(obs, 0, 1e6, rng), PreconditionError);
}

TEST(RmsProp, ZeroGradientLeavesParameters) {
    std::vector<double> p = {1.0, -2.0};
    RmsPropState st;
    rmsprop_update(p, {0.0, 0.0}, st, OptimizerConfig{});
    EXPECT_EQ(p, (std::vector<double>{1.0, -2.0}));
}

TEST(RmsProp, FirstStepScalar) {
    std::vector<double> p = {0.0};
    RmsPropState st;
    OptimizerConfig cfg;
    cfg.learning_rate = 0.01;
    rmsprop_update(p, {1.0}, st, cfg);
    EXPECT_NEAR(p[0], -0.01 / (std::sqrt(0.1) + 1e-8), 1e-15);
}

TEST(RmsProp, ConstantGradientStepTendsToLearningRate) {
    std::vector<double> p = {0.0};
    RmsPropState st;
    OptimizerConfig cfg;
    double prev = 0.0;
    double delta = 0.0;
    for (int i = 0; i < 400; ++i) {
        rmsprop_update(p, {3.0}, st, cfg);
        delta = p[0] - prev;
        prev = p[0];
    }
    EXPECT_NEAR(std::abs(delta), cfg.learning_rate, 1e-9);
}

TEST(RmsProp, NonFiniteGradientNamesParameter) {
    std::vector<double> p = {0.0, 0.0};
    RmsPropState st;
    try {
        rmsprop_update(p, {0.0, std::nan("")}, st, OptimizerConfig{}, {"first", "second"});
        FAIL();
    } catch (const DivergenceError& e) {
        EXPECT_NE(std::string(e.what()).find("second"), std::string::npos);
    }
}

// ---------------------------------------------------------------------------
// Training, search and forecasting

TEST(Train, ZeroIterationsReturnsInitialization) {
    const SyntheticWorld w = prepared_world(small_world());
    TrainConfig cfg = quick_config(w.panel, 0);
    cfg.optimizer.fine_tune_iterations = 0;
    const TrainResult r = train(w.panel, cfg);
    const TrainingProblem problem(w.panel, cfg);
    const ad::ParameterStore init = problem.initial_parameters(cfg.optimizer.seed);
    const EncoderSet expected = problem.encoders_from(init);
    for (Rate x : all_rates()) {
        EXPECT_EQ(r.artifact.encoders[x].global_bias, expected[x].global_bias);
        EXPECT_EQ(r.artifact.encoders[x].weights, expected[x].weights);
    }
    EXPECT_EQ(r.artifact.locations[0].initial.values, problem.initial_states(init)[0].values);
    EXPECT_TRUE(r.log.empty());
}

TEST(Train, DeterministicUnderFixedSeed) {
    const SyntheticWorld w = prepared_world(small_world());
    const TrainConfig cfg = quick_config(w.panel, 20);
    EXPECT_EQ(train(w.panel, cfg).artifact.to_json(), train(w.panel, cfg).artifact.to_json());
}

TEST(Train, LossDecreasesOverFiftyIterations) {
    const SyntheticWorld w = prepared_world(small_world(1, 80));
    TrainConfig cfg = quick_config(w.panel, 50);
    cfg.optimizer.fine_tune_iterations = 0;
    const TrainResult r = train(w.panel, cfg);
    ASSERT_EQ(r.log.size(), 50u);
    EXPECT_LT(r.log.back().train_loss, r.log.front().train_loss);
}

TEST(Train, ArtifactJsonRoundTrip) {
    const SyntheticWorld w = prepared_world(small_world());
    TrainConfig cfg = quick_config(w.panel, 5);
    cfg.loss.kind = LossKind::quantile;
    const TrainResult r = train(w.panel, cfg);
    const std::string text = r.artifact.to_json();
    EXPECT_EQ(TrainArtifact::from_json(text).to_json(), text);
    EXPECT_THROW(TrainArtifact::from_json("{\"format\": 3}"), ArtifactError);
}

TEST(Search, SingleTrialMatchesTrainOnTheSample) {
    const SyntheticWorld w = prepared_world(small_world());
    const TrainConfig base = quick_config(w.panel, 10);
    const SearchSpace space;
    const SearchResult s = hyperparameter_search(w.panel, base, space, 1, 77);
    const TrainConfig sampled = sample_trial(base, space, 77, 0);
    EXPECT_EQ(s.best.artifact.to_json(), train(w.panel, sampled, 0).artifact.to_json());
    EXPECT_EQ(s.best_index, 0);
}

TEST(Search, BestScoreIsMinimumAndThreadCountIrrelevant) {
    const SyntheticWorld w = prepared_world(small_world());
    const TrainConfig base = quick_config(w.panel, 8);
    const SearchResult one = hyperparameter_search(w.panel, base, SearchSpace{}, 4, 3, 1);
    const SearchResult many = hyperparameter_search(w.panel, base, SearchSpace{}, 4, 3, 3);
    ASSERT_EQ(one.trials.size(), 4u);
    for (const auto& t : one.trials) {
        EXPECT_LE(one.trials[static_cast<std::size_t>(one.best_index)].score, t.score);
    }
    EXPECT_EQ(one.best_index, many.best_index);
    EXPECT_EQ(one.best.artifact.to_json(), many.best.artifact.to_json());
    EXPECT_THROW(hyperparameter_search(w.panel, base, SearchSpace{}, 0, 3), ConfigError);
}

TEST(Forecast, ZeroHorizonIsEmpty) {
    const SyntheticWorld w = prepared_world(small_world());
    const TrainResult r = train(w.panel, quick_config(w.panel, 0));
    EXPECT_TRUE(forecast(r.artifact, w.panel, 0).empty());
}

TEST(Forecast, ConstantRatesContinueTheDifferenceEquations) {
    const SyntheticWorld w = prepared_world(small_world());
    TrainConfig cfg = quick_config(w.panel, 0);
    cfg.encoders = make_encoders({}, {}, 1);
    cfg.optimizer.fine_tune_iterations = 0;
    const TrainResult r = train(w.panel, cfg);
    const int horizon = 7;
    const auto fc = forecast(r.artifact, w.panel, horizon);
    ASSERT_EQ(fc.size(), 1u);
    const LocationFit& fit = r.artifact.locations[0];
    RateSet rates;
    for (Rate x : all_rates()) {
        rates[x] = encode_rate(r.artifact.encoders[x], {}, {}, fit.location);
    }
    const int steps = r.artifact.T + horizon - fit.start_day;
    const Trajectory traj = simulate(fit.initial, std::vector<RateSet>(static_cast<std::size_t>(steps), rates));
    for (int d = r.artifact.T + 1; d <= r.artifact.T + horizon; ++d) {
        const auto k = static_cast<std::size_t>(d - fit.start_day);
        const auto view = observables_of(traj.states[k]);
        for (std::size_t o = 0; o < kNumObserved; ++o) {
            EXPECT_NEAR(fc[0].point.values[o][k], view[o], 1e-9 * std::max(1.0, std::abs(view[o])));
        }
    }
}

TEST(Forecast, QuantilePathsNeverCross) {
    const SyntheticWorld w = prepared_world(small_world(2, 60));
    TrainConfig cfg = quick_config(w.panel, 10);
    cfg.loss.kind = LossKind::quantile;
    const TrainResult r = train(w.panel, cfg);
    const auto fc = forecast(r.artifact, w.panel, 7);
    for (const auto& f : fc) {
        ASSERT_EQ(f.quantile_paths.size(), 3u);
        for (std::size_t o = 0; o < kNumObserved; ++o) {
            for (std::size_t k = 0; k < f.point.values[o].size(); ++k) {
                EXPECT_LE(f.quantile_paths[0].values[o][k], f.quantile_paths[1].values[o][k]);
                EXPECT_LE(f.quantile_paths[1].values[o][k], f.quantile_paths[2].values[o][k]);
            }
        }
    }
    const std::string csv = forecast_to_csv(r.artifact, fc, 7);
    EXPECT_EQ(csv.rfind("location_id,date,compartment,quantile,value\n", 0), 0u);
    EXPECT_NE(csv.find(",Q,0.9,"), std::string::npos);
}
