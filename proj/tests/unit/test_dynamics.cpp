#include "epigam/dynamics.hpp"
#include "epigam/errors.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <limits>

using namespace epigam;
using epigam::testing::random_feasible_rates;
using epigam::testing::random_state;
using C = Compartment;
using R = Rate;

namespace {

// Independent long-double transcription of the daily equations.
std::array<long double, kNumCompartments> oracle_step(const CompartmentState& s, const RateSet& r) {
    auto v = [&](C c) { return static_cast<long double>(s[c]); };
    auto k = [&](R x) { return static_cast<long double>(r[x]); };
    const long double N = s.N;
    const long double new_inf = (k(R::beta_doc) * v(C::I_doc) + k(R::beta_undoc) * v(C::I_undoc)) * v(C::S) / N;
    std::array<long double, kNumCompartments> n{};
    auto at = [&](C c) -> long double& { return n[static_cast<std::size_t>(c)]; };
    at(C::S) = v(C::S) - new_inf + k(R::eta) * (v(C::R_doc) + v(C::R_undoc));
    at(C::E) = v(C::E) + new_inf - k(R::alpha) * v(C::E);
    at(C::I_undoc) = v(C::I_undoc) + k(R::alpha) * v(C::E) - (k(R::rho_I_undoc) + k(R::gamma)) * v(C::I_undoc);
    at(C::I_doc) = v(C::I_doc) + k(R::gamma) * v(C::I_undoc) -
                   (k(R::rho_I_doc) + k(R::kappa_I_doc) + k(R::h)) * v(C::I_doc);
    at(C::R_undoc) = v(C::R_undoc) + k(R::rho_I_undoc) * v(C::I_undoc) - k(R::eta) * v(C::R_undoc);
    at(C::R_doc) = v(C::R_doc) + k(R::rho_I_doc) * v(C::I_doc) + k(R::rho_H) * (v(C::H) - v(C::C)) -
                   k(R::eta) * v(C::R_doc);
    at(C::H) = v(C::H) + k(R::h) * v(C::I_doc) - (k(R::kappa_H) + k(R::rho_H)) * (v(C::H) - v(C::C)) -
               k(R::kappa_C) * (v(C::C) - v(C::V)) - k(R::kappa_V) * v(C::V);
    at(C::C) = v(C::C) + k(R::c_icu) * (v(C::H) - v(C::C)) -
               (k(R::kappa_C) + k(R::rho_C) + k(R::v_vent)) * (v(C::C) - v(C::V)) - k(R::kappa_V) * v(C::V);
    at(C::V) = v(C::V) + k(R::v_vent) * (v(C::C) - v(C::V)) - (k(R::kappa_V) + k(R::rho_V)) * v(C::V);
    at(C::D) = v(C::D) + k(R::kappa_V) * v(C::V) + k(R::kappa_C) * (v(C::C) - v(C::V)) +
               k(R::kappa_H) * (v(C::H) - v(C::C)) + k(R::kappa_I_doc) * v(C::I_doc);
    return n;
}

double closed_form(const RateSet& r) {
    const double a = r[R::gamma] + r[R::rho_I_undoc];
    const double b = r[R::rho_I_doc] + r[R::kappa_I_doc] + r[R::h];
    return (r[R::beta_doc] * r[R::gamma] + r[R::beta_undoc] * b) / (a * b);
}

// Non-transmitting outflows that keep the transition matrix invertible;
// R_e does not depend on them.
void set_clinical_outflows(RateSet& r) {
    r[R::alpha] = 0.2;
    r[R::kappa_H] = 0.01;
    r[R::rho_H] = 0.05;
    r[R::kappa_C] = 0.02;
    r[R::rho_C] = 0.05;
    r[R::kappa_V] = 0.03;
    r[R::rho_V] = 0.04;
}

CompartmentState simple_state() {
    CompartmentState s;
    s.N = 1000.0;
    s[C::S] = 990.0;
    s[C::I_undoc] = 10.0;
    return s;
}

} // namespace

TEST(Step, ZeroRatesLeaveStateUnchanged) {
    Rng rng(1);
    for (int i = 0; i < 50; ++i) {
        const CompartmentState s = random_state(rng);
        const StepResult r = step(s, RateSet{});
        EXPECT_EQ(r.state.values, s.values);
        EXPECT_EQ(r.state.N, s.N);
    }
}

TEST(Step, ContactOnlyMovesSusceptiblesToExposed) {
    RateSet r;
    r[R::beta_undoc] = 0.5;
    const CompartmentState n = step(simple_state(), r).state;
    EXPECT_NEAR(n[C::S], 985.05, 1e-12);
    EXPECT_NEAR(n[C::E], 4.95, 1e-12);
    EXPECT_EQ(n[C::I_undoc], 10.0);
    for (C c : {C::I_doc, C::R_doc, C::R_undoc, C::H, C::C, C::V, C::D}) {
        EXPECT_EQ(n[c], 0.0) << compartment_name(c);
    }
}

TEST(Step, LatencyMovesExposedToUndocumented) {
    CompartmentState s = simple_state();
    s[C::S] = 890.0;
    s[C::E] = 100.0;
    RateSet r;
    r[R::alpha] = 0.1;
    const CompartmentState n = step(s, r).state;
    EXPECT_DOUBLE_EQ(n[C::E], 90.0);
    EXPECT_DOUBLE_EQ(n[C::I_undoc], 20.0);
}

TEST(Step, MatchesLongDoubleOracle) {
    Rng rng(2);
    for (int i = 0; i < 500; ++i) {
        const CompartmentState s = random_state(rng);
        const RateSet r = random_feasible_rates(rng);
        const CompartmentState n = step(s, r).state;
        const auto o = oracle_step(s, r);
        for (std::size_t c = 0; c < kNumCompartments; ++c) {
            EXPECT_NEAR(n.values[c], static_cast<double>(o[c]), 1e-9 * s.N) << c;
        }
    }
}

TEST(Step, ConservesPopulationPartition) {
    Rng rng(3);
    for (int i = 0; i < 1000; ++i) {
        const CompartmentState s = random_state(rng, uniform(rng, 1.0, 1e7));
        const RateSet r = random_feasible_rates(rng);
        const double before = conserved_total(s);
        const double after = conserved_total(step(s, r).state);
        EXPECT_LE(std::abs(after - before) / before, 1e-12);
    }
}

TEST(Step, ExposedDecaysGeometricallyUnderLatencyOnly) {
    CompartmentState s = simple_state();
    s[C::E] = 500.0;
    RateSet r;
    r[R::alpha] = 0.13;
    const Trajectory t = simulate(s, std::vector<RateSet>(25, r));
    for (std::size_t k = 0; k < t.size(); ++k) {
        EXPECT_NEAR(t.states[k][C::E], 500.0 * std::pow(0.87, static_cast<double>(k)), 1e-9);
    }
}

TEST(Step, RejectsInvalidInput) {
    CompartmentState s = simple_state();
    RateSet r;
    s[C::E] = std::numeric_limits<double>::quiet_NaN();
    EXPECT_THROW(step(s, r), InvalidInputError);
    s = simple_state();
    s.N = 0.0;
    EXPECT_THROW(step(s, r), InvalidInputError);
    s = simple_state();
    r[R::gamma] = -0.1;
    EXPECT_THROW(step(s, r), InvalidInputError);
    r[R::gamma] = std::numeric_limits<double>::infinity();
    EXPECT_THROW(step(s, r), InvalidInputError);
}

TEST(Step, FlagsNegativeCompartmentsWithoutClamping) {
    CompartmentState s = simple_state();
    RateSet r;
    r[R::gamma] = 0.9;
    r[R::rho_I_undoc] = 0.9; // infeasible: removes 180% of I_undoc
    const StepResult res = step(s, r);
    EXPECT_TRUE(res.flags.negative_compartment);
    EXPECT_LT(res.state[C::I_undoc], 0.0);
}

TEST(Confirmed, SumsDocumentedCompartments) {
    EXPECT_EQ(confirmed(CompartmentState{}), 0.0);
    CompartmentState s;
    s[C::I_doc] = 5;
    s[C::R_doc] = 3;
    s[C::H] = 2;
    s[C::D] = 1;
    s[C::S] = 123;
    s[C::E] = 7;
    s[C::I_undoc] = 9;
    EXPECT_EQ(confirmed(s), 11.0);
}

TEST(Confirmed, DiagnosisAddsGammaTimesUndocumented) {
    CompartmentState s = simple_state();
    s[C::I_doc] = 4.0;
    RateSet r;
    r[R::gamma] = 0.25;
    const double before = confirmed(s);
    EXPECT_DOUBLE_EQ(confirmed(step(s, r).state) - before, 0.25 * 10.0);
}

TEST(Simulate, SingleZeroRateSetRepeatsInitial) {
    const CompartmentState s = simple_state();
    const Trajectory t = simulate(s, {RateSet{}});
    ASSERT_EQ(t.size(), 2u);
    EXPECT_EQ(t.states[0].values, s.values);
    EXPECT_EQ(t.states[1].values, s.values);
    EXPECT_EQ(t.rates.size(), 1u);
}

TEST(Simulate, MatchesManualStepsBitForBit) {
    Rng rng(4);
    const CompartmentState s = random_state(rng);
    const RateSet r = random_feasible_rates(rng);
    const Trajectory t = simulate(s, {r, r});
    const CompartmentState manual = step(step(s, r).state, r).state;
    EXPECT_EQ(t.states[2].values, manual.values);
}

TEST(Simulate, LongRunConservesPopulation) {
    Rng rng(5);
    for (int i = 0; i < 20; ++i) {
        const CompartmentState s = random_state(rng);
        const Trajectory t = simulate(s, std::vector<RateSet>(30, random_feasible_rates(rng)));
        for (const auto& x : t.states) {
            EXPECT_LE(std::abs(conserved_total(x) - s.N) / s.N, 1e-10);
        }
    }
}

TEST(Simulate, RejectsEmptyRatesAndReportsFailingDay) {
    EXPECT_THROW(simulate(simple_state(), {}), PreconditionError);
    std::vector<RateSet> seq(5);
    seq[3][R::alpha] = -1.0;
    try {
        simulate(simple_state(), seq, 10);
        FAIL() << "expected an error";
    } catch (const InvalidInputError& e) {
        EXPECT_NE(std::string(e.what()).find("day 13"), std::string::npos) << e.what();
    }
}

TEST(Simulate, DeathsNondecreasingWhileNestingHolds) {
    Rng rng(6);
    for (int i = 0; i < 200; ++i) {
        const Trajectory t = simulate(random_state(rng), std::vector<RateSet>(20, random_feasible_rates(rng)));
        for (std::size_t k = 1; k < t.size(); ++k) {
            const auto& prev = t.states[k - 1];
            const bool ok = !t.flags[k - 1].negative_compartment && !t.flags[k - 1].nesting_violated;
            if (!ok) {
                break;
            }
            EXPECT_GE(t.states[k][C::D], prev[C::D]);
        }
    }
}

TEST(ReproductionNumber, NoDiagnosisReducesToUndocumentedRatio) {
    RateSet r;
    set_clinical_outflows(r);
    r[R::beta_undoc] = 0.4;
    r[R::rho_I_undoc] = 0.2;
    r[R::beta_doc] = 0.77;
    r[R::rho_I_doc] = 0.1;
    EXPECT_EQ(effective_reproduction_number(r), 2.0);
    EXPECT_NEAR(ngm_spectral_radius(r), 2.0, 2.0 * 1e-10);
}

TEST(ReproductionNumber, ZeroContactsGiveZero) {
    Rng rng(7);
    RateSet r = random_feasible_rates(rng);
    r[R::beta_doc] = 0.0;
    r[R::beta_undoc] = 0.0;
    EXPECT_EQ(effective_reproduction_number(r), 0.0);
    EXPECT_EQ(ngm_spectral_radius(r), 0.0);
}

TEST(ReproductionNumber, WorkedExampleAgreesWithBothRoutes) {
    RateSet r;
    r[R::beta_doc] = 0.2;
    r[R::beta_undoc] = 0.5;
    r[R::gamma] = 0.1;
    r[R::rho_I_doc] = 0.1;
    r[R::kappa_I_doc] = 0.01;
    r[R::h] = 0.02;
    r[R::rho_I_undoc] = 0.1;
    set_clinical_outflows(r);
    // (0.2*0.1 + 0.5*0.13) / (0.2 * 0.13) = 0.085 / 0.026
    const double expected = 0.085 / 0.026;
    EXPECT_NEAR(effective_reproduction_number(r), expected, 1e-12 * expected);
    EXPECT_NEAR(ngm_spectral_radius(r), expected, 1e-10 * expected);
}

TEST(ReproductionNumber, NgmAgreesWithClosedFormOnRandomRates) {
    Rng rng(8);
    for (int i = 0; i < 1000; ++i) {
        const RateSet r = random_feasible_rates(rng);
        const double cf = closed_form(r);
        EXPECT_NEAR(effective_reproduction_number(r), cf, 1e-12 * cf);
        EXPECT_LE(epigam::testing::rel_diff(ngm_spectral_radius(r), cf), 1e-10);
    }
}

TEST(ReproductionNumber, DomainErrorsNameTheVanishingFactor) {
    RateSet r;
    r[R::beta_undoc] = 0.3;
    r[R::rho_I_doc] = 0.1;
    try {
        effective_reproduction_number(r);
        FAIL();
    } catch (const DomainError& e) {
        EXPECT_NE(std::string(e.what()).find("rho_I_undoc"), std::string::npos);
    }
    r[R::rho_I_doc] = 0.0;
    r[R::gamma] = 0.1;
    try {
        effective_reproduction_number(r);
        FAIL();
    } catch (const DomainError& e) {
        EXPECT_NE(std::string(e.what()).find("kappa_I_doc"), std::string::npos);
    }
}

TEST(ReproductionNumber, SingularTransitionMatrixIsNumericalError) {
    RateSet r; // alpha = 0 makes the E row of V vanish
    r[R::beta_undoc] = 0.3;
    r[R::rho_I_undoc] = 0.1;
    r[R::rho_I_doc] = 0.1;
    EXPECT_THROW(ngm_spectral_radius(r), NumericalError);
}

TEST(ValidateRates, ReportsEachOutflowSum) {
    RateSet r;
    r[R::rho_I_doc] = 0.9;
    r[R::kappa_I_doc] = 0.4;
    r[R::h] = 0.2;
    const FeasibilityReport rep = validate_rates(r);
    EXPECT_FALSE(rep.feasible);
    EXPECT_DOUBLE_EQ(rep.sums[0], 1.5);
    Rng rng(9);
    EXPECT_TRUE(validate_rates(random_feasible_rates(rng)).feasible);
}

TEST(TrajectoryCsv, HasOneRowPerDay) {
    const Trajectory t = simulate(simple_state(), std::vector<RateSet>(3));
    const std::string csv = trajectory_to_csv(t);
    EXPECT_EQ(csv.rfind("day,S,E,I_doc,I_undoc,R_doc,R_undoc,H,C,V,D,confirmed\n", 0), 0u);
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 5);
}
