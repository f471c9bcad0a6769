#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace epigam {

/// Disease-state buckets. C and V are nested inside H (V <= C <= H).
enum class Compartment : std::size_t { S, E, I_doc, I_undoc, R_doc, R_undoc, H, C, V, D };
inline constexpr std::size_t kNumCompartments = 10;

/// Per-day transition rates. `c_icu` and `v_vent` are the ICU and
/// ventilator rates.
enum class Rate : std::size_t {
    beta_doc,
    beta_undoc,
    eta,
    alpha,
    gamma,
    h,
    c_icu,
    v_vent,
    rho_I_doc,
    rho_I_undoc,
    rho_H,
    rho_C,
    rho_V,
    kappa_I_doc,
    kappa_H,
    kappa_C,
    kappa_V,
};
inline constexpr std::size_t kNumRates = 17;

std::string_view compartment_name(Compartment c);
std::string_view rate_name(Rate r);
std::optional<Rate> rate_from_name(std::string_view name);
const std::array<Rate, kNumRates>& all_rates();
const std::array<Compartment, kNumCompartments>& all_compartments();

template <class T>
struct BasicCompartmentState {
    std::array<T, kNumCompartments> values{};
    T N{};

    T& operator[](Compartment c) { return values[static_cast<std::size_t>(c)]; }
    const T& operator[](Compartment c) const { return values[static_cast<std::size_t>(c)]; }
};

template <class T>
struct BasicRateSet {
    std::array<T, kNumRates> values{};

    T& operator[](Rate r) { return values[static_cast<std::size_t>(r)]; }
    const T& operator[](Rate r) const { return values[static_cast<std::size_t>(r)]; }
};

using CompartmentState = BasicCompartmentState<double>;
using RateSet = BasicRateSet<double>;

/// Applies the daily difference equations verbatim. No validation; the
/// checked entry point is `step`.
template <class T>
BasicCompartmentState<T> step_unchecked(const BasicCompartmentState<T>& s, const BasicRateSet<T>& r) {
    using C = Compartment;
    using R = Rate;
    const T& S = s[C::S];
    const T& E = s[C::E];
    const T& Id = s[C::I_doc];
    const T& Iu = s[C::I_undoc];
    const T& Rd = s[C::R_doc];
    const T& Ru = s[C::R_undoc];
    const T& H = s[C::H];
    const T& Cc = s[C::C];
    const T& V = s[C::V];
    const T& D = s[C::D];

    const T infections = (r[R::beta_doc] * Id + r[R::beta_undoc] * Iu) * S / s.N;
    const T ward = H - Cc;   // hospitalized, not in ICU
    const T icu_only = Cc - V; // in ICU, not ventilated
    const T kH = r[R::kappa_H] * ward;
    const T kC = r[R::kappa_C] * icu_only;
    const T kV = r[R::kappa_V] * V;

    BasicCompartmentState<T> n;
    n.N = s.N;
    n[C::S] = S - infections + r[R::eta] * (Rd + Ru);
    n[C::E] = E + infections - r[R::alpha] * E;
    n[C::I_undoc] = Iu + r[R::alpha] * E - (r[R::rho_I_undoc] + r[R::gamma]) * Iu;
    n[C::I_doc] = Id + r[R::gamma] * Iu - (r[R::rho_I_doc] + r[R::kappa_I_doc] + r[R::h]) * Id;
    n[C::R_undoc] = Ru + r[R::rho_I_undoc] * Iu - r[R::eta] * Ru;
    n[C::R_doc] = Rd + r[R::rho_I_doc] * Id + r[R::rho_H] * ward - r[R::eta] * Rd;
    n[C::H] = H + r[R::h] * Id - (r[R::kappa_H] + r[R::rho_H]) * ward - kC - kV;
    n[C::C] = Cc + r[R::c_icu] * ward - (r[R::kappa_C] + r[R::rho_C] + r[R::v_vent]) * icu_only - kV;
    n[C::V] = V + r[R::v_vent] * icu_only - (r[R::kappa_V] + r[R::rho_V]) * V;
    n[C::D] = D + kV + kC + kH + r[R::kappa_I_doc] * Id;
    return n;
}

/// Confirmed cases: I_doc + R_doc + H + D.
template <class T>
T confirmed_of(const BasicCompartmentState<T>& s) {
    return s[Compartment::I_doc] + s[Compartment::R_doc] + s[Compartment::H] + s[Compartment::D];
}

/// Sum over the compartments that partition the population (C and V are
/// subsets of H and excluded).
double conserved_total(const CompartmentState& s);

struct StateFlags {
    bool negative_compartment = false;
    bool nesting_violated = false; // V <= C <= H does not hold
};

struct StepResult {
    CompartmentState state;
    StateFlags flags;
};

StateFlags inspect(const CompartmentState& s);

/// Validates inputs, then advances one day.
/// Throws InvalidInputError on non-finite values, negative rates, or N <= 0.
StepResult step(const CompartmentState& state, const RateSet& rates);

double confirmed(const CompartmentState& state);

struct Trajectory {
    std::vector<CompartmentState> states;
    std::vector<RateSet> rates;
    std::vector<StateFlags> flags;
    int start_time = 0;

    std::size_t size() const noexcept { return states.size(); }
};

/// states[k+1] = step(states[k], rates_seq[k]).
Trajectory simulate(const CompartmentState& initial, const std::vector<RateSet>& rates_seq, int start_time = 0);

/// Closed-form effective reproduction number of the infection subsystem.
/// Throws DomainError if either denominator factor vanishes.
double effective_reproduction_number(const RateSet& rates);

/// Spectral radius of K = F * V^{-1} built from the 6x6 new-infection and
/// transition matrices. Throws NumericalError if V is singular.
double ngm_spectral_radius(const RateSet& rates);

/// Feasibility of per-compartment outflow sums (each must be <= 1).
struct FeasibilityReport {
    std::array<double, 5> sums{};
    bool feasible = true;
};
FeasibilityReport validate_rates(const RateSet& rates);

/// CSV with columns day,S,E,I_doc,I_undoc,R_doc,R_undoc,H,C,V,D,confirmed.
std::string trajectory_to_csv(const Trajectory& trajectory);

/// Shortest round-trip decimal text of a double.
std::string format_double(double v);

} // namespace epigam
