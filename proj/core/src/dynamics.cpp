#include "epigam/dynamics.hpp"

#include "epigam/errors.hpp"

#include <Eigen/Dense>

#include <charconv>
#include <cmath>
#include <sstream>

namespace epigam {

namespace {

constexpr std::array<std::string_view, kNumCompartments> kCompartmentNames = {
    "S", "E", "I_doc", "I_undoc", "R_doc", "R_undoc", "H", "C", "V", "D"};

constexpr std::array<std::string_view, kNumRates> kRateNames = {
    "beta_doc", "beta_undoc", "eta",     "alpha",       "gamma",   "h",       "c_icu",   "v_vent",  "rho_I_doc",
    "rho_I_undoc", "rho_H",   "rho_C",   "rho_V",       "kappa_I_doc", "kappa_H", "kappa_C", "kappa_V"};

void require_finite_state(const CompartmentState& s) {
    for (std::size_t i = 0; i < kNumCompartments; ++i) {
        if (!std::isfinite(s.values[i])) {
            throw InvalidInputError("compartment " + std::string(kCompartmentNames[i]) + " is not finite");
        }
    }
    if (!std::isfinite(s.N)) {
        throw InvalidInputError("population N is not finite");
    }
    if (s.N <= 0.0) {
        throw InvalidInputError("population N must be positive, got " + format_double(s.N));
    }
}

void require_valid_rates(const RateSet& r) {
    for (std::size_t i = 0; i < kNumRates; ++i) {
        if (!std::isfinite(r.values[i])) {
            throw InvalidInputError("rate " + std::string(kRateNames[i]) + " is not finite");
        }
        if (r.values[i] < 0.0) {
            throw InvalidInputError("rate " + std::string(kRateNames[i]) + " is negative");
        }
    }
}

} // namespace

std::string_view compartment_name(Compartment c) { return kCompartmentNames[static_cast<std::size_t>(c)]; }

std::string_view rate_name(Rate r) { return kRateNames[static_cast<std::size_t>(r)]; }

std::optional<Rate> rate_from_name(std::string_view name) {
    for (std::size_t i = 0; i < kNumRates; ++i) {
        if (kRateNames[i] == name) {
            return static_cast<Rate>(i);
        }
    }
    return std::nullopt;
}

const std::array<Rate, kNumRates>& all_rates() {
    static const std::array<Rate, kNumRates> rates = [] {
        std::array<Rate, kNumRates> out{};
        for (std::size_t i = 0; i < kNumRates; ++i) {
            out[i] = static_cast<Rate>(i);
        }
        return out;
    }();
    return rates;
}

const std::array<Compartment, kNumCompartments>& all_compartments() {
    static const std::array<Compartment, kNumCompartments> comps = [] {
        std::array<Compartment, kNumCompartments> out{};
        for (std::size_t i = 0; i < kNumCompartments; ++i) {
            out[i] = static_cast<Compartment>(i);
        }
        return out;
    }();
    return comps;
}

double conserved_total(const CompartmentState& s) {
    using C = Compartment;
    return s[C::S] + s[C::E] + s[C::I_doc] + s[C::I_undoc] + s[C::R_doc] + s[C::R_undoc] + s[C::H] + s[C::D];
}

StateFlags inspect(const CompartmentState& s) {
    StateFlags f;
    for (double v : s.values) {
        if (v < 0.0) {
            f.negative_compartment = true;
        }
    }
    using C = Compartment;
    f.nesting_violated = !(s[C::V] <= s[C::C] && s[C::C] <= s[C::H]);
    return f;
}

StepResult step(const CompartmentState& state, const RateSet& rates) {
    require_finite_state(state);
    require_valid_rates(rates);
    StepResult out;
    out.state = step_unchecked(state, rates);
    out.flags = inspect(out.state);
    return out;
}

double confirmed(const CompartmentState& state) { return confirmed_of(state); }

Trajectory simulate(const CompartmentState& initial, const std::vector<RateSet>& rates_seq, int start_time) {
    if (rates_seq.empty()) {
        throw PreconditionError("simulate requires at least one rate set");
    }
    Trajectory traj;
    traj.start_time = start_time;
    traj.states.reserve(rates_seq.size() + 1);
    traj.flags.reserve(rates_seq.size() + 1);
    traj.states.push_back(initial);
    traj.flags.push_back(inspect(initial));
    traj.rates = rates_seq;
    for (std::size_t k = 0; k < rates_seq.size(); ++k) {
        try {
            StepResult r = step(traj.states.back(), rates_seq[k]);
            traj.states.push_back(r.state);
            traj.flags.push_back(r.flags);
        } catch (const InvalidInputError& e) {
            throw InvalidInputError("day " + std::to_string(start_time + static_cast<int>(k)) + ": " + e.what());
        }
    }
    return traj;
}

double effective_reproduction_number(const RateSet& r) {
    using R = Rate;
    const double undoc_exit = r[R::gamma] + r[R::rho_I_undoc];
    const double doc_exit = r[R::rho_I_doc] + r[R::kappa_I_doc] + r[R::h];
    if (undoc_exit == 0.0) {
        throw DomainError("effective reproduction number undefined: gamma + rho_I_undoc = 0");
    }
    if (r[R::gamma] == 0.0) {
        // No documentation: only undocumented infections transmit.
        return r[R::beta_undoc] / r[R::rho_I_undoc];
    }
    if (doc_exit == 0.0) {
        throw DomainError("effective reproduction number undefined: rho_I_doc + kappa_I_doc + h = 0");
    }
    return (r[R::beta_doc] * r[R::gamma] + r[R::beta_undoc] * doc_exit) / (undoc_exit * doc_exit);
}

double ngm_spectral_radius(const RateSet& r) {
    using R = Rate;
    // Infected subsystem ordering: [E, I_doc, I_undoc, H, C, V].
    Eigen::Matrix<double, 6, 6> F = Eigen::Matrix<double, 6, 6>::Zero();
    F(0, 1) = r[R::beta_doc];
    F(0, 2) = r[R::beta_undoc];

    const double kH = r[R::kappa_H];
    const double kC = r[R::kappa_C];
    const double kV = r[R::kappa_V];
    const double rH = r[R::rho_H];
    const double rC = r[R::rho_C];
    const double rV = r[R::rho_V];
    const double c = r[R::c_icu];
    const double v = r[R::v_vent];

    Eigen::Matrix<double, 6, 6> V = Eigen::Matrix<double, 6, 6>::Zero();
    V(0, 0) = r[R::alpha];
    V(1, 1) = r[R::h] + r[R::kappa_I_doc] + r[R::rho_I_doc];
    V(1, 2) = -r[R::gamma];
    V(2, 0) = -r[R::alpha];
    V(2, 2) = r[R::gamma] + r[R::rho_I_undoc];
    V(3, 1) = -r[R::h];
    V(3, 3) = kH + rH;
    V(3, 4) = kC - kH - rH;
    V(3, 5) = -kC + kV;
    V(4, 3) = -c;
    V(4, 4) = c + v + kC + rC;
    V(4, 5) = -kC + kV - rC - v;
    V(5, 4) = -v;
    V(5, 5) = kV + rV + v;

    Eigen::FullPivLU<Eigen::Matrix<double, 6, 6>> lu(V);
    lu.setThreshold(1e-14);
    if (!lu.isInvertible()) {
        throw NumericalError("transition matrix V is singular; next-generation matrix undefined");
    }
    const Eigen::Matrix<double, 6, 6> K = F * lu.inverse();
    Eigen::EigenSolver<Eigen::Matrix<double, 6, 6>> solver(K, /*computeEigenvectors=*/false);
    if (solver.info() != Eigen::Success) {
        throw NumericalError("eigen-decomposition of next-generation matrix K failed");
    }
    return solver.eigenvalues().cwiseAbs().maxCoeff();
}

FeasibilityReport validate_rates(const RateSet& r) {
    using R = Rate;
    FeasibilityReport rep;
    rep.sums = {
        r[R::rho_I_doc] + r[R::kappa_I_doc] + r[R::h],
        r[R::rho_I_undoc] + r[R::gamma],
        r[R::c_icu] + r[R::kappa_H] + r[R::rho_H],
        r[R::v_vent] + r[R::kappa_C] + r[R::rho_C],
        r[R::kappa_V] + r[R::rho_V],
    };
    for (double s : rep.sums) {
        if (!(s <= 1.0)) {
            rep.feasible = false;
        }
    }
    return rep;
}

std::string format_double(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

std::string trajectory_to_csv(const Trajectory& t) {
    std::ostringstream os;
    os << "day";
    for (auto name : kCompartmentNames) {
        os << ',' << name;
    }
    os << ",confirmed\n";
    for (std::size_t k = 0; k < t.states.size(); ++k) {
        const auto& s = t.states[k];
        os << (t.start_time + static_cast<int>(k));
        for (double v : s.values) {
            os << ',' << format_double(v);
        }
        os << ',' << format_double(confirmed(s)) << '\n';
    }
    return os.str();
}

} // namespace epigam
