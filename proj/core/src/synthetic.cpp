#include "epigam/synthetic.hpp"

#include "epigam/errors.hpp"
#include "epigam/random.hpp"
#include "epigam/training.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>

namespace epigam {

namespace {

double gaussian(Rng& rng) {
    // Box-Muller on the library's own uniform draws keeps output portable.
    const double u1 = 1.0 - uniform01(rng);
    const double u2 = uniform01(rng);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

double logit_at(double rate, Rate r) {
    const RateBounds b = default_bounds(r);
    const double p = (rate - b.lower) / (b.upper - b.lower);
    return std::log(p / (1.0 - p));
}

} // namespace

SyntheticWorld make_synthetic_world(const SyntheticOptions& o) {
    if (o.locations < 1 || o.days < 2 || o.burn_in_days < 0 || !(o.transmission_scale > 0.0)) {
        throw ConfigError("synthetic world needs at least one location and two days, a non-negative burn-in and positive transmission");
    }
    if (!(o.noise >= 0.0)) {
        throw ConfigError("synthetic noise must be >= 0");
    }
    SyntheticWorld w;
    Rng rng = substream(o.seed, 0);
    const auto L = static_cast<std::size_t>(o.locations);
    const auto days = static_cast<std::size_t>(o.days);

    PanelDataset& p = w.panel;
    p.level = o.level;
    p.anchor_date = o.anchor_date;
    p.num_days = o.days;
    auto& mobility = p.time_varying["mobility"];
    auto& testing = p.time_varying["testing"];
    auto& density = p.statics["density"];
    auto& income = p.statics["income"];
    for (std::size_t l = 0; l < L; ++l) {
        char id[32];
        std::snprintf(id, sizeof(id), "L%02zu", l + 1);
        p.locations.emplace_back(id);
        p.population.push_back(std::round(uniform(rng, o.min_population, o.max_population)));
        const double phase = uniform(rng, 0.0, 2.0 * std::numbers::pi);
        const double period = uniform(rng, 120.0, 200.0);
        const double test_start = uniform(rng, 0.1, 0.3);
        const double test_end = uniform(rng, 0.7, 0.95);
        std::vector<double> mob(days);
        std::vector<double> tst(days);
        for (std::size_t t = 0; t < days; ++t) {
            const double x = static_cast<double>(t);
            mob[t] = 60.0 + 25.0 * std::sin(2.0 * std::numbers::pi * x / period + phase);
            tst[t] = 1000.0 * (test_start + (test_end - test_start) * x / static_cast<double>(days - 1));
        }
        mobility.push_back(std::move(mob));
        testing.push_back(std::move(tst));
        density.push_back(std::round(uniform(rng, 10.0, 2000.0)));
        income.push_back(std::round(uniform(rng, 20000.0, 80000.0)));
    }
    for (std::size_t l = 0; l + 1 < L; ++l) {
        p.graph.add_edge(p.locations[l], p.locations[l + 1]);
    }

    // Ground-truth encoders act on normalized covariates, exactly as the
    // prepared panel will present them.
    PanelDataset normalized = p;
    normalize(normalized);
    std::map<Rate, std::vector<std::string>> wiring = default_wiring();
    w.truth = make_encoders(wiring, {}, 1);
    const std::array<double, kNumRates> base = [&] {
        std::array<double, kNumRates> r{};
        auto set = [&](Rate rate, double v) { r[static_cast<std::size_t>(rate)] = v; };
        set(Rate::beta_doc, 0.04 * o.transmission_scale);
        set(Rate::beta_undoc, 0.22 * o.transmission_scale);
        set(Rate::eta, 0.0005);
        set(Rate::alpha, 0.15);
        set(Rate::gamma, 0.06);
        set(Rate::h, 0.02);
        set(Rate::c_icu, 0.04);
        set(Rate::v_vent, 0.06);
        set(Rate::rho_I_doc, 0.07);
        set(Rate::rho_I_undoc, 0.09);
        set(Rate::rho_H, 0.06);
        set(Rate::rho_C, 0.04);
        set(Rate::rho_V, 0.04);
        set(Rate::kappa_I_doc, 0.002);
        set(Rate::kappa_H, 0.004);
        set(Rate::kappa_C, 0.008);
        set(Rate::kappa_V, 0.015);
        return r;
    }();
    for (Rate r : all_rates()) {
        RateEncoder& e = w.truth[r];
        e.global_bias = logit_at(base[static_cast<std::size_t>(r)], r);
        for (const auto& loc : p.locations) {
            e.local_bias[loc] = 0.0;
        }
    }
    // Mobility raises contacts, testing raises the diagnosis rate.
    w.truth[Rate::beta_doc].weights = {0.6};
    w.truth[Rate::beta_undoc].weights = {0.6};
    w.truth[Rate::gamma].weights = {0.8};
    w.truth[Rate::beta_doc].global_bias -= 0.3;
    w.truth[Rate::beta_undoc].global_bias -= 0.3;
    w.truth[Rate::gamma].global_bias -= 0.4;
    for (std::size_t l = 0; l < L; ++l) {
        const double shift = uniform(rng, -0.15, 0.15);
        w.truth[Rate::beta_undoc].local_bias[p.locations[l]] = shift;
        w.truth[Rate::beta_doc].local_bias[p.locations[l]] = shift;
    }

    p.observations.assign(L, {});
    for (std::size_t l = 0; l < L; ++l) {
        using C = Compartment;
        CompartmentState s;
        s.N = p.population[l];
        const double scale = uniform(rng, 0.8, 1.5) * o.initial_documented / 45.0;
        s[C::E] = std::round(250.0 * scale);
        s[C::I_undoc] = std::round(180.0 * scale);
        s[C::I_doc] = std::round(45.0 * scale);
        s[C::R_doc] = std::round(8.0 * scale);
        s[C::R_undoc] = std::round(20.0 * scale);
        s[C::H] = std::round(6.0 * scale);
        s[C::C] = std::round(2.0 * scale);
        s[C::V] = std::round(0.5 * scale);
        s[C::D] = std::round(0.5 * scale);
        s[C::S] = s.N - conserved_total(s);

        const LocationCovariates cov = normalized.covariates_of(l);
        const std::vector<RateSet> rates = encode_rates_over_time(w.truth, cov, p.locations[l], 1, o.days);
        if (o.burn_in_days > 0) {
            const std::vector<RateSet> warm(static_cast<std::size_t>(o.burn_in_days) + 1, rates[1]);
            s = simulate(s, warm, 0).states.back();
        }
        w.initial.push_back(s);
        const Trajectory traj = simulate(s, rates, 0);
        w.states.push_back(traj.states);

        Rng noise_rng = substream(o.seed, 1000 + l);
        auto& obs = p.observations[l];
        for (auto& series : obs) {
            series = MaskedSeries(days);
        }
        for (std::size_t t = 0; t < days; ++t) {
            const auto y = observables_of(traj.states[t]);
            for (std::size_t k = 0; k < kNumObserved; ++k) {
                double v = y[k];
                if (o.noise > 0.0) {
                    v += o.noise * y[k] * gaussian(noise_rng);
                }
                obs[k].values[t] = std::max(0.0, v);
                obs[k].present[t] = 1;
            }
            if (o.recovered_gap_every > 0 && t % static_cast<std::size_t>(o.recovered_gap_every) ==
                                                 static_cast<std::size_t>(o.recovered_gap_every - 1)) {
                const auto r = static_cast<std::size_t>(Observed::R_doc);
                obs[r].values[t] = 0.0;
                obs[r].present[t] = 0;
            }
        }
    }
    return w;
}

void write_synthetic_csv(const SyntheticWorld& world, const std::string& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    const PanelDataset& p = world.panel;
    auto open = [&](const std::string& name) {
        std::ofstream f(fs::path(dir) / name, std::ios::binary);
        if (!f) {
            throw IoError("cannot write '" + (fs::path(dir) / name).string() + "'");
        }
        return f;
    };
    {
        auto f = open("observations.csv");
        f << "location_id,date,confirmed,deaths,hospitalized,icu,ventilator,recovered\n";
        for (std::size_t l = 0; l < p.locations.size(); ++l) {
            for (int d = 0; d < p.num_days; ++d) {
                f << p.locations[l] << ',' << date_from_index(d, p.anchor_date);
                for (Observed o : all_observed()) {
                    const MaskedSeries& s = p.series(l, o);
                    f << ',';
                    if (s.has(static_cast<std::size_t>(d))) {
                        f << format_double(s.values[static_cast<std::size_t>(d)]);
                    }
                }
                f << '\n';
            }
        }
    }
    {
        auto f = open("time_varying.csv");
        f << "location_id,date,covariate_id,value\n";
        for (const auto& [id, per_loc] : p.time_varying) {
            for (std::size_t l = 0; l < p.locations.size(); ++l) {
                for (int d = 0; d < p.num_days; ++d) {
                    f << p.locations[l] << ',' << date_from_index(d, p.anchor_date) << ',' << id << ','
                      << format_double(per_loc[l][static_cast<std::size_t>(d)]) << '\n';
                }
            }
        }
    }
    {
        auto f = open("statics.csv");
        f << "location_id,covariate_id,value\n";
        for (const auto& [id, per_loc] : p.statics) {
            for (std::size_t l = 0; l < p.locations.size(); ++l) {
                f << p.locations[l] << ',' << id << ',' << format_double(per_loc[l]) << '\n';
            }
        }
    }
    {
        auto f = open("population.csv");
        f << "location_id,population\n";
        for (std::size_t l = 0; l < p.locations.size(); ++l) {
            f << p.locations[l] << ',' << format_double(p.population[l]) << '\n';
        }
    }
    {
        auto f = open("adjacency.csv");
        f << "loc_a,loc_b\n";
        for (const auto& [a, nbrs] : p.graph.adjacency()) {
            for (const auto& b : nbrs) {
                if (a < b) {
                    f << a << ',' << b << '\n';
                }
            }
        }
    }
}

} // namespace epigam
