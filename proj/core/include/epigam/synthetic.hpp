#pragma once

#include "epigam/dynamics.hpp"
#include "epigam/encoders.hpp"
#include "epigam/features.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace epigam {

struct SyntheticOptions {
    int locations = 3;
    int days = 150;
    std::uint64_t seed = 7;
    Level level = Level::state;
    std::string anchor_date = "2020-03-01";
    /// Standard deviation of additive Gaussian observation noise, as a
    /// fraction of the noiseless value on that day.
    double noise = 0.0;
    /// Population range the locations are drawn from.
    double min_population = 5e5;
    double max_population = 3e6;
    /// Size of the seeding outbreak (documented infections before burn-in).
    double initial_documented = 45.0;
    /// Days simulated at the day-1 rates before the observed window starts,
    /// so day 0 carries a consistent compartment mix.
    int burn_in_days = 30;
    /// Multiplies both transmission rates.
    double transmission_scale = 0.8;
    /// Drop every n-th recovered observation (0 keeps all) to exercise masks.
    int recovered_gap_every = 0;
};

/// A panel generated by the compartment dynamics with rates from encoders
/// driven by two time-varying covariates ("mobility", "testing"). Two
/// statics ("density", "income") are included but not wired.
struct SyntheticWorld {
    /// Raw covariates, exact observables plus noise; not yet prepared.
    PanelDataset panel;
    /// Encoders on normalized covariates that generated the data.
    EncoderSet truth;
    std::vector<CompartmentState> initial;
    /// Noise-free trajectories (states[loc][day]).
    std::vector<std::vector<CompartmentState>> states;
};

SyntheticWorld make_synthetic_world(const SyntheticOptions& options);

/// Writes observations.csv, time_varying.csv, statics.csv, population.csv
/// and adjacency.csv (a chain over the locations) into `dir`.
void write_synthetic_csv(const SyntheticWorld& world, const std::string& dir);

} // namespace epigam
