#include "epigam/dynamics.hpp"

#include <benchmark/benchmark.h>

using namespace epigam;

namespace {

RateSet plausible_rates() {
    RateSet r;
    for (Rate x : all_rates()) {
        r[x] = 0.01;
    }
    r[Rate::beta_doc] = 0.05;
    r[Rate::beta_undoc] = 0.25;
    r[Rate::alpha] = 0.2;
    r[Rate::gamma] = 0.1;
    r[Rate::rho_I_undoc] = 0.1;
    return r;
}

CompartmentState seeded_state() {
    CompartmentState s;
    s.N = 1e6;
    s[Compartment::S] = 1e6 - 500.0;
    s[Compartment::E] = 300.0;
    s[Compartment::I_doc] = 50.0;
    s[Compartment::I_undoc] = 150.0;
    return s;
}

} // namespace

static void BM_Step(benchmark::State& state) {
    const CompartmentState s = seeded_state();
    const RateSet r = plausible_rates();
    for (auto _ : state) {
        benchmark::DoNotOptimize(step(s, r));
    }
}
BENCHMARK(BM_Step);

static void BM_Simulate(benchmark::State& state) {
    const std::vector<RateSet> rates(static_cast<std::size_t>(state.range(0)), plausible_rates());
    const CompartmentState s = seeded_state();
    for (auto _ : state) {
        benchmark::DoNotOptimize(simulate(s, rates));
    }
    state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Simulate)->Arg(150)->Arg(1000);

static void BM_ClosedFormReproductionNumber(benchmark::State& state) {
    const RateSet r = plausible_rates();
    for (auto _ : state) {
        benchmark::DoNotOptimize(effective_reproduction_number(r));
    }
}
BENCHMARK(BM_ClosedFormReproductionNumber);

static void BM_NgmSpectralRadius(benchmark::State& state) {
    const RateSet r = plausible_rates();
    for (auto _ : state) {
        benchmark::DoNotOptimize(ngm_spectral_radius(r));
    }
}
BENCHMARK(BM_NgmSpectralRadius);
BENCHMARK_MAIN();
