#include "epigam/features.hpp"
#include "epigam/synthetic.hpp"
#include "epigam/training.hpp"

#include <benchmark/benchmark.h>

using namespace epigam;

namespace {

PanelDataset bench_panel(int days) {
    SyntheticOptions so;
    so.days = days;
    SyntheticWorld w = make_synthetic_world(so);
    IngestReport report;
    prepare(w.panel, PrepareOptions{}, report);
    return w.panel;
}

TrainConfig bench_config() {
    TrainConfig cfg;
    cfg.horizon = 7;
    cfg.encoders = make_encoders(default_wiring(), {}, 7);
    cfg.initial_rates = default_initial_rates();
    return cfg;
}

} // namespace

static void BM_ValueLoss(benchmark::State& state) {
    const PanelDataset panel = bench_panel(static_cast<int>(state.range(0)));
    const TrainingProblem problem(panel, bench_config());
    const ad::ParameterStore store = problem.initial_parameters(1);
    const PhaseSpec phase = problem.phase1();
    for (auto _ : state) {
        benchmark::DoNotOptimize(problem.value_loss(store, phase).total);
    }
}
BENCHMARK(BM_ValueLoss)->Arg(60)->Arg(150);

static void BM_TapedLossAndBackward(benchmark::State& state) {
    const PanelDataset panel = bench_panel(static_cast<int>(state.range(0)));
    const TrainingProblem problem(panel, bench_config());
    ad::ParameterStore store = problem.initial_parameters(1);
    const PhaseSpec phase = problem.phase1();
    ad::Tape tape;
    for (auto _ : state) {
        tape.reset();
        tape.backward(problem.taped_loss(tape, store, phase), store);
        benchmark::DoNotOptimize(store.gradients().data());
    }
}
BENCHMARK(BM_TapedLossAndBackward)->Arg(60)->Arg(150);
