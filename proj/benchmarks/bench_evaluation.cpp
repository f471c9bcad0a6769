#include "epigam/evaluation.hpp"
#include "epigam/random.hpp"

#include <benchmark/benchmark.h>

using namespace epigam;

namespace {

std::vector<ScoredPair> random_pairs(std::size_t n) {
    Rng rng(11);
    std::vector<ScoredPair> p(n);
    for (auto& x : p) {
        x = {uniform(rng, 0.0, 1000.0), uniform(rng, 1.0, 1000.0)};
    }
    return p;
}

} // namespace

static void BM_PointMetrics(benchmark::State& state) {
    const auto pairs = random_pairs(static_cast<std::size_t>(state.range(0)));
    for (auto _ : state) {
        benchmark::DoNotOptimize(mae(pairs) + rmse(pairs) + mape(pairs));
    }
    state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_PointMetrics)->Arg(1000)->Arg(100000);
