// Serial reference vs OpenMP kernel, for each parallel kernel in the engine.
// Thread count follows SWD_ENGINE_THREADS.

#include <benchmark/benchmark.h>

#include "swd/bench.h"
#include "swd/parallel.h"
#include "swd/verify.h"

using namespace swd;

namespace {

MarkovModel enumeration_model() { return MarkovModel::sticky(4, 0.7, {0.25, 0.25, 0.25, 0.25}); }

void BM_EnumerateSerial(benchmark::State& state) {
    const auto model = enumeration_model();
    const auto length = static_cast<std::size_t>(state.range(0));
    for (auto _ : state) benchmark::DoNotOptimize(enumerate_joint_serial(model, length));
    state.SetItemsProcessed(state.iterations() * (1LL << (2 * state.range(0))));
}

void BM_EnumerateParallel(benchmark::State& state) {
    const auto model = enumeration_model();
    const auto length = static_cast<std::size_t>(state.range(0));
    for (auto _ : state) benchmark::DoNotOptimize(enumerate_joint(model, length));
    state.SetItemsProcessed(state.iterations() * (1LL << (2 * state.range(0))));
    state.counters["threads"] = engine_threads();
}

void BM_CorpusSerial(benchmark::State& state) {
    const auto corpus = generate_corpus(static_cast<std::size_t>(state.range(0)), 1);
    for (auto _ : state) benchmark::DoNotOptimize(run_corpus_serial(corpus));
}

void BM_CorpusParallel(benchmark::State& state) {
    const auto corpus = generate_corpus(static_cast<std::size_t>(state.range(0)), 1);
    for (auto _ : state) benchmark::DoNotOptimize(run_corpus(corpus));
    state.counters["threads"] = engine_threads();
}

DecodePolicy trial_policy() {
    DecodePolicy p;
    p.selector = Selector::eb_sampler;
    p.gamma = 0.5;
    p.lambda = 1.0;
    return p;
}

void BM_TrialsSerial(benchmark::State& state) {
    const auto task = default_task(4, 32, true, static_cast<std::size_t>(state.range(0)), 7);
    for (auto _ : state) benchmark::DoNotOptimize(run_task_serial(task, trial_policy()));
}

void BM_TrialsParallel(benchmark::State& state) {
    const auto task = default_task(4, 32, true, static_cast<std::size_t>(state.range(0)), 7);
    for (auto _ : state) benchmark::DoNotOptimize(run_task(task, trial_policy()));
    state.counters["threads"] = engine_threads();
}

}  // namespace

BENCHMARK(BM_EnumerateSerial)->Arg(6)->Arg(9)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_EnumerateParallel)->Arg(6)->Arg(9)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_CorpusSerial)->Arg(256)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_CorpusParallel)->Arg(256)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_TrialsSerial)->Arg(200)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_TrialsParallel)->Arg(200)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
