#include <benchmark/benchmark.h>

#include <random>
#include <string>
#include <vector>

#include "patrec/sessions.hpp"

namespace {

std::vector<std::string> random_sequence(size_t len, std::mt19937& rng) {
    std::vector<std::string> seq;
    seq.reserve(len);
    for (size_t i = 0; i < len; ++i) seq.push_back("item" + std::to_string(rng() % 30));
    return seq;
}

void BM_SessionGraphBuild(benchmark::State& state) {
    std::mt19937 rng(42);
    auto seq = random_sequence(static_cast<size_t>(state.range(0)), rng);
    for (auto _ : state) {
        auto g = patrec::to_session_graph(seq, patrec::WeightMode::outdegree);
        benchmark::DoNotOptimize(g);
    }
}
BENCHMARK(BM_SessionGraphBuild)->Arg(10)->Arg(50);

void BM_CoreFilter(benchmark::State& state) {
    std::mt19937 rng(42);
    std::vector<patrec::Session> sessions;
    for (int i = 0; i < state.range(0); ++i) {
        patrec::Session s;
        s.id = "s" + std::to_string(i);
        s.day = static_cast<int>(rng() % 14) + 1;
        s.items = random_sequence(rng() % 8 + 2, rng);
        sessions.push_back(std::move(s));
    }
    for (auto _ : state) {
        auto filtered = patrec::core_filter(sessions, 3);
        benchmark::DoNotOptimize(filtered);
    }
}
BENCHMARK(BM_CoreFilter)->Arg(1000);

}  // namespace

BENCHMARK_MAIN();
