/*
 * Copyright 2026 The triageflow Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

// Serial vs OpenMP kernels: index scoring and the navigation evaluation.

#include "triage/eval.hpp"
#include "triage/parallel.hpp"
#include "triage/retrieval.hpp"

#include <benchmark/benchmark.h>

#include <random>

namespace {

using namespace triage;

RetrievalIndex synthetic_index(std::size_t n, std::size_t dim) {
    std::mt19937_64 rng(42);
    std::normal_distribution<double> g;
    std::vector<IndexEntry> entries;
    entries.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        EmbeddingVector v(dim);
        for (auto& x : v) x = g(rng);
        normalize(v);
        entries.push_back({"chart_" + std::to_string(i), "", std::move(v)});
    }
    return RetrievalIndex("bench", dim, std::move(entries));
}

EmbeddingVector query(std::size_t dim) {
    EmbeddingVector q(dim, 1.0);
    normalize(q);
    return q;
}

void BM_ScoreSerial(benchmark::State& state) {
    const auto index = synthetic_index(static_cast<std::size_t>(state.range(0)), 1536);
    const auto q = query(1536);
    for (auto _ : state) benchmark::DoNotOptimize(score_serial(index, q));
    state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_ScoreParallel(benchmark::State& state) {
    const auto index = synthetic_index(static_cast<std::size_t>(state.range(0)), 1536);
    const auto q = query(1536);
    for (auto _ : state) benchmark::DoNotOptimize(score_parallel(index, q));
    state.SetItemsProcessed(state.iterations() * state.range(0));
    state.counters["threads"] = parallel::max_threads();
}

std::vector<PatientResponseRecord> responses(std::size_t n) {
    const std::array<std::string, 5> texts{"Yes.", "No, never had that.", "I think so, maybe.", "I'm not sure.",
                                           "My cat is chasing her tail."};
    std::vector<PatientResponseRecord> out;
    for (std::size_t i = 0; i < n; ++i)
        out.push_back({"r" + std::to_string(i), "c", "N1", "Do you have a fever?",
                       kAllPatterns[i % kAllPatterns.size()], AnswerLabel::Yes, texts[i % texts.size()], "bench"});
    return out;
}

void BM_NavigationEval(benchmark::State& state) {
    const auto records = responses(static_cast<std::size_t>(state.range(0)));
    const RuleBasedClassifier classifier;
    const bool par = state.range(1) != 0;
    for (auto _ : state) benchmark::DoNotOptimize(score_navigation(records, classifier, par));
    state.SetItemsProcessed(state.iterations() * state.range(0));
}

} // namespace

BENCHMARK(BM_ScoreSerial)->Arg(100)->Arg(1000)->Arg(10000);
BENCHMARK(BM_ScoreParallel)->Arg(100)->Arg(1000)->Arg(10000);
BENCHMARK(BM_NavigationEval)->Args({2000, 0})->Args({2000, 1});

BENCHMARK_MAIN();
