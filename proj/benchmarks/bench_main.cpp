#include <benchmark/benchmark.h>

#include <string>
#include <vector>

#include "gqa/planner.hpp"
#include "gqa/prompts.hpp"
#include "gqa/rng.hpp"
#include "gqa/score.hpp"

namespace {

gqa::Dataset make_dataset(std::size_t n) {
  gqa::Dataset ds;
  ds.name = "bench";
  ds.task = gqa::TaskKind::multiple_choice;
  for (std::size_t i = 0; i < n; ++i) {
    gqa::QueryRecord r;
    r.id = "q" + std::to_string(i);
    r.task = ds.task;
    r.prompt_body = "Which of the following is the most likely diagnosis for patient " +
                    std::to_string(i) + "?";
    for (const char* l : {"A", "B", "C", "D"}) r.options.push_back({l, std::string("option ") + l});
    r.gold = std::string(1, static_cast<char>('A' + i % 4));
    ds.records.push_back(std::move(r));
  }
  return ds;
}

void BM_Plan(benchmark::State& state) {
  const auto ds = make_dataset(static_cast<std::size_t>(state.range(0)));
  const int qgs = static_cast<int>(state.range(1));
  const gqa::PartitionSpec spec{qgs, 3, 42, gqa::default_additional_pool_size(ds.size(), 30)};
  for (auto _ : state) benchmark::DoNotOptimize(gqa::plan(ds, spec));
  state.SetItemsProcessed(state.iterations() * static_cast<long>(ds.size()) * 3);
}
BENCHMARK(BM_Plan)->Args({1000, 1})->Args({1000, 30})->Args({10000, 30});

void BM_Render(benchmark::State& state) {
  const auto ds = make_dataset(200);
  const int qgs = static_cast<int>(state.range(0));
  const auto p = gqa::plan(ds, {qgs, 1, 1, gqa::default_additional_pool_size(ds.size(), 30)});
  const auto profile =
      gqa::default_profile(gqa::TaskKind::multiple_choice, gqa::ModelKind::aligned);
  std::size_t i = 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(gqa::render(p.groups[i], profile));
    i = (i + 1) % p.groups.size();
  }
}
BENCHMARK(BM_Render)->Arg(1)->Arg(10)->Arg(30);

void BM_CorpusBleu(benchmark::State& state) {
  const std::size_t n = static_cast<std::size_t>(state.range(0));
  std::vector<std::string> hyps, refs;
  gqa::Rng rng(7);
  const std::vector<std::string> words = {"the", "patient", "was", "given", "a", "dose", "of",
                                          "insulin", "before", "surgery", ",", "and", "recovered", "."};
  for (std::size_t s = 0; s < n; ++s) {
    std::string h, r;
    for (int w = 0; w < 20; ++w) {
      h += words[gqa::uniform_below(rng, words.size())] + " ";
      r += words[gqa::uniform_below(rng, words.size())] + " ";
    }
    hyps.push_back(h);
    refs.push_back(r);
  }
  for (auto _ : state) benchmark::DoNotOptimize(gqa::corpus_bleu(hyps, refs));
  state.SetItemsProcessed(state.iterations() * static_cast<long>(n));
}
BENCHMARK(BM_CorpusBleu)->Arg(100)->Arg(1000);

}  // namespace

BENCHMARK_MAIN();
