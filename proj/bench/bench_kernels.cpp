// Serial reference vs OpenMP for the hot paths: dense matmul, ranking
// evaluation and the per-batch gradient. Run with OMP_NUM_THREADS set.

#include <benchmark/benchmark.h>

#include <random>

#include "sgmpt/fusion.hpp"
#include "sgmpt/kernels.hpp"
#include "sgmpt/ranking.hpp"
#include "sgmpt/synthetic.hpp"
#include "sgmpt/training.hpp"

using namespace sgmpt;

namespace {

num::Tensor gaussian(std::size_t r, std::size_t c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  num::Tensor t(r, c);
  for (double& v : t.values()) v = g(rng);
  return t;
}

template <void (*Kernel)(const num::Tensor&, const num::Tensor&, num::Tensor&)>
void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const num::Tensor a = gaussian(n, n, 1);
  const num::Tensor b = gaussian(n, n, 2);
  num::Tensor c(n, n);
  for (auto _ : state) {
    Kernel(a, b, c);
    benchmark::DoNotOptimize(c.values().data());
  }
  state.SetItemsProcessed(state.iterations() * std::int64_t(n * n * n));
}
BENCHMARK(BM_Matmul<num::kernels::serial::matmul>)->Name("matmul/serial")->Arg(64)->Arg(128)->Arg(256);
BENCHMARK(BM_Matmul<num::kernels::omp::matmul>)->Name("matmul/omp")->Arg(64)->Arg(128)->Arg(256);

eval::Scorer random_scorer(std::size_t n) {
  return [n](const Triple& q, eval::Direction) {
    std::mt19937_64 rng(q.head.value * 7919u + q.tail.value);
    std::normal_distribution<double> g;
    std::vector<double> s(n);
    for (double& x : s) x = g(rng);
    return s;
  };
}

template <bool Parallel>
void BM_Evaluate(benchmark::State& state) {
  const std::size_t n = 2000;
  std::mt19937_64 rng(3);
  std::vector<Triple> q;
  for (int i = 0; i < 500; ++i) q.push_back({EntityId(rng() % n), RelationId(0u), EntityId(rng() % n)});
  const eval::FilterIndex filter(q);
  for (auto _ : state) {
    const auto r = Parallel ? eval::evaluate_parallel(q, random_scorer(n), filter, n)
                            : eval::evaluate_serial(q, random_scorer(n), filter, n);
    benchmark::DoNotOptimize(r.filtered.mean_rank);
  }
}
BENCHMARK(BM_Evaluate<false>)->Name("evaluate/serial")->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Evaluate<true>)->Name("evaluate/omp")->Unit(benchmark::kMillisecond);

template <mpt::Schedule S>
void BM_BatchGradient(benchmark::State& state) {
  kg::SyntheticConfig s;
  s.num_entities = 100;
  s.num_relations = 10;
  s.num_triples = 600;
  const kg::MultimodalKG mkg = kg::generate_synthetic_mkg(s, 1);
  const kg::Vocabulary vocab = kg::build_vocabulary(mkg);
  mpt::ModelConfig mc;
  mc.dim = 32;
  mc.heads = 2;
  mc.text_layers = mc.vision_layers = mc.fusion_layers = 1;
  mc.ffn_dim = 64;
  mc = mpt::fit_to_dataset(mc, mkg, vocab);
  fusion::FusionModel model(mpt::Backbone(mc), gaussian(mkg.num_entities(), 32, 5), fusion::FusionConfig{});
  const auto queries = fusion::finetune_queries(mkg.train, mkg, vocab);
  const std::span<const kg::TokenizedQuery> batch(queries.data(), 32);
  const mpt::QueryLoss loss = model.loss_function(mkg);
  for (auto _ : state) benchmark::DoNotOptimize(mpt::batch_gradient(model.params(), batch, loss, S));
}
BENCHMARK(BM_BatchGradient<mpt::Schedule::Serial>)->Name("batch_gradient/serial")->Unit(benchmark::kMillisecond);
BENCHMARK(BM_BatchGradient<mpt::Schedule::Parallel>)->Name("batch_gradient/omp")->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
