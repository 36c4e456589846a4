#include <benchmark/benchmark.h>

#include <numeric>

#include "uniam/clustering.hpp"
#include "uniam/trainer.hpp"

using namespace uniam;

namespace {

Dictionary random_dictionary(Rng& rng, std::size_t dim, std::size_t k) {
  Dictionary d;
  d.atoms = Matrix(dim, k);
  for (double& x : d.atoms.data()) x = rng.normal();
  d.atom_labels.resize(k);
  std::iota(d.atom_labels.begin(), d.atom_labels.end(), 0);
  return d;
}

void BM_SolveLasso(benchmark::State& state) {
  const auto dim = static_cast<std::size_t>(state.range(0));
  const auto k = static_cast<std::size_t>(state.range(1));
  Rng rng(1);
  const Dictionary d = normalize_dictionary(random_dictionary(rng, dim, k));
  Vector q(dim);
  for (double& x : q) x = rng.normal();
  for (auto _ : state) benchmark::DoNotOptimize(solve_lasso(q, d, 0.1));
}
BENCHMARK(BM_SolveLasso)->Args({16, 8})->Args({32, 8})->Args({64, 32});

void BM_KMeans(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng(2);
  std::vector<Vector> pts(n, Vector(16));
  for (auto& p : pts)
    for (double& x : p) x = rng.normal();
  for (auto _ : state) benchmark::DoNotOptimize(kmeans(pts, 8, 0));
}
BENCHMARK(BM_KMeans)->Arg(400)->Arg(1600);

void BM_RefreshSnapshot(benchmark::State& state) {
  const TrainData data = TrainData::from(generate(ScenarioSpec{}));
  const TrainConfig cfg;
  const Model model = create_model(cfg, data);
  for (auto _ : state) benchmark::DoNotOptimize(refresh_snapshot(model, data, cfg));
}
BENCHMARK(BM_RefreshSnapshot)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
