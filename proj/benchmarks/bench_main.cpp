#include <benchmark/benchmark.h>

#include <random>

#include "magmine/evaluation.hpp"
#include "magmine/mil_trainer.hpp"
#include "magmine/temporal.hpp"

using namespace magmine;

namespace {

Matrix random_matrix(int rows, int cols, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

ModelConfig bench_model(bool neck) { return ModelConfig{32, neck, 512, 128, 0.7}; }

void BM_NeckForward(benchmark::State& state) {
  const auto model = ScorerModel::initialized(bench_model(true), 1);
  const Matrix x = random_matrix(static_cast<int>(state.range(0)), 32, 2);
  for (auto _ : state) benchmark::DoNotOptimize(neck_forward(model, x));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_NeckForward)->Arg(32)->Arg(256)->Arg(1024);

void BM_HeadForward(benchmark::State& state) {
  const auto model = ScorerModel::initialized(bench_model(false), 1);
  const Matrix x = random_matrix(static_cast<int>(state.range(0)), 32, 3);
  for (auto _ : state) benchmark::DoNotOptimize(head_forward(model, x));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_HeadForward)->Arg(32)->Arg(256)->Arg(1024);

void BM_BatchLossBackward(benchmark::State& state) {
  const auto model = ScorerModel::initialized(bench_model(state.range(0) != 0), 1);
  std::vector<Matrix> abnormal, normal;
  for (int i = 0; i < 16; ++i) {
    abnormal.push_back(random_matrix(32, 32, 10 + i));
    normal.push_back(random_matrix(32, 32, 100 + i));
  }
  std::vector<double> grad(model.num_params());
  std::uint64_t step = 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(batch_loss(model, abnormal, normal, 3, 100.0, LossWeights{}, step++, grad));
  }
}
BENCHMARK(BM_BatchLossBackward)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

void BM_AggregateSegments(benchmark::State& state) {
  const Matrix x = random_matrix(static_cast<int>(state.range(0)), 32, 4);
  for (auto _ : state) benchmark::DoNotOptimize(aggregate_segments(x, 32));
}
BENCHMARK(BM_AggregateSegments)->Arg(64)->Arg(4096);

void BM_RocAuc(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  std::mt19937_64 rng(5);
  std::vector<double> s(n);
  std::vector<std::uint8_t> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    s[i] = std::uniform_real_distribution<double>(0, 1)(rng);
    y[i] = i % 5 == 0;
  }
  for (auto _ : state) {
    benchmark::DoNotOptimize(roc_auc(s, y));
    benchmark::DoNotOptimize(average_precision(s, y));
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_RocAuc)->Arg(1 << 12)->Arg(1 << 20);

}  // namespace
BENCHMARK_MAIN();
