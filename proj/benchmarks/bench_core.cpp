#include <benchmark/benchmark.h>

#include "ldml/engine.hpp"
#include "ldml/random.hpp"
#include "ldml/simlab.hpp"
#include "ldml/solvers.hpp"

using namespace ldml;

namespace {

std::vector<StepPoint> step_points(std::size_t n, bool monotone) {
  Rng rng(1);
  std::vector<StepPoint> pts(n);
  for (auto& p : pts) {
    p.y = rng.normal();
    p.weight = monotone ? rng.uniform() / static_cast<double>(n) : rng.uniform() - 0.4;
  }
  return pts;
}

void BM_StepBinarySearch(benchmark::State& state) {
  const auto pts = step_points(static_cast<std::size_t>(state.range(0)), true);
  for (auto _ : state) benchmark::DoNotOptimize(solve_step_equation(pts, -0.25, true));
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_StepBinarySearch)->RangeMultiplier(4)->Range(256, 65536)->Complexity();

void BM_StepScan(benchmark::State& state) {
  const auto pts = step_points(static_cast<std::size_t>(state.range(0)), false);
  for (auto _ : state) benchmark::DoNotOptimize(scan_step_equation(pts, -0.1));
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_StepScan)->RangeMultiplier(4)->Range(256, 65536)->Complexity();

void BM_GbtFit(benchmark::State& state) {
  const auto table = generate_dgp({static_cast<std::size_t>(state.range(0)), 3, NoiseConvention::kVariance});
  std::vector<double> labels(table.n());
  for (std::size_t i = 0; i < table.n(); ++i) labels[i] = table.treatment(i);
  const auto config = LearnerConfig::gbt(100, 3, 0.05, 20);
  for (auto _ : state) benchmark::DoNotOptimize(fit(config, table.covariates(), labels, 0));
}
BENCHMARK(BM_GbtFit)->Arg(1600)->Arg(6400)->Unit(benchmark::kMillisecond);

void BM_LdmlQuantile(benchmark::State& state) {
  const auto table = generate_dgp({static_cast<std::size_t>(state.range(0)), 4, NoiseConvention::kVariance});
  LdmlConfig config;
  config.learners = study_learners();
  config.splits = 1;
  const auto moment = quantile_moment(kReferenceGamma);
  for (auto _ : state) benchmark::DoNotOptimize(run_ldml(table, *moment, config));
}
BENCHMARK(BM_LdmlQuantile)->Arg(1600)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
