// Parallel kernels against their serial references.

#include <benchmark/benchmark.h>

#include <map>

#include "sdeid/integrate.hpp"
#include "sdeid/rng.hpp"
#include "sdeid/systems.hpp"
#include "sdeid/train.hpp"

using namespace sdeid;

namespace {

const Trajectory& sl_data(std::size_t steps) {
  static std::map<std::size_t, Trajectory> cache;
  auto it = cache.find(steps);
  if (it == cache.end())
    it = cache.emplace(steps, simulate(SLorenzDynamics(SLorenzSystem{}), slorenz_sim_config(steps, 1e-3, 5))).first;
  return it->second;
}

const SdeModel& sl_model() {
  static const SdeModel m = slorenz_as_model(SLorenzSystem{}, true).model;
  return m;
}

void BM_LossReference(benchmark::State& state) {
  const auto& traj = sl_data(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(nll_loss_reference(sl_model(), traj).total);
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(traj.pairs()));
}

void BM_LossParallel(benchmark::State& state) {
  const auto& traj = sl_data(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(nll_loss(sl_model(), traj).total);
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(traj.pairs()));
}

void BM_GradientReference(benchmark::State& state) {
  const auto& traj = sl_data(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(nll_gradient_reference(sl_model(), traj).a1(0, 0));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(traj.pairs()));
}

void BM_GradientParallel(benchmark::State& state) {
  const auto& traj = sl_data(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(nll_gradient(sl_model(), traj).a1(0, 0));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(traj.pairs()));
}

void BM_MomentsReference(benchmark::State& state) {
  const GbmSystem g;
  const SdeModel m = gbm_as_model(g);
  const ModelDynamics dyn(m);
  const SimConfig cfg = gbm_sim_config(g, 1000, 1e-3, 3);
  for (auto _ : state)
    benchmark::DoNotOptimize(
        ensemble_moments_reference(dyn, cfg, static_cast<std::size_t>(state.range(0)), 10).mean.back()[0]);
}

void BM_MomentsParallel(benchmark::State& state) {
  const GbmSystem g;
  const SdeModel m = gbm_as_model(g);
  const ModelDynamics dyn(m);
  const SimConfig cfg = gbm_sim_config(g, 1000, 1e-3, 3);
  for (auto _ : state)
    benchmark::DoNotOptimize(ensemble_moments(dyn, cfg, static_cast<std::size_t>(state.range(0)), 10).mean.back()[0]);
}

}  // namespace

BENCHMARK(BM_LossReference)->Arg(10000)->Arg(100000)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_LossParallel)->Arg(10000)->Arg(100000)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_GradientReference)->Arg(10000)->Arg(100000)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_GradientParallel)->Arg(10000)->Arg(100000)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_MomentsReference)->Arg(1000)->Arg(10000)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_MomentsParallel)->Arg(1000)->Arg(10000)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
