// Blocked OpenMP accumulation against the serial reference, local and global
// problems on a simulated Setting 1 Case 2 population.

#include <benchmark/benchmark.h>
#include <omp.h>

#include <map>

#include "recur/local_estimator.hpp"
#include "recur/simulation.hpp"

using namespace recur;

namespace {

const RiskData& population(int n) {
  static std::map<int, RiskData> cache;
  auto it = cache.find(n);
  if (it == cache.end()) {
    auto cfg = sim::default_config(sim::Setting::S1Case2);
    cfg.n = n;
    it = cache.emplace(n, sim::union_sample(sim::generate_population(cfg, 1), false)).first;
  }
  return it->second;
}

kernels::Problem problem(int n, bool global) {
  const auto& rd = population(n);
  const Estimator est(rd, rd, EstimatorOptions{});
  return global ? est.global_problem() : est.local_problem(9.0);
}

template <bool Serial, bool Global>
void BM_accumulate(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  const auto pb = problem(n, Global);
  const Eigen::VectorXd phi = Eigen::VectorXd::Constant(pb.q(), 0.05);
  for (auto _ : state) {
    auto s = Serial ? kernels::accumulate_serial(pb, phi) : kernels::accumulate(pb, phi);
    benchmark::DoNotOptimize(s.score.data());
  }
  state.counters["events"] = static_cast<double>(pb.events());
  state.counters["threads"] = Serial ? 1 : omp_get_max_threads();
}

}  // namespace

BENCHMARK(BM_accumulate<true, false>)->Name("local/serial")->Arg(10000)->Arg(50000)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_accumulate<false, false>)->Name("local/openmp")->Arg(10000)->Arg(50000)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_accumulate<true, true>)->Name("global/serial")->Arg(10000)->Arg(50000)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_accumulate<false, true>)->Name("global/openmp")->Arg(10000)->Arg(50000)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
