#include <benchmark/benchmark.h>

#include <vector>

#include "mian/oracle.hpp"
#include "mian/rng.hpp"

namespace {

std::vector<double> random_dist(std::size_t k, mian::Rng& rng) {
  std::vector<double> p(k);
  double total = 0.0;
  for (double& x : p) {
    x = rng.exponential();
    total += x;
  }
  for (double& x : p) x /= total;
  return p;
}

void bm_hdiv_closed(benchmark::State& state) {
  const auto k = static_cast<std::size_t>(state.range(0));
  mian::Rng rng(5);
  const auto p = random_dist(k, rng);
  const auto q = random_dist(k, rng);
  for (auto _ : state) {
    benchmark::DoNotOptimize(mian::hdiv_exhaustive(p, q));
  }
}
BENCHMARK(bm_hdiv_closed)->Arg(12)->Arg(4096);

void bm_hdiv_enumerated(benchmark::State& state) {
  const auto k = static_cast<std::size_t>(state.range(0));
  mian::Rng rng(6);
  const auto p = random_dist(k, rng);
  const auto q = random_dist(k, rng);
  for (auto _ : state) {
    benchmark::DoNotOptimize(mian::hdiv_enumerated(p, q));
  }
}
BENCHMARK(bm_hdiv_enumerated)->Arg(8)->Arg(12)->Arg(16);

void bm_mi_exact(benchmark::State& state) {
  const mian::DiscreteJoint joint = mian::random_joint({64, 8}, 7);
  for (auto _ : state) {
    benchmark::DoNotOptimize(mian::mi_exact(joint));
  }
}
BENCHMARK(bm_mi_exact);

void bm_variational_bound_check(benchmark::State& state) {
  const mian::DiscreteJoint joint = mian::random_joint({8, 5}, 8);
  for (auto _ : state) {
    benchmark::DoNotOptimize(mian::verify_theorem2(joint, 100, 9, 1e-9).pass);
  }
}
BENCHMARK(bm_variational_bound_check);

}  // namespace

BENCHMARK_MAIN();
