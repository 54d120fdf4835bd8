#include <benchmark/benchmark.h>

#include <vector>

#include "mian/config.hpp"
#include "mian/data.hpp"
#include "mian/train.hpp"

namespace {

std::vector<mian::DomainDataset> tiny_domains(std::size_t n_sources) {
  mian::DataSpec spec;
  spec.kind = mian::DataSpec::Kind::moons;
  spec.n_per_domain = 128;
  spec.angles_deg.clear();
  for (std::size_t v = 0; v <= n_sources; ++v)
    spec.angles_deg.push_back(15.0 * static_cast<double>(v));
  spec.test_fraction = 0.25;
  return mian::build_datasets(spec);
}

mian::TrainConfig tiny_train(mian::Arm arm) {
  mian::TrainConfig t;
  t.arm = arm;
  t.steps = 5;
  t.m = 8;
  t.latent_dim = 8;
  t.encoder_hidden = {16};
  t.classifier_hidden = {16};
  t.disc_hidden = {16};
  t.metrics_every = 0;
  t.entropy_in_metrics = false;
  return t;
}

// Five optimization steps end to end, including model setup; argument is the
// number of source domains.
void bm_unified_steps(benchmark::State& state) {
  const auto domains = tiny_domains(static_cast<std::size_t>(state.range(0)));
  const mian::TrainConfig cfg = tiny_train(mian::Arm::mian);
  for (auto _ : state) {
    benchmark::DoNotOptimize(mian::train_arm(domains, cfg).records.back().step);
  }
}
BENCHMARK(bm_unified_steps)->Arg(2)->Arg(4)->Arg(6);

void bm_pairwise_steps(benchmark::State& state) {
  const auto domains = tiny_domains(static_cast<std::size_t>(state.range(0)));
  const mian::TrainConfig cfg = tiny_train(mian::Arm::multi_disc);
  for (auto _ : state) {
    benchmark::DoNotOptimize(mian::train_arm(domains, cfg).records.back().step);
  }
}
BENCHMARK(bm_pairwise_steps)->Arg(2)->Arg(4)->Arg(6);

void bm_source_only_steps(benchmark::State& state) {
  const auto domains = tiny_domains(static_cast<std::size_t>(state.range(0)));
  const mian::TrainConfig cfg = tiny_train(mian::Arm::source_only);
  for (auto _ : state) {
    benchmark::DoNotOptimize(mian::train_arm(domains, cfg).records.back().step);
  }
}
BENCHMARK(bm_source_only_steps)->Arg(2)->Arg(4);

}  // namespace

BENCHMARK_MAIN();
