#include <benchmark/benchmark.h>

#include "mian/metrics.hpp"
#include "mian/nn.hpp"
#include "mian/rng.hpp"
#include "mian/tensor.hpp"

namespace {

mian::Tensor randn(const mian::Shape& shape, mian::Rng& rng) {
  mian::Tensor t = mian::Tensor::zeros(shape);
  for (double& x : t.data) x = rng.normal();
  return t;
}

void bm_matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  mian::Rng rng(1);
  mian::Tensor a = randn({n, n}, rng);
  mian::Tensor b = randn({n, n}, rng);
  for (auto _ : state) {
    mian::Tape tape;
    mian::Tensor c = mian::matmul(tape, a, b);
    benchmark::DoNotOptimize(c.data.data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations()) *
                          static_cast<std::int64_t>(n * n * n));
}
BENCHMARK(bm_matmul)->Arg(32)->Arg(64)->Arg(128);

void bm_mlp_forward_backward(benchmark::State& state) {
  const auto batch = static_cast<std::size_t>(state.range(0));
  mian::Rng rng(2);
  mian::Mlp mlp = mian::init_mlp({16, 64, 64, 16}, rng.bits());
  mian::Tensor x = randn({batch, 16}, rng);
  for (auto _ : state) {
    mian::Tape tape;
    mian::Tensor loss = mian::mean(tape, mlp.forward(tape, x));
    tape.backward(loss);
    for (mian::Tensor* p : mlp.params()) tape.export_grad(*p);
    benchmark::DoNotOptimize(mlp.layers[0].w.grad.data());
  }
}
BENCHMARK(bm_mlp_forward_backward)->Arg(16)->Arg(64)->Arg(256);

void bm_top_singular_value(benchmark::State& state) {
  const auto rows = static_cast<std::size_t>(state.range(0));
  mian::Rng rng(3);
  mian::Tensor z = randn({rows, 16}, rng);
  for (auto _ : state) {
    mian::Tape tape;
    mian::Tensor s = mian::top_singular_value(tape, z);
    tape.backward(s);
    benchmark::DoNotOptimize(s.item());
  }
}
BENCHMARK(bm_top_singular_value)->Arg(64)->Arg(256);

void bm_jacobi_entropy(benchmark::State& state) {
  const auto rows = static_cast<std::size_t>(state.range(0));
  mian::Rng rng(4);
  mian::Tensor z = randn({rows, 16}, rng);
  for (auto _ : state) {
    benchmark::DoNotOptimize(mian::svd_entropy(z));
  }
}
BENCHMARK(bm_jacobi_entropy)->Arg(64)->Arg(256);

}  // namespace

BENCHMARK_MAIN();
