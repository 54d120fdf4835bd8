#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "mian/nn.hpp"
#include "mian/rng.hpp"

using namespace mian;

namespace {

std::string read_bytes(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  REQUIRE(f.good());
  return std::string(std::istreambuf_iterator<char>(f), {});
}

std::filesystem::path scratch_dir() {
  auto d = std::filesystem::temp_directory_path() / "mian_test_nn";
  std::filesystem::create_directories(d);
  return d;
}

}  // namespace

TEST_CASE("init is deterministic per seed and sized by dims") {
  Mlp a = init_mlp({3, 8, 2}, 5);
  Mlp b = init_mlp({3, 8, 2}, 5);
  Mlp c = init_mlp({3, 8, 2}, 6);
  CHECK(a.in_dim() == 3);
  CHECK(a.out_dim() == 2);
  CHECK(a.param_count() == 3 * 8 + 8 + 8 * 2 + 2);
  REQUIRE(a.layers.size() == 2);
  CHECK(a.layers[0].relu_out);
  CHECK(!a.layers[1].relu_out);

  auto pa = a.params(), pb = b.params(), pc = c.params();
  bool same = true, diff = false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    same = same && (pa[i]->data == pb[i]->data);
    diff = diff || (pa[i]->data != pc[i]->data);
  }
  CHECK(same);
  CHECK(diff);

  // Parameters become differentiable leaves at first tracked use, not at init.
  for (const Tensor* t : pa) CHECK(!t->requires_grad);
  Tape tape;
  a.forward(tape, Tensor::zeros({1, 3}));
  for (const Tensor* t : pa) CHECK(t->requires_grad);

  Rng rng(1);
  CHECK_THROWS(init_mlp({4}, rng));
}

TEST_CASE("forward equals the explicit affine/relu chain") {
  Mlp net = init_mlp({2, 3, 2}, 9);
  Tensor x = Tensor::from({2, 2}, {0.3, -1.2, 2.0, 0.7});

  Tape tape;
  Tensor out = net.forward(tape, x);

  for (std::size_t i = 0; i < 2; ++i) {
    double h[3];
    for (std::size_t j = 0; j < 3; ++j) {
      double s = net.layers[0].b.data[j];
      for (std::size_t k = 0; k < 2; ++k) s += x.at(i, k) * net.layers[0].w.at(k, j);
      h[j] = s > 0 ? s : 0;
    }
    for (std::size_t j = 0; j < 2; ++j) {
      double s = net.layers[1].b.data[j];
      for (std::size_t k = 0; k < 3; ++k) s += h[k] * net.layers[1].w.at(k, j);
      CHECK(out.at(i, j) == doctest::Approx(s).epsilon(1e-14));
    }
  }

  Tensor inf = net.infer(x);
  for (std::size_t i = 0; i < inf.size(); ++i) CHECK(inf.data[i] == out.data[i]);
}

TEST_CASE("forward_frozen keeps parameters off the tape") {
  Mlp net = init_mlp({2, 4, 1}, 3);
  Tensor x = Tensor::from({3, 2}, {1, 2, 3, 4, 5, 6});
  x.requires_grad = true;

  Tape tape;
  tape.leaf(x);
  Tensor out = net.forward_frozen(tape, x);
  tape.backward(sum(tape, out));

  CHECK(!tape.grad(x).empty());
  // The parameters were never registered, so the tape refuses to answer.
  for (Tensor* p : net.params()) CHECK_THROWS_AS((void)tape.grad(*p), TensorError);
}

TEST_CASE("adam's first step moves a unit-gradient parameter by about lr") {
  Mlp net = init_mlp({1, 1}, 2);
  OptimizerState opt = make_adam(1e-3);
  Tensor& w = net.layers[0].w;
  Tensor& b = net.layers[0].b;
  double w0 = w.data[0];

  w.grad = {1.0};
  b.grad = {1.0};
  opt_step(opt, net.params());
  CHECK(std::abs(w.data[0] - (w0 - 1e-3)) < 1e-9);
  CHECK(w.grad.empty());
  CHECK(opt.step_count == 1);
}

TEST_CASE("sgd momentum follows the velocity recurrence") {
  Mlp net = init_mlp({1, 1}, 2);
  OptimizerState opt = make_sgd_momentum(0.1, 0.5);
  Tensor& w = net.layers[0].w;
  Tensor& b = net.layers[0].b;
  double w0 = w.data[0];

  w.grad = {2.0};
  b.grad = {0.0};
  opt_step(opt, net.params());
  // v1 = 0.5 * 0 + 2
  CHECK(w.data[0] == doctest::Approx(w0 - 0.1 * 2.0).epsilon(1e-15));

  w.grad = {1.0};
  b.grad = {0.0};
  opt_step(opt, net.params());
  // v2 = 0.5 * 2 + 1
  CHECK(w.data[0] == doctest::Approx(w0 - 0.1 * 2.0 - 0.1 * 2.0).epsilon(1e-14));
}

TEST_CASE("opt_step demands one gradient per parameter") {
  Mlp net = init_mlp({2, 2}, 4);
  OptimizerState opt = make_adam(1e-3);
  net.layers[0].w.grad = std::vector<double>(4, 1.0);
  // bias gradient missing
  CHECK_THROWS(opt_step(opt, net.params()));
}

TEST_CASE("checkpoints round-trip bit exactly") {
  auto dir = scratch_dir();
  std::string path = (dir / "ckpt.bin").string();

  Mlp net = init_mlp({3, 5, 4}, 77, "enc");
  net.layers[0].w.data[0] = 0x1.fffffffffffffp-3;  // full-precision payload
  save_checkpoint(path, net.named_params());

  auto loaded = load_checkpoint(path);
  REQUIRE(loaded.size() == 4);
  CHECK(loaded[0].first == "enc.0.w");
  CHECK(loaded[0].second.data == net.layers[0].w.data);
  CHECK(loaded[3].second.shape == net.layers[1].b.shape);

  std::string again = (dir / "ckpt2.bin").string();
  std::vector<std::pair<std::string, const Tensor*>> reref;
  for (auto& [name, t] : loaded) reref.emplace_back(name, &t);
  save_checkpoint(again, reref);
  CHECK(read_bytes(path) == read_bytes(again));
}

TEST_CASE("checkpoint loader rejects garbage") {
  auto dir = scratch_dir();
  std::string path = (dir / "bad.bin").string();
  {
    std::ofstream f(path, std::ios::binary);
    f << "NOPE";
  }
  CHECK_THROWS_AS(load_checkpoint(path), CheckpointError);

  Mlp net = init_mlp({2, 2}, 1);
  std::string good = (dir / "good.bin").string();
  save_checkpoint(good, net.named_params());
  std::string bytes = read_bytes(good);
  std::string trunc = (dir / "trunc.bin").string();
  {
    std::ofstream f(trunc, std::ios::binary);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size() - 7));
  }
  CHECK_THROWS_AS(load_checkpoint(trunc), CheckpointError);
  CHECK_THROWS_AS(load_checkpoint((dir / "missing.bin").string()), CheckpointError);
}
