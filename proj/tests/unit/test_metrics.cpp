#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <set>
#include <vector>

#include "mian/data.hpp"
#include "mian/metrics.hpp"
#include "mian/nn.hpp"
#include "mian/rng.hpp"
#include "mian/tensor.hpp"
#include "mian/train.hpp"

using namespace mian;

namespace {

Tensor randn_tensor(Shape shape, Rng& rng, double sd = 1.0) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (double& v : t.data) v = rng.normal(0.0, sd);
  return t;
}

// Orthonormal square matrix from Gram-Schmidt on Gaussian columns.
Tensor random_rotation(std::size_t d, Rng& rng) {
  Tensor q = randn_tensor({d, d}, rng);
  for (std::size_t j = 0; j < d; ++j) {
    for (std::size_t k = 0; k < j; ++k) {
      double dot = 0.0;
      for (std::size_t i = 0; i < d; ++i) dot += q.at(i, j) * q.at(i, k);
      for (std::size_t i = 0; i < d; ++i) q.at(i, j) -= dot * q.at(i, k);
    }
    double norm = 0.0;
    for (std::size_t i = 0; i < d; ++i) norm += q.at(i, j) * q.at(i, j);
    norm = std::sqrt(norm);
    for (std::size_t i = 0; i < d; ++i) q.at(i, j) /= norm;
  }
  return q;
}

Tensor matmul_plain(const Tensor& a, const Tensor& b) {
  Tensor out = Tensor::zeros({a.rows(), b.cols()});
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double av = a.at(i, k);
      for (std::size_t j = 0; j < b.cols(); ++j) out.at(i, j) += av * b.at(k, j);
    }
  }
  return out;
}

}  // namespace

TEST_CASE("dense singular values agree with the power-iteration path") {
  for (Shape shape : {Shape{8, 8}, Shape{64, 64}, Shape{30, 10}, Shape{10, 30}}) {
    Rng rng(shape[0] * 100 + shape[1]);
    Tensor a = randn_tensor(shape, rng);
    auto svs = jacobi_singular_values(a);
    REQUIRE(svs.size() == std::min(shape[0], shape[1]));
    CHECK(std::is_sorted(svs.begin(), svs.end(), std::greater<>()));

    Tape tape;
    Tensor top = top_singular_value(tape, a);
    CHECK(std::abs(top.item() - svs[0]) <= 1e-8);
  }
  CHECK_THROWS_AS(jacobi_singular_values(Tensor::zeros({4})), MetricsError);
}

TEST_CASE("spectral entropy fixtures") {
  // Rank 1: every row is a multiple of one direction.
  Tensor rank1 = Tensor::zeros({10, 4});
  Rng rng(3);
  std::vector<double> dir{0.5, -1.0, 2.0, 0.25};
  for (std::size_t i = 0; i < 10; ++i) {
    const double c = rng.normal();
    for (std::size_t j = 0; j < 4; ++j) rank1.at(i, j) = c * dir[j];
  }
  CHECK(svd_entropy(rank1) <= 1e-12);

  // Identity: equal singular values, entropy at the ln(min dim) ceiling.
  Tensor eye = Tensor::zeros({4, 4});
  for (std::size_t i = 0; i < 4; ++i) eye.at(i, i) = 1.0;
  CHECK(svd_entropy(eye) == doctest::Approx(std::log(4.0)).epsilon(1e-12));

  Tensor a = randn_tensor({30, 5}, rng);
  const double h = svd_entropy(a);
  CHECK(h > 0.0);
  CHECK(h <= std::log(5.0) + 1e-12);

  // Right-rotation leaves the spectrum alone.
  Tensor rot = random_rotation(5, rng);
  CHECK(svd_entropy(matmul_plain(a, rot)) == doctest::Approx(h).epsilon(1e-10));

  SvdEntropyReport zero = svd_entropy_report(Tensor::zeros({6, 3}));
  CHECK(zero.zero_matrix);
  CHECK(zero.value == 0.0);
  CHECK(zero.values == 3);
}

TEST_CASE("domain probe splits are disjoint and per-domain") {
  Rng rng(11);
  Tensor reps = randn_tensor({60, 3}, rng);
  std::vector<int> domains(60);
  for (std::size_t i = 0; i < 60; ++i) domains[i] = static_cast<int>(i % 3) + 1;

  ProbeCfg cfg;
  cfg.steps = 50;
  DomainProbeFit fit = train_domain_probe(reps, domains, cfg);
  CHECK(fit.n_classes == 3);
  CHECK(fit.model.out_dim() == 3);
  CHECK(fit.heldout_mean_loglik <= 0.0);

  std::set<std::size_t> train(fit.train_idx.begin(), fit.train_idx.end());
  std::set<std::size_t> held(fit.held_idx.begin(), fit.held_idx.end());
  CHECK(train.size() + held.size() == 60);
  for (auto i : held) CHECK(train.count(i) == 0);

  CHECK_THROWS_AS(train_domain_probe(reps, std::vector<int>(60, 1), cfg), MetricsError);
  CHECK_THROWS_AS(train_domain_probe(reps, std::vector<int>(59, 1), cfg), MetricsError);
  CHECK_THROWS_AS(train_domain_probe(Tensor::zeros({8}), {1, 2}, cfg), MetricsError);
}

TEST_CASE("information probe saturates on one-hot domains and dies on shuffled ones") {
  Rng rng(21);
  const std::size_t per = 100;
  Tensor reps = Tensor::zeros({3 * per, 3});
  std::vector<int> domains(3 * per);
  for (std::size_t i = 0; i < 3 * per; ++i) {
    const std::size_t v = i / per;
    reps.at(i, v) = 1.0;
    domains[i] = static_cast<int>(v) + 1;
  }

  ProbeReport sat = empirical_mutual_information(reps, domains, {});
  CHECK(sat.value <= std::log(3.0));
  CHECK(sat.value >= std::log(3.0) - 0.05);
  CHECK(sat.auxiliary.at("log_n_domains") == doctest::Approx(std::log(3.0)).epsilon(1e-12));
  CHECK(!sat.to_json_line().empty());

  // Break the pairing: labels now carry no information about the rows.
  std::vector<int> shuffled = domains;
  for (std::size_t i = shuffled.size(); i > 1; --i) {
    std::swap(shuffled[i - 1], shuffled[rng.below(i)]);
  }
  ProbeReport dead = empirical_mutual_information(reps, shuffled, {});
  CHECK(dead.value <= 0.05);
}

TEST_CASE("information probe stays under the analytic value for gaussian domains") {
  // 1-d, two equiprobable domains at -mu and +mu, unit variance. The exact
  // value comes from trapezoid integration of the information integrand.
  const double mu = 1.0;
  auto pdf = [](double x, double c) {
    return std::exp(-0.5 * (x - c) * (x - c)) / std::sqrt(2.0 * std::acos(-1.0));
  };
  const double lo = -mu - 8.0, hi = mu + 8.0;
  const std::size_t n_grid = 20001;
  const double dx = (hi - lo) / static_cast<double>(n_grid - 1);
  double exact = 0.0;
  for (std::size_t i = 0; i < n_grid; ++i) {
    const double x = lo + dx * static_cast<double>(i);
    const double p1 = pdf(x, -mu), p2 = pdf(x, mu);
    const double mix = 0.5 * (p1 + p2);
    double term = 0.0;
    if (p1 > 0.0) term += 0.5 * p1 * std::log(p1 / mix);
    if (p2 > 0.0) term += 0.5 * p2 * std::log(p2 / mix);
    const double w = (i == 0 || i == n_grid - 1) ? 0.5 : 1.0;
    exact += w * term * dx;
  }

  Rng rng(31);
  const std::size_t per = 600;
  Tensor reps = Tensor::zeros({2 * per, 1});
  std::vector<int> domains(2 * per);
  for (std::size_t i = 0; i < 2 * per; ++i) {
    const bool second = i >= per;
    reps.at(i, 0) = rng.normal(second ? mu : -mu, 1.0);
    domains[i] = second ? 2 : 1;
  }

  ProbeReport rep = empirical_mutual_information(reps, domains, {});
  CHECK(rep.value <= exact + 0.05);
  CHECK(rep.value >= exact - 0.15);
}

TEST_CASE("proxy distance separates shifted domains and ignores identical ones") {
  Rng rng(41);
  Tensor near_a = randn_tensor({1024, 4}, rng);
  Tensor near_b = randn_tensor({1024, 4}, rng);
  ProbeReport same = proxy_a_distance(near_a, near_b, {});
  CHECK(same.value >= 0.0);
  CHECK(same.value <= 0.15);

  Tensor far_a = randn_tensor({512, 4}, rng);
  Tensor far_b = randn_tensor({512, 4}, rng);
  for (std::size_t i = 0; i < 512; ++i) {
    far_a.at(i, 0) -= 3.0;
    far_b.at(i, 0) += 3.0;
  }
  ProbeReport far = proxy_a_distance(far_a, far_b, {});
  CHECK(far.value >= 1.9);
  CHECK(far.value <= 2.0);

  CHECK_THROWS_AS(proxy_a_distance(near_a, randn_tensor({10, 5}, rng), {}), MetricsError);
}

TEST_CASE("mixture divergence from decisions hits both extremes") {
  Rng rng(51);
  const std::size_t per = 50;
  Tensor reps = Tensor::zeros({2 * per, 1});
  std::vector<int> domains(2 * per);
  for (std::size_t i = 0; i < 2 * per; ++i) {
    const bool second = i >= per;
    reps.at(i, 0) = (second ? 1.0 : -1.0) + rng.normal(0.0, 0.05);
    domains[i] = second ? 2 : 1;
  }

  // Linear head that thresholds at zero: perfect separation, maximal score.
  Mlp perfect = init_mlp({1, 2}, 1, "h");
  perfect.layers[0].w = Tensor::from({1, 2}, {-1.0, 1.0});
  perfect.layers[0].b = Tensor::zeros({2});
  ProbeReport top = empirical_hdiv_mixture(reps, domains, perfect);
  CHECK(top.value == doctest::Approx(2.0).epsilon(1e-12));

  // Constant head: one-vs-rest hit and false-alarm rates cancel exactly.
  Mlp constant = init_mlp({1, 2}, 1, "h");
  constant.layers[0].w = Tensor::zeros({1, 2});
  constant.layers[0].b = Tensor::from({2}, {1.0, 0.0});
  ProbeReport flat = empirical_hdiv_mixture(reps, domains, constant);
  CHECK(std::abs(flat.value) <= 1e-12);

  ProbeCfg cfg;
  cfg.steps = 300;
  ProbeReport fresh = empirical_hdiv_mixture_fresh(reps, domains, cfg);
  CHECK(fresh.value >= 1.9);
  CHECK(fresh.value <= 2.0);

  CHECK_THROWS_AS(empirical_hdiv_mixture(reps, std::vector<int>(2 * per, 1), perfect),
                  MetricsError);
}

TEST_CASE("gradient variance probe collapses when batches are forced identical") {
  auto domains = gen_rotated_moons(20, {0.0, 30.0, 60.0}, 0.1, 0.5, 5);
  TrainConfig tc;
  tc.arm = Arm::mian;
  tc.m = 10;  // equals each domain's train count, so every draw is the full pool
  tc.latent_dim = 6;
  tc.encoder_hidden = {12};
  tc.classifier_hidden = {8};
  tc.disc_hidden = {12};
  Rng rng(7);
  ModelBundle bundle = build_bundle(tc, 2, 2, 3, rng);

  GradVarCfg gv;
  gv.batches = 16;
  ProbeReport rep = gradient_variance_probe(bundle, domains, tc, gv);
  CHECK(rep.value <= 1e-20);

  GradVarCfg one;
  one.batches = 1;
  CHECK_THROWS_AS(gradient_variance_probe(bundle, domains, tc, one), MetricsError);
}

TEST_CASE("gradient variance probe scales inversely with batch size") {
  auto domains = gen_rotated_moons(1000, {0.0, 30.0, 60.0}, 0.12, 0.2, 9);
  double sum_small = 0.0, sum_large = 0.0;
  for (std::uint64_t seed = 1; seed <= 8; ++seed) {
    TrainConfig tc;
    tc.arm = Arm::mian;
    tc.seed = seed;
    tc.latent_dim = 8;
    tc.encoder_hidden = {16};
    tc.classifier_hidden = {8};
    tc.disc_hidden = {16};
    Rng rng(100 + seed);
    ModelBundle bundle = build_bundle(tc, 2, 2, 3, rng);

    GradVarCfg gv;
    gv.batches = 64;
    gv.seed = seed;
    tc.m = 8;
    const double v_small = gradient_variance_probe(bundle, domains, tc, gv).value;
    tc.m = 16;
    const double v_large = gradient_variance_probe(bundle, domains, tc, gv).value;
    CHECK(v_small > v_large);
    sum_small += v_small;
    sum_large += v_large;
  }
  const double ratio = sum_small / sum_large;
  CHECK(ratio >= 1.6);
  CHECK(ratio <= 2.4);
}

TEST_CASE("gradient variance probe rejects bundles without an adversarial term") {
  auto domains = gen_rotated_moons(40, {0.0, 45.0}, 0.1, 0.25, 3);
  TrainConfig tc;
  tc.arm = Arm::source_only;
  tc.latent_dim = 4;
  tc.encoder_hidden = {8};
  tc.classifier_hidden = {8};
  Rng rng(2);
  ModelBundle bundle = build_bundle(tc, 2, 2, 2, rng);
  CHECK_THROWS_AS(gradient_variance_probe(bundle, domains, tc, {}), MetricsError);
}
