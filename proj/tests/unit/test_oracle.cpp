#include <doctest.h>

#include <cmath>
#include <vector>

#include "mian/oracle.hpp"
#include "mian/rng.hpp"

using namespace mian;

TEST_CASE("exact mutual information agrees with the entropy identity") {
  for (std::uint64_t seed : {1ull, 2ull, 3ull, 4ull, 5ull}) {
    DiscreteJoint zv = random_joint({6, 4}, seed);
    std::vector<double> pz(6, 0.0), pv(4, 0.0);
    for (std::size_t z = 0; z < 6; ++z) {
      for (std::size_t v = 0; v < 4; ++v) {
        pz[z] += zv.at2(z, v);
        pv[v] += zv.at2(z, v);
      }
    }
    double want = entropy(pz) + entropy(pv) - entropy(zv.p);
    CHECK(mi_exact(zv) == doctest::Approx(want).epsilon(1e-12));
    CHECK(mi_exact(zv) >= 0.0);
  }

  // Product joint: independence, zero information.
  DiscreteJoint indep;
  indep.sizes = {3, 2};
  std::vector<double> pz{0.5, 0.3, 0.2}, pv{0.6, 0.4};
  for (double z : pz) {
    for (double v : pv) indep.p.push_back(z * v);
  }
  indep.validate();
  CHECK(std::abs(mi_exact(indep)) <= 1e-15);

  // Deterministic uniform pairing: information equals the full entropy.
  DiscreteJoint diag;
  diag.sizes = {4, 4};
  diag.p.assign(16, 0.0);
  for (std::size_t i = 0; i < 4; ++i) diag.p[i * 4 + i] = 0.25;
  diag.validate();
  CHECK(mi_exact(diag) == doctest::Approx(std::log(4.0)).epsilon(1e-12));
}

TEST_CASE("random joints are valid, seeded, and rejected when malformed") {
  DiscreteJoint a = random_joint({5, 3}, 42);
  DiscreteJoint b = random_joint({5, 3}, 42);
  DiscreteJoint c = random_joint({5, 3}, 43);
  CHECK(a.p == b.p);
  CHECK(a.p != c.p);
  a.validate();

  DiscreteJoint bad = a;
  bad.p[0] += 0.5;
  CHECK_THROWS_AS(bad.validate(), OracleError);
  DiscreteJoint neg = a;
  neg.p[0] = -neg.p[0];
  CHECK_THROWS_AS(neg.validate(), OracleError);
  DiscreteJoint short_p = a;
  short_p.p.pop_back();
  CHECK_THROWS_AS(short_p.validate(), OracleError);
}

TEST_CASE("variational bound is tight at the posterior and never exceeded") {
  for (std::uint64_t seed : {7ull, 8ull, 9ull}) {
    DiscreteJoint zv = random_joint({8, 5}, seed);
    Theorem2Report rep = verify_theorem2(zv, 100, seed, 1e-9);
    CHECK(rep.pass);
    CHECK(rep.deviation <= 1e-9);
    CHECK(rep.max_violation <= 1e-9);
    CHECK(rep.random_h == 100);
    CHECK(rep.value_at_posterior == doctest::Approx(rep.mi).epsilon(1e-9));
  }
}

TEST_CASE("divergence closed form matches subset enumeration") {
  std::vector<double> p{0.5, 0.5, 0.0, 0.0}, q{0.0, 0.0, 0.5, 0.5};
  CHECK(hdiv_exhaustive(p, q) == doctest::Approx(2.0).epsilon(1e-15));
  CHECK(hdiv_enumerated(p, q) == doctest::Approx(2.0).epsilon(1e-15));
  CHECK(hdiv_exhaustive(p, p) == 0.0);

  Rng rng(101);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<double> a(10), b(10);
    double sa = 0, sb = 0;
    for (std::size_t i = 0; i < 10; ++i) {
      a[i] = rng.exponential();
      b[i] = rng.exponential();
      sa += a[i];
      sb += b[i];
    }
    for (std::size_t i = 0; i < 10; ++i) {
      a[i] /= sa;
      b[i] /= sb;
    }
    double closed = hdiv_exhaustive(a, b);
    CHECK(std::abs(closed - hdiv_enumerated(a, b)) <= 1e-12);
    CHECK(closed >= 0.0);
    CHECK(closed <= 2.0);
  }
}

TEST_CASE("mixture divergence average never beats the pairwise average") {
  Rng rng(55);
  auto simplex = [&](std::size_t k) {
    std::vector<double> v(k);
    double s = 0;
    for (auto& x : v) {
      x = rng.exponential();
      s += x;
    }
    for (auto& x : v) x /= s;
    return v;
  };

  for (std::size_t n_sources : {1ull, 2ull, 3ull, 5ull}) {
    std::vector<std::vector<double>> domains;
    for (std::size_t v = 0; v < n_sources + 1; ++v) domains.push_back(simplex(8));
    Lemma2Report rep = verify_lemma2(domains, 1e-12);
    CHECK(rep.pass);
    CHECK(rep.lhs <= rep.rhs + 1e-12);
    if (n_sources == 1) CHECK(std::abs(rep.lhs - rep.rhs) <= 1e-12);
  }

  // Identical domains: both sides vanish.
  std::vector<double> u(8, 0.125);
  Lemma2Report same = verify_lemma2({u, u, u}, 1e-12);
  CHECK(same.pass);
  CHECK(std::abs(same.lhs) <= 1e-15);
  CHECK(std::abs(same.rhs) <= 1e-15);
}

TEST_CASE("information bound holds with the stated gap identity") {
  Rng rng(9);
  for (std::uint64_t seed : {21ull, 22ull, 23ull}) {
    DiscreteJoint zxv = random_joint({5, 4, 3}, seed);
    std::vector<double> r(5);
    double s = 0;
    for (auto& x : r) {
      x = rng.exponential();
      s += x;
    }
    for (auto& x : r) x /= s;

    Theorem3Report rep = verify_theorem3(zxv, r, 1e-9);
    CHECK(rep.pass);
    CHECK(std::abs(rep.lhs - rep.lhs_direct) <= 1e-9);
    CHECK(rep.lhs <= rep.rhs + 1e-9);
    CHECK(rep.gap >= -1e-9);
    CHECK(rep.gap_identity_dev <= 1e-9);
  }
}

TEST_CASE("variance formulas track the estimator algebra") {
  CHECK(mian_variance_formula(1.0, 1, 1) == doctest::Approx(0.25).epsilon(1e-15));
  // Doubling the per-sample variance doubles the estimator variance.
  CHECK(mian_variance_formula(2.0, 4, 3) ==
        doctest::Approx(2.0 * mian_variance_formula(1.0, 4, 3)).epsilon(1e-15));
  // Growing N shrinks the unified estimator's variance.
  CHECK(mian_variance_formula(1.0, 4, 6) < mian_variance_formula(1.0, 4, 2));

  // N = 1: both reduce to var / (4 m^2).
  CHECK(multid_variance_formula(1.0, 0.7, 5, 1) ==
        doctest::Approx(mian_variance_formula(1.0, 5, 1)).epsilon(1e-15));
  // Positive cross-covariance only adds variance to the pairwise sum.
  CHECK(multid_variance_formula(1.0, 0.5, 5, 3) > multid_variance_formula(1.0, 0.0, 5, 3));
  // With matched marginal variance, the pairwise sum never undercuts unified.
  for (std::size_t n : {2ull, 3ull, 6ull}) {
    CHECK(multid_variance_formula(1.0, 0.0, 7, n) >= mian_variance_formula(1.0, 7, n));
  }
}

TEST_CASE("monte carlo variance comparison reproduces the scaling") {
  VarianceScalingCfg cfg;
  cfg.resamples = 2000;  // reduced for test runtime; acceptance runs the full draw
  VarianceScalingReport rep = variance_scaling_check(cfg);
  CHECK(rep.pass);
  CHECK(rep.unified_decreasing);
  CHECK(rep.pairwise_dominates);
  REQUIRE(rep.var_unified.size() == cfg.n_sources.size());
  for (std::size_t i = 0; i + 1 < rep.var_unified.size(); ++i) {
    CHECK(rep.var_unified[i + 1] < rep.var_unified[i]);
  }
  for (std::size_t i = 0; i < rep.n_sources.size(); ++i) {
    if (rep.n_sources[i] >= 2) CHECK(rep.var_pairwise[i] >= rep.var_unified[i]);
  }
}

TEST_CASE("the bundled verification suite passes end to end") {
  VerifySuiteCfg cfg;
  cfg.theorem2_joints = 10;
  cfg.theorem2_random_h = 30;
  cfg.lemma2_tuples = 20;
  cfg.theorem3_triples = 10;
  cfg.hdiv_pairs = 10;
  cfg.variance.resamples = 1000;

  auto results = run_verification_suite(cfg);
  REQUIRE(!results.empty());
  for (const auto& r : results) {
    CAPTURE(r.name);
    CHECK(r.pass);
    CHECK(!r.to_json_line().empty());
    CHECK(r.to_json_line().find("\"name\"") != std::string::npos);
  }
  CHECK(verify_exit_code(results) == 0);

  auto flipped = results;
  flipped[0].pass = false;
  CHECK(verify_exit_code(flipped) == 1);
}
