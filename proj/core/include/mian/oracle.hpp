#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace mian {

struct OracleError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Dense joint distribution over two or three finite variables, row-major with
// the last axis fastest. Axis order is (Z, V) or (Z, X, V). Entries must be
// non-negative and sum to 1 within 1e-12.
struct DiscreteJoint {
  std::vector<std::size_t> sizes;
  std::vector<double> p;

  void validate() const;
  double at2(std::size_t z, std::size_t v) const { return p[z * sizes[1] + v]; }
  double at3(std::size_t z, std::size_t x, std::size_t v) const {
    return p[(z * sizes[1] + x) * sizes[2] + v];
  }
};

// Uniformly random joint (normalized Exp(1) draws) over the given sizes.
DiscreteJoint random_joint(const std::vector<std::size_t>& sizes, std::uint64_t seed);

// I(Z;V) in nats by direct summation; 0 log 0 terms contribute zero.
double mi_exact(const DiscreteJoint& zv);

// Shannon entropy of a distribution, in nats.
double entropy(std::span<const double> dist);

struct Theorem2Report {
  double mi = 0.0;
  double value_at_posterior = 0.0;   // variational objective at h* = posterior
  double deviation = 0.0;            // |value_at_posterior - mi|
  double max_violation = 0.0;        // max over random h of (value(h) - mi)
  std::size_t random_h = 0;
  bool pass = false;
};
// Checks max_h sum_v P(v) E[log h_v] + H(V) == I(Z;V), attained at the
// posterior, and never exceeded by random feasible h.
Theorem2Report verify_theorem2(const DiscreteJoint& zv, std::size_t n_random_h,
                               std::uint64_t seed, double tol);

// 2 * total variation: closed form 2 * sum_z max(p - q, 0).
double hdiv_exhaustive(std::span<const double> p, std::span<const double> q);
// Independent route: max over all 2^K subsets of 2 |P(A) - Q(A)|; K <= 20.
double hdiv_enumerated(std::span<const double> p, std::span<const double> q);

struct Lemma2Report {
  double lhs = 0.0;  // (1/(N+1)) sum_v d_H(D_v, uniform mixture of the rest)
  double rhs = 0.0;  // (1/(N(N+1))) sum_{v != u} d_H(D_v, D_u)
  bool pass = false;
};
Lemma2Report verify_lemma2(const std::vector<std::vector<double>>& domains, double tol);

struct Theorem3Report {
  double lhs = 0.0;               // I(Z; X,V) via the chain rule
  double lhs_direct = 0.0;        // same quantity via a flattened joint
  double rhs = 0.0;               // E_{x,v} KL(P_{Z|x,v} || r) + H(V) + max-term
  double gap = 0.0;               // rhs - lhs
  double gap_identity_dev = 0.0;  // |gap - E_v KL(P_{Z|v} || r)|
  bool pass = false;
};
// Bound I(Z;X,V) <= E KL + H(V) + max-term for prior r over Z; the gap equals
// E_v KL(P_{Z|v} || r) for any r.
Theorem3Report verify_theorem3(const DiscreteJoint& zxv, const std::vector<double>& r, double tol);

// Monte Carlo comparison of the unified (N+1)-way estimator against the sum
// of N pairwise estimators, both with tabular plug-in posteriors.
struct VarianceScalingCfg {
  std::size_t m = 20;
  std::vector<std::size_t> n_sources{1, 2, 4, 6};
  std::size_t support = 8;
  std::size_t resamples = 10000;
  std::uint64_t seed = 1;
};
struct VarianceScalingReport {
  std::vector<std::size_t> n_sources;
  std::vector<double> var_unified;
  std::vector<double> var_pairwise;
  std::vector<double> mean_unified;
  std::vector<double> mean_pairwise;
  bool unified_decreasing = false;
  bool pairwise_dominates = false;  // var_pairwise >= var_unified for N >= 2
  bool pass = false;
};
VarianceScalingReport variance_scaling_check(const VarianceScalingCfg& cfg);

// Closed-form variance relations for sample-mean estimators.
// Unified: Var = var_im / (m^2 (N+1)^2).
double mian_variance_formula(double var_im, std::size_t m, std::size_t n_sources);
// Pairwise sum: Var = (1/m^2) (N/(N+1)^2 var_ik + N(N-1)/(N+1)^2 cov).
double multid_variance_formula(double var_ik, double cov_ikj, std::size_t m,
                               std::size_t n_sources);

// One verification check outcome, serializable as a JSON line.
struct CheckResult {
  std::string name;
  bool pass = false;
  double max_deviation = 0.0;
  std::map<std::string, double> detail;
  std::string to_json_line() const;
};

struct VerifySuiteCfg {
  std::uint64_t seed = 20240901;
  std::size_t theorem2_joints = 50;
  std::size_t theorem2_random_h = 100;
  std::size_t lemma2_tuples = 100;
  std::size_t theorem3_triples = 50;
  std::size_t hdiv_pairs = 50;
  double tol_theorem = 1e-9;
  double tol_exact = 1e-12;
  VarianceScalingCfg variance;
};
// The full oracle suite; every check is deterministic for a given seed.
std::vector<CheckResult> run_verification_suite(const VerifySuiteCfg& cfg);

// 0 when every check passed, 1 otherwise.
int verify_exit_code(const std::vector<CheckResult>& results);

}  // namespace mian
