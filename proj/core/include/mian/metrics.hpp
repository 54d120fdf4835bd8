#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "mian/nn.hpp"
#include "mian/tensor.hpp"
#include "mian/train.hpp"

namespace mian {

struct MetricsError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Singular values of a rank-2 tensor, descending, via one-sided Jacobi.
// Dense and accurate; the oracle counterpart to the power-iteration path.
std::vector<double> jacobi_singular_values(const Tensor& a);

// Spectral entropy: rho_j = s_j^2 / sum s^2, H = -sum rho ln rho.
// Bounded by ln(min(rows, cols)); 0 for a rank-1 matrix.
double svd_entropy(const Tensor& reps);
struct SvdEntropyReport {
  double value = 0.0;
  bool zero_matrix = false;
  std::size_t values = 0;
};
SvdEntropyReport svd_entropy_report(const Tensor& reps);

struct ProbeCfg {
  double train_fraction = 0.5;
  std::size_t steps = 600;
  double lr = 5e-3;
  std::size_t hidden = 32;
  std::size_t sample_cap = 2048;  // per-domain row cap before splitting
  std::uint64_t seed = 7;
};

struct ProbeReport {
  std::string name;
  double value = 0.0;
  std::map<std::string, double> auxiliary;
  std::string to_json_line() const;
};

// Fresh domain classifier fit on a train split of the rows; reports are
// always taken on the disjoint held-out split.
struct DomainProbeFit {
  Mlp model;
  std::vector<std::size_t> train_idx, held_idx;
  double heldout_mean_loglik = 0.0;
  int n_classes = 0;
};
DomainProbeFit train_domain_probe(const Tensor& reps, const std::vector<int>& domains,
                                  const ProbeCfg& cfg);

// Variational lower bound on I(Z;V): held-out mean log-likelihood of a fresh
// domain probe plus log(N+1), clamped at 0 (raw value in auxiliary).
ProbeReport empirical_mutual_information(const Tensor& reps, const std::vector<int>& domains,
                                         const ProbeCfg& cfg);

// 2(1 - 2 eps) for the held-out error eps of a fresh source-vs-target
// discriminator, clamped to [0, 2].
ProbeReport proxy_a_distance(const Tensor& src_reps, const Tensor& tgt_reps, const ProbeCfg& cfg);

// Mixture H-divergence from a trained domain classifier's argmax decisions:
// mean over v of 2(1 - [FN_v + FP_v]) with one-vs-rest rates.
ProbeReport empirical_hdiv_mixture(const Tensor& reps, const std::vector<int>& domains,
                                   const Mlp& trained_h);
// Same, with a fresh probe fit on a train split and rates taken held-out.
ProbeReport empirical_hdiv_mixture_fresh(const Tensor& reps, const std::vector<int>& domains,
                                         const ProbeCfg& cfg);

struct GradVarCfg {
  std::size_t batches = 64;
  std::uint64_t seed = 11;
};

// Variance of the adversarial-loss gradient w.r.t. the encoder's first and
// last layers across fresh batches, models frozen. Value is the mean
// per-parameter variance; auxiliary carries the ln value and per-layer means.
ProbeReport gradient_variance_probe(const ModelBundle& bundle,
                                    const std::vector<DomainDataset>& domains,
                                    const TrainConfig& tc, const GradVarCfg& cfg);

}  // namespace mian
