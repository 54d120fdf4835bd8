#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mian/data.hpp"
#include "mian/nn.hpp"
#include "mian/objectives.hpp"

namespace mian {

enum class Arm { mian, multi_disc, source_only };
enum class DiscObjective { softmax, multibinary, least_squares };

const char* arm_name(Arm a);
const char* disc_objective_name(DiscObjective o);

struct TrainConfig {
  Arm arm = Arm::mian;
  std::size_t m = 16;
  std::size_t steps = 3000;
  std::uint64_t seed = 1;

  DiscObjective disc_objective = DiscObjective::multibinary;
  double beta0 = 1.0;
  bool beta_anneal = false;
  double sigma = 10.0;

  bool bsp_enabled = false;
  double gamma0 = 1e-4;
  bool gamma_anneal = true;  // scheduled gamma; false holds gamma at gamma0
  std::size_t bsp_k = 1;

  enum class Opt { adam, sgd_momentum };
  Opt optimizer = Opt::adam;
  double lr = 2e-4;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.99;
  double adam_epsilon = 1e-8;
  double momentum = 0.9;
  double disc_lr_multiplier = 1.0;

  std::size_t latent_dim = 16;
  std::vector<std::size_t> encoder_hidden{64, 64};
  std::vector<std::size_t> classifier_hidden{64};
  std::vector<std::size_t> disc_hidden{64, 64};

  std::size_t metrics_every = 50;
  bool entropy_in_metrics = true;
  std::size_t entropy_row_cap = 512;

  // Test mode: bitwise pre/post parameter comparison around every update.
  bool check_freeze = false;

  PowerIterOpts power_opts{};
};

// Encoder + classifier, plus one unified discriminator (mian), N pairwise
// discriminators (multi_disc), or none (source_only).
struct ModelBundle {
  Arm arm = Arm::mian;
  std::size_t n_domains = 0;
  Mlp encoder;
  Mlp classifier;
  std::vector<Mlp> discriminators;

  std::vector<std::pair<std::string, const Tensor*>> named_params() const;
};

ModelBundle build_bundle(const TrainConfig& cfg, std::size_t in_dim, std::size_t n_classes,
                         std::size_t n_domains, Rng& rng);

// Rebuild from checkpoint tensors; layer activations follow the fixed
// convention (hidden ReLU, output linear).
ModelBundle bundle_from_checkpoint(const std::vector<std::pair<std::string, Tensor>>& params);

void save_bundle(const std::string& path, const ModelBundle& bundle);
ModelBundle load_bundle(const std::string& path);

struct MetricsRecord {
  std::size_t step = 0;
  std::optional<double> loss_cls, loss_disc, beta, gamma;
  std::optional<double> acc_source_avg, acc_target;
  std::optional<double> svd_entropy_src, svd_entropy_tgt;
};

// Columns: step,loss_cls,loss_disc,beta,gamma,acc_source_avg,acc_target,
// svd_entropy_src,svd_entropy_tgt. Missing values are empty fields.
void write_metrics_csv(const std::string& path, const std::vector<MetricsRecord>& records);
std::vector<MetricsRecord> read_metrics_csv(const std::string& path);

struct TrainResult {
  ModelBundle bundle;
  std::vector<MetricsRecord> records;
};

struct DivergedError : std::runtime_error {
  std::size_t step;
  std::string which;
  DivergedError(std::size_t s, std::string w)
      : std::runtime_error("loss '" + w + "' is NaN at step " + std::to_string(s)),
        step(s),
        which(std::move(w)) {}
};

// One optimization step per model per iteration: discriminator(s) on the
// domain loss, encoder on cls - beta * disc (+ gamma * penalty), classifier
// on the same batch's source rows.
TrainResult train_mian(const std::vector<DomainDataset>& domains, const TrainConfig& cfg);
TrainResult train_multi_disc_baseline(const std::vector<DomainDataset>& domains,
                                      const TrainConfig& cfg);
TrainResult train_source_only(const std::vector<DomainDataset>& domains, const TrainConfig& cfg);
TrainResult train_arm(const std::vector<DomainDataset>& domains, const TrainConfig& cfg);

// Argmax accuracy of classifier(encoder(x)) over rows with the given split
// tag; every evaluated row must be labeled.
double eval_accuracy(const ModelBundle& bundle, const DomainDataset& ds, std::uint8_t split = 1);

// Rows [k*m, (k+1)*m) + the target block, with binary labels 1 = source k,
// 2 = target. This is the only routing used by the pairwise baseline.
struct PairBatch {
  Tensor x;
  std::vector<int> binary_domains;
};
PairBatch pair_batch(const MultiDomainBatch& batch, std::size_t k);

}  // namespace mian
