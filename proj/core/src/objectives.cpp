#include "mian/objectives.hpp"

#include <cmath>
#include <string>

namespace mian {

namespace {

std::vector<std::size_t> class_indices(const Tensor& logits, const std::vector<int>& labels,
                                       int base, const char* op) {
  if (logits.rank() != 2) {
    throw ObjectiveError(std::string(op) + ": rank-2 logits required, got " +
                         shape_str(logits.shape));
  }
  const std::size_t B = logits.shape[0], K = logits.shape[1];
  if (labels.size() != B) {
    throw ObjectiveError(std::string(op) + ": " + std::to_string(labels.size()) +
                         " labels for " + std::to_string(B) + " rows");
  }
  std::vector<std::size_t> idx(B);
  for (std::size_t i = 0; i < B; ++i) {
    const long v = static_cast<long>(labels[i]) - base;
    if (v < 0 || static_cast<std::size_t>(v) >= K) {
      throw ObjectiveError(std::string(op) + ": label " + std::to_string(labels[i]) +
                           " out of range for " + std::to_string(K) + " classes (row " +
                           std::to_string(i) + ")");
    }
    idx[i] = static_cast<std::size_t>(v);
  }
  return idx;
}

Tensor nll_mean(Tape& tape, const Tensor& logits, const std::vector<std::size_t>& idx) {
  Tensor logp = log_softmax(tape, logits);
  Tensor picked = take_per_row(tape, logp, idx);
  return negate(tape, mean(tape, picked));
}

}  // namespace

Tensor source_classification_loss(Tape& tape, const Tensor& logits,
                                  const std::vector<int>& labels) {
  return nll_mean(tape, logits, class_indices(logits, labels, 0, "source_classification_loss"));
}

Tensor disc_loss_softmax(Tape& tape, const Tensor& logits, const std::vector<int>& domains) {
  return nll_mean(tape, logits, class_indices(logits, domains, 1, "disc_loss_softmax"));
}

Tensor disc_loss_multibinary(Tape& tape, const Tensor& logits, const std::vector<int>& domains) {
  auto idx = class_indices(logits, domains, 1, "disc_loss_multibinary");
  const std::size_t B = logits.shape[0], K = logits.shape[1];
  Tensor onehot = Tensor::zeros({B, K});
  Tensor rest = Tensor::full({B, K}, 1.0);
  for (std::size_t i = 0; i < B; ++i) {
    onehot.at(i, idx[i]) = 1.0;
    rest.at(i, idx[i]) = 0.0;
  }
  Tensor pos = mul(tape, onehot, log_sigmoid(tape, logits));
  Tensor neg = mul(tape, rest, log_sigmoid(tape, negate(tape, logits)));
  Tensor total = sum(tape, add(tape, pos, neg));
  return scale(tape, total, -1.0 / static_cast<double>(B));
}

Tensor disc_loss_least_squares(Tape& tape, const Tensor& outputs, const std::vector<int>& domains) {
  auto idx = class_indices(outputs, domains, 1, "disc_loss_least_squares");
  const std::size_t B = outputs.shape[0], K = outputs.shape[1];
  Tensor target = Tensor::zeros({B, K});
  for (std::size_t i = 0; i < B; ++i) target.at(i, idx[i]) = 1.0;
  Tensor diff = sub(tape, outputs, target);
  Tensor sq = mul(tape, diff, diff);
  return scale(tape, sum(tape, sq), 1.0 / static_cast<double>(B));
}

Tensor encoder_adversarial_loss(Tape& tape, const Tensor& cls_loss, const Tensor& disc_loss,
                                double beta) {
  if (!cls_loss.is_scalar() || !disc_loss.is_scalar()) {
    throw ObjectiveError("encoder_adversarial_loss: scalar losses required");
  }
  return add(tape, cls_loss, scale(tape, disc_loss, -beta));
}

Tensor bsp_penalty(Tape& tape, const std::vector<Tensor>& z_by_domain, std::size_t k,
                   const PowerIterOpts& opts) {
  if (z_by_domain.empty()) throw ObjectiveError("bsp_penalty: no domain blocks");
  Tensor total = Tensor::scalar(0.0);
  bool first = true;
  for (const Tensor& z : z_by_domain) {
    if (z.rank() != 2) {
      throw ObjectiveError("bsp_penalty: rank-2 block required, got " + shape_str(z.shape));
    }
    if (k == 0 || k > std::min(z.shape[0], z.shape[1])) {
      throw ObjectiveError("bsp_penalty: k = " + std::to_string(k) + " outside [1, " +
                           std::to_string(std::min(z.shape[0], z.shape[1])) + "] for block " +
                           shape_str(z.shape));
    }
    Tensor term;
    if (k == 1) {
      Tensor s = top_singular_value(tape, z, opts);
      term = mul(tape, s, s);
    } else {
      term = spectral_sq_topk(tape, z, k, opts);
    }
    total = first ? term : add(tape, total, term);
    first = false;
  }
  return total;
}

namespace {

void check_progress(double p, const char* op) {
  if (!(p >= 0.0 && p <= 1.0)) {
    throw ObjectiveError(std::string(op) + ": progress " + std::to_string(p) +
                         " outside [0, 1]");
  }
}

}  // namespace

double beta_schedule(const ScheduleCfg& cfg, double p) {
  check_progress(p, "beta_schedule");
  return cfg.base * 2.0 * (1.0 - 1.0 / (1.0 + std::exp(-cfg.sigma * p)));
}

double gamma_schedule(const ScheduleCfg& cfg, double p) {
  check_progress(p, "gamma_schedule");
  return cfg.base * (2.0 / (1.0 + std::exp(-cfg.sigma * p)) - 1.0);
}

}  // namespace mian
