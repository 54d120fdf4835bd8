#pragma once

#include <vector>

#include "mian/tensor.hpp"

namespace mian {

struct ObjectiveError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Mean negative log-likelihood of labels under row-wise log-softmax of
// logits [B x K]; labels are 0-based class indices.
Tensor source_classification_loss(Tape& tape, const Tensor& logits, const std::vector<int>& labels);

// Softmax cross-entropy over domain labels (1-based, 1..N+1). Shares the
// classification-loss kernel.
Tensor disc_loss_softmax(Tape& tape, const Tensor& logits, const std::vector<int>& domains);

// One sigmoid per domain head: -(1/M) sum_i [log sig(l[i,v_i]) +
// sum_{k != v_i} log(1 - sig(l[i,k]))], computed with stable log-sigmoids.
Tensor disc_loss_multibinary(Tape& tape, const Tensor& logits, const std::vector<int>& domains);

// Squared error of raw outputs against one-vs-rest 1/0 targets, averaged
// over rows.
Tensor disc_loss_least_squares(Tape& tape, const Tensor& outputs, const std::vector<int>& domains);

// cls_loss - beta * disc_loss. The caller keeps discriminator and classifier
// parameters off the tape, so the gradient touches only the encoder.
Tensor encoder_adversarial_loss(Tape& tape, const Tensor& cls_loss, const Tensor& disc_loss,
                                double beta);

// Sum over domain blocks of the top-k squared singular values of each block.
// k = 1 goes through top_singular_value; k > 1 deflates.
Tensor bsp_penalty(Tape& tape, const std::vector<Tensor>& z_by_domain, std::size_t k,
                   const PowerIterOpts& opts = {});

// Progress schedules, p in [0, 1]; sigma defaults to 10.
// beta: base * 2 * (1 - 1/(1 + exp(-sigma p))): starts at base, non-increasing.
// gamma: base * (2/(1 + exp(-sigma p)) - 1): starts at 0, non-decreasing.
struct ScheduleCfg {
  double base = 1.0;
  double sigma = 10.0;
};
double beta_schedule(const ScheduleCfg& cfg, double p);
double gamma_schedule(const ScheduleCfg& cfg, double p);

}  // namespace mian
