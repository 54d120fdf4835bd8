#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "mian/rng.hpp"
#include "mian/tensor.hpp"

namespace mian {

// Fully connected stack: hidden layers ReLU, output layer linear. Weights are
// fan-in-scaled uniform (variance 2/fan_in), biases zero.
struct Mlp {
  struct Layer {
    Tensor w;  // [in x out]
    Tensor b;  // [out]
    bool relu_out = false;
    int w_node = -1;  // node ids from the most recent tracked forward
    int b_node = -1;
  };

  std::string name;
  std::vector<Layer> layers;

  std::size_t in_dim() const;
  std::size_t out_dim() const;
  std::size_t param_count() const;

  // Tracked forward: registers every parameter as a leaf on the tape.
  Tensor forward(Tape& tape, const Tensor& x);

  // Forward through the tape with parameters captured as constants; gradients
  // flow through to x but never into this model.
  Tensor forward_frozen(Tape& tape, const Tensor& x) const;

  // Tape-free forward for evaluation.
  Tensor infer(const Tensor& x) const;

  // Pointers to parameters in registration order (w, b per layer).
  std::vector<Tensor*> params();
  std::vector<const Tensor*> params() const;
  std::vector<std::pair<std::string, const Tensor*>> named_params() const;
};

// dims = {in, hidden..., out}; at least one layer required.
Mlp init_mlp(const std::vector<std::size_t>& dims, Rng& rng, std::string name = "mlp");
Mlp init_mlp(const std::vector<std::size_t>& dims, std::uint64_t seed, std::string name = "mlp");

// First-moment SGD (velocity = momentum * velocity + grad) or Adam with
// bias-corrected moments. Slots are allocated per parameter on first use and
// keyed by registration order, so updates are independent of ordering.
struct OptimizerState {
  enum class Kind { sgd_momentum, adam };
  Kind kind = Kind::sgd_momentum;
  double lr = 1e-3;
  double momentum = 0.9;
  double beta1 = 0.9;
  double beta2 = 0.99;
  double epsilon = 1e-8;
  std::uint64_t step_count = 0;

  struct Slot {
    std::vector<double> m;  // velocity for SGD, first moment for Adam
    std::vector<double> v;  // second moment (Adam only)
  };
  std::vector<Slot> slots;
};

OptimizerState make_sgd_momentum(double lr, double momentum = 0.9);
OptimizerState make_adam(double lr, double beta1 = 0.9, double beta2 = 0.99,
                         double epsilon = 1e-8);

// Applies one update using each parameter's .grad, then clears the grads.
// Every parameter must carry a gradient of matching size.
void opt_step(OptimizerState& opt, const std::vector<Tensor*>& params);

// Binary checkpoint: magic "MIAN", version byte 1, then per parameter a
// u16 LE name length, UTF-8 name, u8 rank, u32 LE dims, f64 LE row-major
// payload. Round-trips are bit-exact.
void save_checkpoint(const std::string& path,
                     const std::vector<std::pair<std::string, const Tensor*>>& params);
std::vector<std::pair<std::string, Tensor>> load_checkpoint(const std::string& path);

struct CheckpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace mian
