#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace mian {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& s);
std::string shape_str(const Shape& s);

struct TensorError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

class Tape;

// Dense f64 array. Rank 0 is a scalar (one element). A tensor produced by a
// tape op carries the recording tape's epoch and its node id; plain tensors
// (data, constants) have node == -1.
struct Tensor {
  Shape shape;
  std::vector<double> data;
  bool requires_grad = false;
  int node = -1;
  std::uint64_t tape_epoch = 0;
  std::vector<double> grad;  // filled by Tape::export_grad

  Tensor() = default;

  static Tensor zeros(Shape s);
  static Tensor full(Shape s, double v);
  static Tensor scalar(double v);
  static Tensor from(Shape s, std::vector<double> v);

  std::size_t size() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }
  bool is_scalar() const { return shape.empty(); }
  double item() const;

  // Rank-2 helpers.
  std::size_t rows() const;
  std::size_t cols() const;
  double& at(std::size_t r, std::size_t c);
  double at(std::size_t r, std::size_t c) const;
};

struct PowerIterOpts {
  std::size_t max_iters = 500;
  double tol = 1e-13;
};

struct PowerIterReport {
  bool converged = false;
  std::size_t iters = 0;
  double sigma1 = 0.0;
  double sigma2 = 0.0;   // estimated only when a report is requested
  bool tie = false;      // sigma1 == sigma2 within 1e-10
  bool zero_matrix = false;
};

// Reverse-mode tape. Built per step, consumed by one backward pass. Each tape
// is confined to a single thread; distinct tapes may run concurrently.
class Tape {
 public:
  Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Registers t as a differentiable leaf and stamps its node/epoch fields.
  // Idempotent for a tensor already registered on this tape.
  int leaf(Tensor& t);

  // Runs reverse accumulation from a scalar loss recorded on this tape.
  // The tape is consumed afterwards; a second backward is an error.
  void backward(const Tensor& loss);

  std::span<const double> grad(int node) const;
  std::span<const double> grad(const Tensor& t) const;

  // Copies the accumulated gradient into t.grad (zeros if the node was never
  // reached). t must be registered on this tape.
  void export_grad(Tensor& t) const;

  bool consumed() const { return consumed_; }
  std::uint64_t epoch() const { return epoch_; }
  std::size_t node_count() const { return nodes_.size(); }

  // Op-construction hooks, used by the op functions below when recording a
  // node and by their backward closures when accumulating into a parent.
  int push(std::size_t n, std::function<void(Tape&, const std::vector<double>&)> pull);
  std::vector<double>& grad_buffer(int node, std::size_t n);

 private:
  struct Node {
    std::size_t n = 0;  // element count of the output
    // Accumulates into parent gradient buffers; null for leaves.
    std::function<void(Tape&, const std::vector<double>&)> pull;
  };

  bool on_tape(const Tensor& t) const { return t.node >= 0 && t.tape_epoch == epoch_; }

  std::vector<Node> nodes_;
  std::vector<std::vector<double>> grads_;
  std::uint64_t epoch_ = 0;
  bool consumed_ = false;
  bool backward_ran_ = false;
};

// Plain copy with no tape linkage; use to feed a frozen value into a new tape.
Tensor detach(const Tensor& t);

// [B x K] * [K x C] -> [B x C]; inner-dimension mismatch names both shapes.
Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b);

// Elementwise ops accept same-shape operands or one rank-0 operand
// broadcast against the other; any other mix is a shape error.
Tensor add(Tape& tape, const Tensor& a, const Tensor& b);
Tensor sub(Tape& tape, const Tensor& a, const Tensor& b);
Tensor mul(Tape& tape, const Tensor& a, const Tensor& b);
Tensor scale(Tape& tape, const Tensor& a, double c);
Tensor negate(Tape& tape, const Tensor& a);
Tensor relu(Tape& tape, const Tensor& a);
Tensor sigmoid(Tape& tape, const Tensor& a);
// Natural log; any element <= 0 is a domain error.
Tensor log_op(Tape& tape, const Tensor& a);
// log(sigmoid(x)) computed as -softplus(-x); safe for large |x|.
Tensor log_sigmoid(Tape& tape, const Tensor& a);

// Row-wise log-softmax on [B x K]; max-subtracted so each output row
// satisfies logsumexp(row) == 0 to rounding.
Tensor log_softmax(Tape& tape, const Tensor& a);

// rows of a [B x K] plus a length-K vector.
Tensor add_bias(Tape& tape, const Tensor& a, const Tensor& b);

// out[i] = a[i, idx[i]] -> rank-1 [B].
Tensor take_per_row(Tape& tape, const Tensor& a, const std::vector<std::size_t>& idx);

// Contiguous row slice [begin, end) of a rank-2 tensor.
Tensor slice_rows(Tape& tape, const Tensor& a, std::size_t begin, std::size_t end);

Tensor sum(Tape& tape, const Tensor& a);
Tensor mean(Tape& tape, const Tensor& a);

// Largest singular value of a rank-2 tensor via power iteration on z^T z.
// Adjoint is u1 v1^T. A zero matrix yields 0 with zero gradient. sigma2 and
// the tie flag are estimated only when report is non-null.
Tensor top_singular_value(Tape& tape, const Tensor& z, const PowerIterOpts& opts = {},
                          PowerIterReport* report = nullptr);

// Sum of the k largest squared singular values, power iteration with
// deflation; adjoint is sum_j 2 sigma_j u_j v_j^T. Requires k <= min(rows, cols).
Tensor spectral_sq_topk(Tape& tape, const Tensor& z, std::size_t k,
                        const PowerIterOpts& opts = {}, PowerIterReport* report = nullptr);

}  // namespace mian
