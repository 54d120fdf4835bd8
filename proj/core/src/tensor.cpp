#include "mian/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <random>
#include <sstream>

namespace mian {

std::size_t numel(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s) {
  if (s.empty()) return "[scalar]";
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << 'x';
    os << s[i];
  }
  os << ']';
  return os.str();
}

Tensor Tensor::zeros(Shape s) {
  Tensor t;
  t.shape = std::move(s);
  t.data.assign(numel(t.shape), 0.0);
  return t;
}

Tensor Tensor::full(Shape s, double v) {
  Tensor t = zeros(std::move(s));
  std::fill(t.data.begin(), t.data.end(), v);
  return t;
}

Tensor Tensor::scalar(double v) {
  Tensor t;
  t.data.assign(1, v);
  return t;
}

Tensor Tensor::from(Shape s, std::vector<double> v) {
  if (numel(s) != v.size()) {
    throw TensorError("tensor init: shape " + shape_str(s) + " needs " +
                      std::to_string(numel(s)) + " values, got " + std::to_string(v.size()));
  }
  Tensor t;
  t.shape = std::move(s);
  t.data = std::move(v);
  return t;
}

double Tensor::item() const {
  if (data.size() != 1) {
    throw TensorError("item() on tensor of shape " + shape_str(shape));
  }
  return data[0];
}

std::size_t Tensor::rows() const {
  if (shape.size() != 2) throw TensorError("rows() on tensor of shape " + shape_str(shape));
  return shape[0];
}

std::size_t Tensor::cols() const {
  if (shape.size() != 2) throw TensorError("cols() on tensor of shape " + shape_str(shape));
  return shape[1];
}

double& Tensor::at(std::size_t r, std::size_t c) { return data[r * cols() + c]; }
double Tensor::at(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }

namespace {

std::atomic<std::uint64_t> g_tape_epoch{1};

void check_same_or_scalar(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape == b.shape || a.is_scalar() || b.is_scalar()) return;
  throw TensorError(std::string(op) + ": shapes " + shape_str(a.shape) + " vs " +
                    shape_str(b.shape) + " (same shape or one scalar operand required)");
}

double stable_sigmoid(double x) {
  if (x >= 0.0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  double e = std::exp(x);
  return e / (1.0 + e);
}

double softplus(double x) {
  if (x > 0.0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

struct SvTriplet {
  double sigma = 0.0;
  std::vector<double> u, v;
  std::size_t iters = 0;
  bool converged = false;
};

// Power iteration on z^T z for the dominant singular triplet of z (B x d).
SvTriplet power_top(const std::vector<double>& z, std::size_t B, std::size_t d,
                    const PowerIterOpts& opts, std::uint64_t salt) {
  SvTriplet out;
  out.u.assign(B, 0.0);
  out.v.assign(d, 0.0);

  double fro2 = 0.0;
  for (double x : z) fro2 += x * x;
  if (fro2 == 0.0) {
    out.converged = true;
    return out;
  }

  std::vector<double> G(d * d, 0.0);
  for (std::size_t r = 0; r < B; ++r) {
    const double* row = z.data() + r * d;
    for (std::size_t i = 0; i < d; ++i) {
      double ri = row[i];
      if (ri == 0.0) continue;
      for (std::size_t j = 0; j < d; ++j) G[i * d + j] += ri * row[j];
    }
  }

  std::vector<double> v(d), w(d), v_prev(d);
  double sigma_prev = -1.0;
  for (std::uint64_t attempt = 0; attempt < 3 && !out.converged; ++attempt) {
    std::mt19937_64 gen(0x9E3779B97F4A7C15ull ^ (B * 1315423911ull) ^ (d << 1) ^ (salt + attempt));
    double nrm = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      v[i] = static_cast<double>(gen() >> 11) * 0x1.0p-53 - 0.5;
      nrm += v[i] * v[i];
    }
    nrm = std::sqrt(nrm);
    for (std::size_t i = 0; i < d; ++i) v[i] /= nrm;

    sigma_prev = -1.0;
    for (std::size_t it = 0; it < opts.max_iters; ++it) {
      out.iters = it + 1;
      for (std::size_t i = 0; i < d; ++i) {
        double acc = 0.0;
        const double* gi = G.data() + i * d;
        for (std::size_t j = 0; j < d; ++j) acc += gi[j] * v[j];
        w[i] = acc;
      }
      double wn = 0.0;
      for (double x : w) wn += x * x;
      wn = std::sqrt(wn);
      if (wn == 0.0) break;  // started orthogonal to the range; retry with a new vector
      double rayleigh = 0.0;
      for (std::size_t i = 0; i < d; ++i) rayleigh += v[i] * w[i];
      double sigma = std::sqrt(std::max(0.0, rayleigh));
      v_prev = v;
      for (std::size_t i = 0; i < d; ++i) v[i] = w[i] / wn;
      // Convergence is judged on the vector, not on sigma: the Rayleigh value
      // settles quadratically in the residual angle while the u v^T adjoint is
      // only linearly accurate, so a sigma test stops while gradients are
      // still off near narrow spectral gaps.
      double dv2 = 0.0;
      for (std::size_t i = 0; i < d; ++i) dv2 += (v[i] - v_prev[i]) * (v[i] - v_prev[i]);
      if (it > 0 && dv2 <= opts.tol * opts.tol) {
        out.converged = true;
        sigma_prev = sigma;
        break;
      }
      sigma_prev = sigma;
    }
    if (sigma_prev > 0.0) break;
  }

  // Final Rayleigh pass for sigma and u = Zv / sigma.
  std::vector<double> zv(B, 0.0);
  for (std::size_t r = 0; r < B; ++r) {
    const double* row = z.data() + r * d;
    double acc = 0.0;
    for (std::size_t j = 0; j < d; ++j) acc += row[j] * v[j];
    zv[r] = acc;
  }
  double s2 = 0.0;
  for (double x : zv) s2 += x * x;
  out.sigma = std::sqrt(s2);
  out.v = v;
  if (out.sigma > 0.0) {
    for (std::size_t r = 0; r < B; ++r) out.u[r] = zv[r] / out.sigma;
  }
  return out;
}

void deflate(std::vector<double>& z, std::size_t B, std::size_t d, const SvTriplet& t) {
  for (std::size_t r = 0; r < B; ++r) {
    for (std::size_t c = 0; c < d; ++c) {
      z[r * d + c] -= t.sigma * t.u[r] * t.v[c];
    }
  }
}

}  // namespace

Tape::Tape() : epoch_(g_tape_epoch.fetch_add(1)) {}

int Tape::push(std::size_t n, std::function<void(Tape&, const std::vector<double>&)> pull) {
  nodes_.push_back(Node{n, std::move(pull)});
  return static_cast<int>(nodes_.size()) - 1;
}

int Tape::leaf(Tensor& t) {
  if (on_tape(t)) return t.node;
  int id = push(t.size(), nullptr);
  t.node = id;
  t.tape_epoch = epoch_;
  t.requires_grad = true;
  return id;
}

std::vector<double>& Tape::grad_buffer(int node, std::size_t n) {
  auto& buf = grads_[static_cast<std::size_t>(node)];
  if (buf.empty()) buf.assign(n, 0.0);
  return buf;
}

void Tape::backward(const Tensor& loss) {
  if (consumed_) throw TensorError("backward: tape already consumed");
  if (!on_tape(loss)) throw TensorError("backward: loss is not recorded on this tape");
  if (!loss.is_scalar()) {
    throw TensorError("backward: loss must be a scalar, got shape " + shape_str(loss.shape));
  }
  consumed_ = true;
  backward_ran_ = true;
  grads_.assign(nodes_.size(), {});
  grad_buffer(loss.node, 1)[0] = 1.0;
  for (int id = loss.node; id >= 0; --id) {
    const auto& buf = grads_[static_cast<std::size_t>(id)];
    if (buf.empty()) continue;
    const auto& node = nodes_[static_cast<std::size_t>(id)];
    if (node.pull) node.pull(*this, buf);
  }
}

std::span<const double> Tape::grad(int node) const {
  if (!backward_ran_) throw TensorError("grad: backward has not run");
  if (node < 0 || static_cast<std::size_t>(node) >= grads_.size()) {
    throw TensorError("grad: node id out of range");
  }
  const auto& buf = grads_[static_cast<std::size_t>(node)];
  return {buf.data(), buf.size()};
}

std::span<const double> Tape::grad(const Tensor& t) const {
  if (!on_tape(t)) throw TensorError("grad: tensor is not registered on this tape");
  return grad(t.node);
}

void Tape::export_grad(Tensor& t) const {
  auto g = grad(t);
  if (g.empty()) {
    t.grad.assign(t.size(), 0.0);
  } else {
    t.grad.assign(g.begin(), g.end());
  }
}

namespace {

// Shared entry bookkeeping for op inputs: tracked tensors contribute a parent
// edge; plain tensors are captured as constants. A tensor that requires a
// gradient but was recorded on some other tape is almost certainly a bug.
int input_node(const Tape& tape, const Tensor& t, const char* op) {
  if (t.node >= 0 && t.tape_epoch == tape.epoch()) return t.node;
  if (t.requires_grad) {
    throw TensorError(std::string(op) +
                      ": input requires grad but is not registered on this tape "
                      "(register it with tape.leaf or pass a detached copy)");
  }
  return -1;
}

}  // namespace

Tensor detach(const Tensor& t) {
  Tensor out;
  out.shape = t.shape;
  out.data = t.data;
  return out;
}

Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.shape[1] != b.shape[0]) {
    throw TensorError("matmul: incompatible shapes " + shape_str(a.shape) + " and " +
                      shape_str(b.shape));
  }
  const std::size_t B = a.shape[0], K = a.shape[1], C = b.shape[1];
  int pa = input_node(tape, a, "matmul");
  int pb = input_node(tape, b, "matmul");

  Tensor out = Tensor::zeros({B, C});
  for (std::size_t i = 0; i < B; ++i) {
    const double* arow = a.data.data() + i * K;
    double* orow = out.data.data() + i * C;
    for (std::size_t k = 0; k < K; ++k) {
      double av = arow[k];
      if (av == 0.0) continue;
      const double* brow = b.data.data() + k * C;
      for (std::size_t j = 0; j < C; ++j) orow[j] += av * brow[j];
    }
  }

  auto adata = a.data;
  auto bdata = b.data;
  out.node = tape.push(out.size(), [pa, pb, adata, bdata, B, K, C](Tape& tp, const std::vector<double>& up) {
    if (pa >= 0) {
      auto& ga = tp.grad_buffer(pa, B * K);
      for (std::size_t i = 0; i < B; ++i) {
        for (std::size_t j = 0; j < C; ++j) {
          double u = up[i * C + j];
          if (u == 0.0) continue;
          for (std::size_t k = 0; k < K; ++k) ga[i * K + k] += u * bdata[k * C + j];
        }
      }
    }
    if (pb >= 0) {
      auto& gb = tp.grad_buffer(pb, K * C);
      for (std::size_t i = 0; i < B; ++i) {
        for (std::size_t k = 0; k < K; ++k) {
          double av = adata[i * K + k];
          if (av == 0.0) continue;
          for (std::size_t j = 0; j < C; ++j) gb[k * C + j] += av * up[i * C + j];
        }
      }
    }
  });
  out.tape_epoch = tape.epoch();
  out.requires_grad = pa >= 0 || pb >= 0;
  return out;
}

namespace {

// Accumulates an upstream gradient into a parent that may have been a
// broadcast scalar.
void pull_broadcast(Tape& tp, int parent, std::size_t parent_n, bool parent_scalar,
                    const std::vector<double>& contrib) {
  if (parent < 0) return;
  auto& g = tp.grad_buffer(parent, parent_n);
  if (parent_scalar && parent_n == 1 && contrib.size() > 1) {
    double acc = 0.0;
    for (double x : contrib) acc += x;
    g[0] += acc;
  } else {
    for (std::size_t i = 0; i < contrib.size(); ++i) g[i] += contrib[i];
  }
}

}  // namespace

Tensor add(Tape& tape, const Tensor& a, const Tensor& b) {
  check_same_or_scalar("add", a, b);
  int pa = input_node(tape, a, "add");
  int pb = input_node(tape, b, "add");
  const Tensor& big = a.size() >= b.size() ? a : b;
  Tensor out = Tensor::zeros(big.shape);
  for (std::size_t i = 0; i < out.size(); ++i) {
    out.data[i] = a.data[a.size() == 1 ? 0 : i] + b.data[b.size() == 1 ? 0 : i];
  }
  const std::size_t na = a.size(), nb = b.size();
  const bool sa = a.is_scalar(), sb = b.is_scalar();
  out.node = tape.push(out.size(), [pa, pb, na, nb, sa, sb](Tape& tp, const std::vector<double>& up) {
    pull_broadcast(tp, pa, na, sa, up);
    pull_broadcast(tp, pb, nb, sb, up);
  });
  out.tape_epoch = tape.epoch();
  out.requires_grad = pa >= 0 || pb >= 0;
  return out;
}

Tensor sub(Tape& tape, const Tensor& a, const Tensor& b) {
  check_same_or_scalar("sub", a, b);
  int pa = input_node(tape, a, "sub");
  int pb = input_node(tape, b, "sub");
  const Tensor& big = a.size() >= b.size() ? a : b;
  Tensor out = Tensor::zeros(big.shape);
  for (std::size_t i = 0; i < out.size(); ++i) {
    out.data[i] = a.data[a.size() == 1 ? 0 : i] - b.data[b.size() == 1 ? 0 : i];
  }
  const std::size_t na = a.size(), nb = b.size();
  const bool sa = a.is_scalar(), sb = b.is_scalar();
  out.node = tape.push(out.size(), [pa, pb, na, nb, sa, sb](Tape& tp, const std::vector<double>& up) {
    pull_broadcast(tp, pa, na, sa, up);
    if (pb >= 0) {
      std::vector<double> neg(up.size());
      for (std::size_t i = 0; i < up.size(); ++i) neg[i] = -up[i];
      pull_broadcast(tp, pb, nb, sb, neg);
    }
  });
  out.tape_epoch = tape.epoch();
  out.requires_grad = pa >= 0 || pb >= 0;
  return out;
}

Tensor mul(Tape& tape, const Tensor& a, const Tensor& b) {
  check_same_or_scalar("mul", a, b);
  int pa = input_node(tape, a, "mul");
  int pb = input_node(tape, b, "mul");
  const Tensor& big = a.size() >= b.size() ? a : b;
  Tensor out = Tensor::zeros(big.shape);
  for (std::size_t i = 0; i < out.size(); ++i) {
    out.data[i] = a.data[a.size() == 1 ? 0 : i] * b.data[b.size() == 1 ? 0 : i];
  }
  auto adata = a.data;
  auto bdata = b.data;
  const bool sa = a.is_scalar(), sb = b.is_scalar();
  out.node = tape.push(out.size(), [pa, pb, adata, bdata, sa, sb](Tape& tp, const std::vector<double>& up) {
    if (pa >= 0) {
      std::vector<double> c(up.size());
      for (std::size_t i = 0; i < up.size(); ++i) c[i] = up[i] * bdata[bdata.size() == 1 ? 0 : i];
      pull_broadcast(tp, pa, adata.size(), sa, c);
    }
    if (pb >= 0) {
      std::vector<double> c(up.size());
      for (std::size_t i = 0; i < up.size(); ++i) c[i] = up[i] * adata[adata.size() == 1 ? 0 : i];
      pull_broadcast(tp, pb, bdata.size(), sb, c);
    }
  });
  out.tape_epoch = tape.epoch();
  out.requires_grad = pa >= 0 || pb >= 0;
  return out;
}

Tensor scale(Tape& tape, const Tensor& a, double c) {
  int pa = input_node(tape, a, "scale");
  Tensor out = Tensor::zeros(a.shape);
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = a.data[i] * c;
  const std::size_t n = a.size();
  out.node = tape.push(out.size(), [pa, c, n](Tape& tp, const std::vector<double>& up) {
    if (pa < 0) return;
    auto& g = tp.grad_buffer(pa, n);
    for (std::size_t i = 0; i < n; ++i) g[i] += up[i] * c;
  });
  out.tape_epoch = tape.epoch();
  out.requires_grad = pa >= 0;
  return out;
}

Tensor negate(Tape& tape, const Tensor& a) { return scale(tape, a, -1.0); }

namespace {

template <class Fwd, class Bwd>
Tensor unary_op(Tape& tape, const Tensor& a, const char* name, Fwd fwd, Bwd bwd_factor) {
  int pa = input_node(tape, a, name);
  Tensor out = Tensor::zeros(a.shape);
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = fwd(a.data[i]);
  // bwd_factor(x, y) gives dy/dx from the input and forward output.
  std::vector<double> factor(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) factor[i] = bwd_factor(a.data[i], out.data[i]);
  const std::size_t n = a.size();
  out.node = tape.push(out.size(), [pa, factor = std::move(factor), n](Tape& tp, const std::vector<double>& up) {
    if (pa < 0) return;
    auto& g = tp.grad_buffer(pa, n);
    for (std::size_t i = 0; i < n; ++i) g[i] += up[i] * factor[i];
  });
  out.tape_epoch = tape.epoch();
  out.requires_grad = pa >= 0;
  return out;
}

}  // namespace

Tensor relu(Tape& tape, const Tensor& a) {
  return unary_op(
      tape, a, "relu", [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(Tape& tape, const Tensor& a) {
  return unary_op(
      tape, a, "sigmoid", [](double x) { return stable_sigmoid(x); },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor log_op(Tape& tape, const Tensor& a) {
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!(a.data[i] > 0.0)) {
      throw TensorError("log: non-positive value " + std::to_string(a.data[i]) +
                        " at flat index " + std::to_string(i));
    }
  }
  return unary_op(
      tape, a, "log", [](double x) { return std::log(x); },
      [](double x, double) { return 1.0 / x; });
}

Tensor log_sigmoid(Tape& tape, const Tensor& a) {
  return unary_op(
      tape, a, "log_sigmoid", [](double x) { return -softplus(-x); },
      [](double x, double) { return stable_sigmoid(-x); });
}

Tensor log_softmax(Tape& tape, const Tensor& a) {
  if (a.rank() != 2) {
    throw TensorError("log_softmax: rank-2 input required, got " + shape_str(a.shape));
  }
  const std::size_t B = a.shape[0], K = a.shape[1];
  int pa = input_node(tape, a, "log_softmax");
  Tensor out = Tensor::zeros(a.shape);
  std::vector<double> prob(a.size());
  for (std::size_t i = 0; i < B; ++i) {
    const double* row = a.data.data() + i * K;
    double m = row[0];
    for (std::size_t j = 1; j < K; ++j) m = std::max(m, row[j]);
    double s = 0.0;
    for (std::size_t j = 0; j < K; ++j) s += std::exp(row[j] - m);
    double ls = std::log(s);
    for (std::size_t j = 0; j < K; ++j) {
      double o = row[j] - m - ls;
      out.data[i * K + j] = o;
      prob[i * K + j] = std::exp(o);
    }
  }
  out.node = tape.push(out.size(), [pa, prob = std::move(prob), B, K](Tape& tp, const std::vector<double>& up) {
    if (pa < 0) return;
    auto& g = tp.grad_buffer(pa, B * K);
    for (std::size_t i = 0; i < B; ++i) {
      double usum = 0.0;
      for (std::size_t j = 0; j < K; ++j) usum += up[i * K + j];
      for (std::size_t j = 0; j < K; ++j) {
        g[i * K + j] += up[i * K + j] - prob[i * K + j] * usum;
      }
    }
  });
  out.tape_epoch = tape.epoch();
  out.requires_grad = pa >= 0;
  return out;
}

Tensor add_bias(Tape& tape, const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 1 || b.shape[0] != a.shape[1]) {
    throw TensorError("add_bias: expected [BxK] and [K], got " + shape_str(a.shape) + " and " +
                      shape_str(b.shape));
  }
  const std::size_t B = a.shape[0], K = a.shape[1];
  int pa = input_node(tape, a, "add_bias");
  int pb = input_node(tape, b, "add_bias");
  Tensor out = Tensor::zeros(a.shape);
  for (std::size_t i = 0; i < B; ++i) {
    for (std::size_t j = 0; j < K; ++j) out.data[i * K + j] = a.data[i * K + j] + b.data[j];
  }
  out.node = tape.push(out.size(), [pa, pb, B, K](Tape& tp, const std::vector<double>& up) {
    if (pa >= 0) {
      auto& g = tp.grad_buffer(pa, B * K);
      for (std::size_t i = 0; i < up.size(); ++i) g[i] += up[i];
    }
    if (pb >= 0) {
      auto& g = tp.grad_buffer(pb, K);
      for (std::size_t i = 0; i < B; ++i) {
        for (std::size_t j = 0; j < K; ++j) g[j] += up[i * K + j];
      }
    }
  });
  out.tape_epoch = tape.epoch();
  out.requires_grad = pa >= 0 || pb >= 0;
  return out;
}

Tensor take_per_row(Tape& tape, const Tensor& a, const std::vector<std::size_t>& idx) {
  if (a.rank() != 2) {
    throw TensorError("take_per_row: rank-2 input required, got " + shape_str(a.shape));
  }
  const std::size_t B = a.shape[0], K = a.shape[1];
  if (idx.size() != B) {
    throw TensorError("take_per_row: " + std::to_string(idx.size()) + " indices for " +
                      std::to_string(B) + " rows");
  }
  for (std::size_t i = 0; i < B; ++i) {
    if (idx[i] >= K) {
      throw TensorError("take_per_row: index " + std::to_string(idx[i]) + " out of range for " +
                        std::to_string(K) + " columns (row " + std::to_string(i) + ")");
    }
  }
  int pa = input_node(tape, a, "take_per_row");
  Tensor out = Tensor::zeros({B});
  for (std::size_t i = 0; i < B; ++i) out.data[i] = a.data[i * K + idx[i]];
  out.node = tape.push(out.size(), [pa, idx, B, K](Tape& tp, const std::vector<double>& up) {
    if (pa < 0) return;
    auto& g = tp.grad_buffer(pa, B * K);
    for (std::size_t i = 0; i < B; ++i) g[i * K + idx[i]] += up[i];
  });
  out.tape_epoch = tape.epoch();
  out.requires_grad = pa >= 0;
  return out;
}

Tensor slice_rows(Tape& tape, const Tensor& a, std::size_t begin, std::size_t end) {
  if (a.rank() != 2) {
    throw TensorError("slice_rows: rank-2 input required, got " + shape_str(a.shape));
  }
  const std::size_t B = a.shape[0], K = a.shape[1];
  if (begin > end || end > B) {
    throw TensorError("slice_rows: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                      ") invalid for " + std::to_string(B) + " rows");
  }
  int pa = input_node(tape, a, "slice_rows");
  const std::size_t n = end - begin;
  Tensor out = Tensor::zeros({n, K});
  std::copy(a.data.begin() + static_cast<std::ptrdiff_t>(begin * K),
            a.data.begin() + static_cast<std::ptrdiff_t>(end * K), out.data.begin());
  out.node = tape.push(out.size(), [pa, begin, B, K, n](Tape& tp, const std::vector<double>& up) {
    if (pa < 0) return;
    auto& g = tp.grad_buffer(pa, B * K);
    for (std::size_t i = 0; i < n * K; ++i) g[begin * K + i] += up[i];
  });
  out.tape_epoch = tape.epoch();
  out.requires_grad = pa >= 0;
  return out;
}

Tensor sum(Tape& tape, const Tensor& a) {
  int pa = input_node(tape, a, "sum");
  double acc = 0.0;
  for (double x : a.data) acc += x;
  Tensor out = Tensor::scalar(acc);
  const std::size_t n = a.size();
  out.node = tape.push(1, [pa, n](Tape& tp, const std::vector<double>& up) {
    if (pa < 0) return;
    auto& g = tp.grad_buffer(pa, n);
    for (std::size_t i = 0; i < n; ++i) g[i] += up[0];
  });
  out.tape_epoch = tape.epoch();
  out.requires_grad = pa >= 0;
  return out;
}

Tensor mean(Tape& tape, const Tensor& a) {
  if (a.size() == 0) throw TensorError("mean: empty tensor");
  int pa = input_node(tape, a, "mean");
  double acc = 0.0;
  for (double x : a.data) acc += x;
  Tensor out = Tensor::scalar(acc / static_cast<double>(a.size()));
  const std::size_t n = a.size();
  out.node = tape.push(1, [pa, n](Tape& tp, const std::vector<double>& up) {
    if (pa < 0) return;
    auto& g = tp.grad_buffer(pa, n);
    double c = up[0] / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) g[i] += c;
  });
  out.tape_epoch = tape.epoch();
  out.requires_grad = pa >= 0;
  return out;
}

Tensor top_singular_value(Tape& tape, const Tensor& z, const PowerIterOpts& opts,
                          PowerIterReport* report) {
  if (z.rank() != 2) {
    throw TensorError("top_singular_value: rank-2 input required, got " + shape_str(z.shape));
  }
  const std::size_t B = z.shape[0], d = z.shape[1];
  int pz = input_node(tape, z, "top_singular_value");

  SvTriplet t = power_top(z.data, B, d, opts, 0);
  if (report) {
    report->converged = t.converged;
    report->iters = t.iters;
    report->sigma1 = t.sigma;
    report->zero_matrix = t.sigma == 0.0;
    if (t.sigma > 0.0) {
      std::vector<double> zd = z.data;
      deflate(zd, B, d, t);
      SvTriplet t2 = power_top(zd, B, d, opts, 1);
      report->sigma2 = t2.sigma;
      report->tie = std::abs(t.sigma - t2.sigma) <= 1e-10 * std::max(1.0, t.sigma);
    } else {
      report->sigma2 = 0.0;
      report->tie = false;
    }
  }

  Tensor out = Tensor::scalar(t.sigma);
  std::vector<double> adj(B * d, 0.0);
  if (t.sigma > 0.0) {
    for (std::size_t r = 0; r < B; ++r) {
      for (std::size_t c = 0; c < d; ++c) adj[r * d + c] = t.u[r] * t.v[c];
    }
  }
  const std::size_t n = B * d;
  out.node = tape.push(1, [pz, adj = std::move(adj), n](Tape& tp, const std::vector<double>& up) {
    if (pz < 0) return;
    auto& g = tp.grad_buffer(pz, n);
    for (std::size_t i = 0; i < n; ++i) g[i] += up[0] * adj[i];
  });
  out.tape_epoch = tape.epoch();
  out.requires_grad = pz >= 0;
  return out;
}

Tensor spectral_sq_topk(Tape& tape, const Tensor& z, std::size_t k, const PowerIterOpts& opts,
                        PowerIterReport* report) {
  if (z.rank() != 2) {
    throw TensorError("spectral_sq_topk: rank-2 input required, got " + shape_str(z.shape));
  }
  const std::size_t B = z.shape[0], d = z.shape[1];
  if (k == 0 || k > std::min(B, d)) {
    throw TensorError("spectral_sq_topk: k = " + std::to_string(k) + " outside [1, " +
                      std::to_string(std::min(B, d)) + "] for shape " + shape_str(z.shape));
  }
  int pz = input_node(tape, z, "spectral_sq_topk");

  std::vector<double> work = z.data;
  std::vector<double> adj(B * d, 0.0);
  double val = 0.0;
  bool all_converged = true;
  std::vector<double> sigmas;
  for (std::size_t j = 0; j < k; ++j) {
    SvTriplet t = power_top(work, B, d, opts, j);
    all_converged = all_converged && t.converged;
    sigmas.push_back(t.sigma);
    if (t.sigma == 0.0) break;
    val += t.sigma * t.sigma;
    for (std::size_t r = 0; r < B; ++r) {
      for (std::size_t c = 0; c < d; ++c) adj[r * d + c] += 2.0 * t.sigma * t.u[r] * t.v[c];
    }
    deflate(work, B, d, t);
  }
  if (report) {
    report->converged = all_converged;
    report->sigma1 = sigmas.empty() ? 0.0 : sigmas[0];
    report->sigma2 = sigmas.size() > 1 ? sigmas[1] : 0.0;
    report->zero_matrix = report->sigma1 == 0.0;
    report->tie = sigmas.size() > 1 &&
                  std::abs(sigmas[0] - sigmas[1]) <= 1e-10 * std::max(1.0, sigmas[0]);
  }

  Tensor out = Tensor::scalar(val);
  const std::size_t n = B * d;
  out.node = tape.push(1, [pz, adj = std::move(adj), n](Tape& tp, const std::vector<double>& up) {
    if (pz < 0) return;
    auto& g = tp.grad_buffer(pz, n);
    for (std::size_t i = 0; i < n; ++i) g[i] += up[0] * adj[i];
  });
  out.tape_epoch = tape.epoch();
  out.requires_grad = pz >= 0;
  return out;
}

}  // namespace mian
