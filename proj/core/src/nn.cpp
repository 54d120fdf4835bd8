#include "mian/nn.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>

namespace mian {

std::size_t Mlp::in_dim() const { return layers.front().w.shape[0]; }
std::size_t Mlp::out_dim() const { return layers.back().w.shape[1]; }

std::size_t Mlp::param_count() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += l.w.size() + l.b.size();
  return n;
}

Tensor Mlp::forward(Tape& tape, const Tensor& x) {
  Tensor h = x;
  for (auto& l : layers) {
    l.w_node = tape.leaf(l.w);
    l.b_node = tape.leaf(l.b);
    h = add_bias(tape, matmul(tape, h, l.w), l.b);
    if (l.relu_out) h = relu(tape, h);
  }
  return h;
}

Tensor Mlp::forward_frozen(Tape& tape, const Tensor& x) const {
  Tensor h = x;
  for (const auto& l : layers) {
    h = add_bias(tape, matmul(tape, h, detach(l.w)), detach(l.b));
    if (l.relu_out) h = relu(tape, h);
  }
  return h;
}

Tensor Mlp::infer(const Tensor& x) const {
  if (x.rank() != 2 || x.shape[1] != in_dim()) {
    throw TensorError(name + ": input shape " + shape_str(x.shape) + " does not match in_dim " +
                      std::to_string(in_dim()));
  }
  Tensor h = x;
  for (const auto& l : layers) {
    const std::size_t B = h.shape[0], K = h.shape[1], C = l.w.shape[1];
    Tensor nxt = Tensor::zeros({B, C});
    for (std::size_t i = 0; i < B; ++i) {
      const double* hrow = h.data.data() + i * K;
      double* orow = nxt.data.data() + i * C;
      for (std::size_t k = 0; k < K; ++k) {
        double hv = hrow[k];
        if (hv == 0.0) continue;
        const double* wrow = l.w.data.data() + k * C;
        for (std::size_t j = 0; j < C; ++j) orow[j] += hv * wrow[j];
      }
      for (std::size_t j = 0; j < C; ++j) {
        orow[j] += l.b.data[j];
        if (l.relu_out && orow[j] < 0.0) orow[j] = 0.0;
      }
    }
    h = std::move(nxt);
  }
  return h;
}

std::vector<Tensor*> Mlp::params() {
  std::vector<Tensor*> out;
  for (auto& l : layers) {
    out.push_back(&l.w);
    out.push_back(&l.b);
  }
  return out;
}

std::vector<const Tensor*> Mlp::params() const {
  std::vector<const Tensor*> out;
  for (const auto& l : layers) {
    out.push_back(&l.w);
    out.push_back(&l.b);
  }
  return out;
}

std::vector<std::pair<std::string, const Tensor*>> Mlp::named_params() const {
  std::vector<std::pair<std::string, const Tensor*>> out;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    out.emplace_back(name + "." + std::to_string(i) + ".w", &layers[i].w);
    out.emplace_back(name + "." + std::to_string(i) + ".b", &layers[i].b);
  }
  return out;
}

Mlp init_mlp(const std::vector<std::size_t>& dims, Rng& rng, std::string name) {
  if (dims.size() < 2) {
    throw TensorError("init_mlp: need at least {in, out} dims, got " +
                      std::to_string(dims.size()));
  }
  Mlp mlp;
  mlp.name = std::move(name);
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    Mlp::Layer l;
    const std::size_t fan_in = dims[i], fan_out = dims[i + 1];
    l.w = Tensor::zeros({fan_in, fan_out});
    const double a = std::sqrt(6.0 / static_cast<double>(fan_in));
    for (auto& x : l.w.data) x = rng.uniform(-a, a);
    l.b = Tensor::zeros({fan_out});
    l.relu_out = i + 2 < dims.size();
    mlp.layers.push_back(std::move(l));
  }
  return mlp;
}

Mlp init_mlp(const std::vector<std::size_t>& dims, std::uint64_t seed, std::string name) {
  Rng rng(seed);
  return init_mlp(dims, rng, std::move(name));
}

OptimizerState make_sgd_momentum(double lr, double momentum) {
  OptimizerState o;
  o.kind = OptimizerState::Kind::sgd_momentum;
  o.lr = lr;
  o.momentum = momentum;
  return o;
}

OptimizerState make_adam(double lr, double beta1, double beta2, double epsilon) {
  OptimizerState o;
  o.kind = OptimizerState::Kind::adam;
  o.lr = lr;
  o.beta1 = beta1;
  o.beta2 = beta2;
  o.epsilon = epsilon;
  return o;
}

void opt_step(OptimizerState& opt, const std::vector<Tensor*>& params) {
  if (opt.slots.empty()) {
    opt.slots.resize(params.size());
  } else if (opt.slots.size() != params.size()) {
    throw TensorError("opt_step: optimizer tracks " + std::to_string(opt.slots.size()) +
                      " parameters, got " + std::to_string(params.size()));
  }
  for (const Tensor* p : params) {
    if (p->grad.size() != p->data.size()) {
      throw TensorError("opt_step: parameter with " + std::to_string(p->data.size()) +
                        " values has gradient of size " + std::to_string(p->grad.size()));
    }
  }
  opt.step_count += 1;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor& p = *params[pi];
    auto& slot = opt.slots[pi];
    const std::size_t n = p.data.size();
    if (slot.m.empty()) slot.m.assign(n, 0.0);
    if (opt.kind == OptimizerState::Kind::sgd_momentum) {
      for (std::size_t i = 0; i < n; ++i) {
        slot.m[i] = opt.momentum * slot.m[i] + p.grad[i];
        p.data[i] -= opt.lr * slot.m[i];
      }
    } else {
      if (slot.v.empty()) slot.v.assign(n, 0.0);
      const double t = static_cast<double>(opt.step_count);
      const double c1 = 1.0 - std::pow(opt.beta1, t);
      const double c2 = 1.0 - std::pow(opt.beta2, t);
      for (std::size_t i = 0; i < n; ++i) {
        const double g = p.grad[i];
        slot.m[i] = opt.beta1 * slot.m[i] + (1.0 - opt.beta1) * g;
        slot.v[i] = opt.beta2 * slot.v[i] + (1.0 - opt.beta2) * g * g;
        const double mh = slot.m[i] / c1;
        const double vh = slot.v[i] / c2;
        p.data[i] -= opt.lr * mh / (std::sqrt(vh) + opt.epsilon);
      }
    }
    p.grad.clear();
  }
}

namespace {

void put_u16le(std::string& buf, std::uint16_t v) {
  buf.push_back(static_cast<char>(v & 0xff));
  buf.push_back(static_cast<char>((v >> 8) & 0xff));
}

void put_u32le(std::string& buf, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f64le(std::string& buf, double x) {
  std::uint64_t bits;
  std::memcpy(&bits, &x, 8);
  for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

struct Reader {
  const std::string& buf;
  std::size_t pos = 0;

  bool done() const { return pos >= buf.size(); }

  void need(std::size_t n, const char* what) {
    if (pos + n > buf.size()) {
      throw CheckpointError(std::string("checkpoint truncated while reading ") + what);
    }
  }
  std::uint16_t u16le() {
    need(2, "u16");
    std::uint16_t v = static_cast<std::uint8_t>(buf[pos]) |
                      (static_cast<std::uint16_t>(static_cast<std::uint8_t>(buf[pos + 1])) << 8);
    pos += 2;
    return v;
  }
  std::uint8_t u8() {
    need(1, "u8");
    return static_cast<std::uint8_t>(buf[pos++]);
  }
  std::uint32_t u32le() {
    need(4, "u32");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(buf[pos + i])) << (8 * i);
    pos += 4;
    return v;
  }
  double f64le() {
    need(8, "f64");
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(static_cast<std::uint8_t>(buf[pos + i])) << (8 * i);
    pos += 8;
    double x;
    std::memcpy(&x, &bits, 8);
    return x;
  }
  std::string bytes(std::size_t n, const char* what) {
    need(n, what);
    std::string s = buf.substr(pos, n);
    pos += n;
    return s;
  }
};

constexpr char kMagic[4] = {'M', 'I', 'A', 'N'};
constexpr std::uint8_t kVersion = 1;

}  // namespace

void save_checkpoint(const std::string& path,
                     const std::vector<std::pair<std::string, const Tensor*>>& params) {
  std::string buf;
  buf.append(kMagic, 4);
  buf.push_back(static_cast<char>(kVersion));
  for (const auto& [pname, t] : params) {
    if (pname.size() > 0xffff) throw CheckpointError("checkpoint: parameter name too long");
    if (t->rank() > 0xff) throw CheckpointError("checkpoint: rank > 255");
    put_u16le(buf, static_cast<std::uint16_t>(pname.size()));
    buf.append(pname);
    buf.push_back(static_cast<char>(t->rank()));
    for (std::size_t d : t->shape) put_u32le(buf, static_cast<std::uint32_t>(d));
    for (double x : t->data) put_f64le(buf, x);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("checkpoint: cannot open " + path + " for writing");
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw CheckpointError("checkpoint: write failed for " + path);
}

std::vector<std::pair<std::string, Tensor>> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("checkpoint: cannot open " + path);
  std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  Reader r{buf};
  std::string magic = r.bytes(4, "magic");
  if (std::memcmp(magic.data(), kMagic, 4) != 0) {
    throw CheckpointError("checkpoint: bad magic in " + path);
  }
  std::uint8_t version = r.u8();
  if (version != kVersion) {
    throw CheckpointError("checkpoint: unsupported version " + std::to_string(version));
  }
  std::vector<std::pair<std::string, Tensor>> out;
  while (!r.done()) {
    std::uint16_t name_len = r.u16le();
    std::string pname = r.bytes(name_len, "name");
    std::uint8_t rank = r.u8();
    Shape shape(rank);
    for (auto& d : shape) d = r.u32le();
    Tensor t = Tensor::zeros(shape);
    for (auto& x : t.data) x = r.f64le();
    out.emplace_back(std::move(pname), std::move(t));
  }
  return out;
}

}  // namespace mian
