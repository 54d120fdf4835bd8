#include "mian/train.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>

#include "mian/metrics.hpp"

namespace mian {

const char* arm_name(Arm a) {
  switch (a) {
    case Arm::mian: return "mian";
    case Arm::multi_disc: return "multi_disc";
    case Arm::source_only: return "source_only";
  }
  return "unknown";
}

const char* disc_objective_name(DiscObjective o) {
  switch (o) {
    case DiscObjective::softmax: return "softmax";
    case DiscObjective::multibinary: return "multibinary";
    case DiscObjective::least_squares: return "least_squares";
  }
  return "unknown";
}

std::vector<std::pair<std::string, const Tensor*>> ModelBundle::named_params() const {
  std::vector<std::pair<std::string, const Tensor*>> out = encoder.named_params();
  auto cls = classifier.named_params();
  out.insert(out.end(), cls.begin(), cls.end());
  for (const auto& d : discriminators) {
    auto dp = d.named_params();
    out.insert(out.end(), dp.begin(), dp.end());
  }
  return out;
}

namespace {

std::vector<std::size_t> stack_dims(std::size_t in, const std::vector<std::size_t>& hidden,
                                    std::size_t out) {
  std::vector<std::size_t> dims{in};
  dims.insert(dims.end(), hidden.begin(), hidden.end());
  dims.push_back(out);
  return dims;
}

}  // namespace

ModelBundle build_bundle(const TrainConfig& cfg, std::size_t in_dim, std::size_t n_classes,
                         std::size_t n_domains, Rng& rng) {
  if (n_domains < 2) {
    throw std::invalid_argument("build_bundle: need at least one source and one target domain");
  }
  if (n_classes < 2) throw std::invalid_argument("build_bundle: need at least two classes");
  ModelBundle b;
  b.arm = cfg.arm;
  b.n_domains = n_domains;
  b.encoder = init_mlp(stack_dims(in_dim, cfg.encoder_hidden, cfg.latent_dim), rng, "encoder");
  b.classifier =
      init_mlp(stack_dims(cfg.latent_dim, cfg.classifier_hidden, n_classes), rng, "classifier");
  if (cfg.arm == Arm::mian) {
    b.discriminators.push_back(
        init_mlp(stack_dims(cfg.latent_dim, cfg.disc_hidden, n_domains), rng, "disc_0"));
  } else if (cfg.arm == Arm::multi_disc) {
    for (std::size_t k = 0; k + 1 < n_domains; ++k) {
      b.discriminators.push_back(init_mlp(stack_dims(cfg.latent_dim, cfg.disc_hidden, 2), rng,
                                          "disc_" + std::to_string(k)));
    }
  }
  return b;
}

namespace {

Mlp mlp_from_tensors(const std::string& name, std::map<std::size_t, Tensor>& ws,
                     std::map<std::size_t, Tensor>& bs) {
  if (ws.size() != bs.size() || ws.empty()) {
    throw CheckpointError("checkpoint model '" + name + "' has mismatched weight/bias records");
  }
  Mlp m;
  m.name = name;
  std::size_t expect = 0;
  for (auto& [idx, w] : ws) {
    if (idx != expect) {
      throw CheckpointError("checkpoint model '" + name + "' is missing layer " +
                            std::to_string(expect));
    }
    auto bit = bs.find(idx);
    if (bit == bs.end()) {
      throw CheckpointError("checkpoint model '" + name + "' lacks a bias for layer " +
                            std::to_string(idx));
    }
    Tensor& b = bit->second;
    if (w.rank() != 2 || b.rank() != 1 || b.shape[0] != w.shape[1]) {
      throw CheckpointError("checkpoint model '" + name + "' layer " + std::to_string(idx) +
                            " has inconsistent shapes " + shape_str(w.shape) + " / " +
                            shape_str(b.shape));
    }
    if (!m.layers.empty() && m.layers.back().w.shape[1] != w.shape[0]) {
      throw CheckpointError("checkpoint model '" + name + "' layer " + std::to_string(idx) +
                            " does not chain with the previous layer");
    }
    Mlp::Layer layer;
    layer.w = std::move(w);
    layer.b = std::move(b);
    layer.w.requires_grad = true;
    layer.b.requires_grad = true;
    m.layers.push_back(std::move(layer));
    ++expect;
  }
  for (auto& layer : m.layers) layer.relu_out = true;
  m.layers.back().relu_out = false;
  return m;
}

}  // namespace

ModelBundle bundle_from_checkpoint(const std::vector<std::pair<std::string, Tensor>>& params) {
  double arm_code = -1.0, nd_code = -1.0;
  // model -> layer index -> tensor
  std::map<std::string, std::map<std::size_t, Tensor>> ws, bs;
  for (const auto& [name, t] : params) {
    if (name == "meta.arm") {
      arm_code = t.data.empty() ? -1.0 : t.data[0];
      continue;
    }
    if (name == "meta.n_domains") {
      nd_code = t.data.empty() ? -1.0 : t.data[0];
      continue;
    }
    const auto dot1 = name.find('.');
    const auto dot2 = name.find('.', dot1 == std::string::npos ? dot1 : dot1 + 1);
    if (dot1 == std::string::npos || dot2 == std::string::npos) {
      throw CheckpointError("unrecognized checkpoint record '" + name + "'");
    }
    const std::string model = name.substr(0, dot1);
    const std::string idx_str = name.substr(dot1 + 1, dot2 - dot1 - 1);
    const std::string kind = name.substr(dot2 + 1);
    std::size_t idx = 0;
    auto [p, ec] = std::from_chars(idx_str.data(), idx_str.data() + idx_str.size(), idx);
    if (ec != std::errc() || p != idx_str.data() + idx_str.size()) {
      throw CheckpointError("unrecognized checkpoint record '" + name + "'");
    }
    if (kind == "w") {
      ws[model][idx] = t;
    } else if (kind == "b") {
      bs[model][idx] = t;
    } else {
      throw CheckpointError("unrecognized checkpoint record '" + name + "'");
    }
  }
  if (arm_code < 0.0 || nd_code < 1.0) {
    throw CheckpointError("checkpoint lacks meta.arm / meta.n_domains records");
  }

  ModelBundle b;
  b.arm = static_cast<Arm>(static_cast<int>(arm_code));
  if (b.arm != Arm::mian && b.arm != Arm::multi_disc && b.arm != Arm::source_only) {
    throw CheckpointError("checkpoint meta.arm value out of range");
  }
  b.n_domains = static_cast<std::size_t>(nd_code);

  auto take = [&](const std::string& model) {
    auto wit = ws.find(model);
    auto bit = bs.find(model);
    if (wit == ws.end() || bit == bs.end()) {
      throw CheckpointError("checkpoint lacks model '" + model + "'");
    }
    Mlp m = mlp_from_tensors(model, wit->second, bit->second);
    ws.erase(wit);
    bs.erase(bit);
    return m;
  };

  b.encoder = take("encoder");
  b.classifier = take("classifier");
  const std::size_t n_discs = b.arm == Arm::mian          ? 1
                              : b.arm == Arm::multi_disc ? b.n_domains - 1
                                                         : 0;
  for (std::size_t k = 0; k < n_discs; ++k) {
    b.discriminators.push_back(take("disc_" + std::to_string(k)));
  }
  if (!ws.empty()) {
    throw CheckpointError("checkpoint carries an unexpected model '" + ws.begin()->first + "'");
  }

  if (b.classifier.in_dim() != b.encoder.out_dim()) {
    throw CheckpointError("checkpoint classifier does not accept the encoder output");
  }
  for (const auto& d : b.discriminators) {
    if (d.in_dim() != b.encoder.out_dim()) {
      throw CheckpointError("checkpoint discriminator does not accept the encoder output");
    }
  }
  if (b.arm == Arm::mian && b.discriminators[0].out_dim() != b.n_domains) {
    throw CheckpointError("checkpoint unified discriminator width disagrees with meta.n_domains");
  }
  if (b.arm == Arm::multi_disc) {
    for (const auto& d : b.discriminators) {
      if (d.out_dim() != 2) {
        throw CheckpointError("checkpoint pairwise discriminator must have two outputs");
      }
    }
  }
  return b;
}

void save_bundle(const std::string& path, const ModelBundle& bundle) {
  Tensor arm = Tensor::scalar(static_cast<double>(static_cast<int>(bundle.arm)));
  Tensor nd = Tensor::scalar(static_cast<double>(bundle.n_domains));
  std::vector<std::pair<std::string, const Tensor*>> params{{"meta.arm", &arm},
                                                            {"meta.n_domains", &nd}};
  auto model_params = bundle.named_params();
  params.insert(params.end(), model_params.begin(), model_params.end());
  save_checkpoint(path, params);
}

ModelBundle load_bundle(const std::string& path) {
  return bundle_from_checkpoint(load_checkpoint(path));
}

namespace {

std::string fmt_double(double x) {
  char buf[32];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, end);
}

std::string fmt_opt(const std::optional<double>& x) { return x ? fmt_double(*x) : std::string(); }

constexpr const char* kMetricsHeader =
    "step,loss_cls,loss_disc,beta,gamma,acc_source_avg,acc_target,svd_entropy_src,"
    "svd_entropy_tgt";

}  // namespace

void write_metrics_csv(const std::string& path, const std::vector<MetricsRecord>& records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open " + path + " for writing");
  out << kMetricsHeader << "\n";
  for (const auto& r : records) {
    out << r.step << "," << fmt_opt(r.loss_cls) << "," << fmt_opt(r.loss_disc) << ","
        << fmt_opt(r.beta) << "," << fmt_opt(r.gamma) << "," << fmt_opt(r.acc_source_avg) << ","
        << fmt_opt(r.acc_target) << "," << fmt_opt(r.svd_entropy_src) << ","
        << fmt_opt(r.svd_entropy_tgt) << "\n";
  }
  if (!out) throw DataError("write to " + path + " failed");
}

std::vector<MetricsRecord> read_metrics_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw DataError(path + " is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kMetricsHeader) throw DataError(path + ":1: unexpected metrics header");

  auto parse_opt = [&](std::string_view s, std::size_t line_no) -> std::optional<double> {
    if (s.empty()) return std::nullopt;
    double x = 0.0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), x);
    if (ec != std::errc() || p != s.data() + s.size()) {
      throw DataError(path + ":" + std::to_string(line_no) + ": bad numeric field '" +
                      std::string(s) + "'");
    }
    return x;
  };

  std::vector<MetricsRecord> records;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string_view> fields;
    std::string_view sv = line;
    std::size_t start = 0;
    for (std::size_t i = 0; i <= sv.size(); ++i) {
      if (i == sv.size() || sv[i] == ',') {
        fields.push_back(sv.substr(start, i - start));
        start = i + 1;
      }
    }
    if (fields.size() != 9) {
      throw DataError(path + ":" + std::to_string(line_no) + ": expected 9 fields, got " +
                      std::to_string(fields.size()));
    }
    MetricsRecord r;
    std::size_t step = 0;
    auto [p, ec] = std::from_chars(fields[0].data(), fields[0].data() + fields[0].size(), step);
    if (ec != std::errc() || p != fields[0].data() + fields[0].size()) {
      throw DataError(path + ":" + std::to_string(line_no) + ": bad step field");
    }
    r.step = step;
    r.loss_cls = parse_opt(fields[1], line_no);
    r.loss_disc = parse_opt(fields[2], line_no);
    r.beta = parse_opt(fields[3], line_no);
    r.gamma = parse_opt(fields[4], line_no);
    r.acc_source_avg = parse_opt(fields[5], line_no);
    r.acc_target = parse_opt(fields[6], line_no);
    r.svd_entropy_src = parse_opt(fields[7], line_no);
    r.svd_entropy_tgt = parse_opt(fields[8], line_no);
    records.push_back(r);
  }
  return records;
}

PairBatch pair_batch(const MultiDomainBatch& batch, std::size_t k) {
  if (batch.n_domains < 2 || k + 1 >= batch.n_domains) {
    throw DataError("pair_batch: pair index " + std::to_string(k) + " out of range for " +
                    std::to_string(batch.n_domains) + " domains");
  }
  const std::size_t m = batch.m, d = batch.x.cols();
  PairBatch pb;
  pb.x = Tensor::zeros({2 * m, d});
  pb.binary_domains.assign(2 * m, 1);
  const std::size_t src_off = k * m, tgt_off = (batch.n_domains - 1) * m;
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      pb.x.at(i, j) = batch.x.at(src_off + i, j);
      pb.x.at(m + i, j) = batch.x.at(tgt_off + i, j);
    }
    pb.binary_domains[m + i] = 2;
  }
  return pb;
}

double eval_accuracy(const ModelBundle& bundle, const DomainDataset& ds, std::uint8_t split) {
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < ds.n(); ++i) {
    if (ds.split[i] == split) rows.push_back(i);
  }
  if (rows.empty()) {
    throw DataError("eval_accuracy: domain " + std::to_string(ds.domain_label) +
                    " has no rows with split tag " + std::to_string(split));
  }
  Tensor x = Tensor::zeros({rows.size(), ds.dim()});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (ds.labels[rows[i]] < 0) {
      throw DataError("eval_accuracy: row " + std::to_string(rows[i]) + " of domain " +
                      std::to_string(ds.domain_label) + " is unlabeled");
    }
    for (std::size_t j = 0; j < ds.dim(); ++j) x.at(i, j) = ds.features.at(rows[i], j);
  }
  Tensor logits = bundle.classifier.infer(bundle.encoder.infer(x));
  std::size_t hits = 0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < logits.cols(); ++j) {
      if (logits.at(i, j) > logits.at(i, best)) best = j;
    }
    hits += static_cast<int>(best) == ds.labels[rows[i]];
  }
  return static_cast<double>(hits) / static_cast<double>(rows.size());
}

namespace {

Tensor head_rows(const Tensor& x, std::size_t n) {
  Tensor out = Tensor::zeros({n, x.cols()});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < x.cols(); ++j) out.at(i, j) = x.at(i, j);
  }
  return out;
}

Tensor disc_objective_loss(Tape& tape, DiscObjective obj, const Tensor& logits,
                           const std::vector<int>& domains) {
  switch (obj) {
    case DiscObjective::softmax: return disc_loss_softmax(tape, logits, domains);
    case DiscObjective::multibinary: return disc_loss_multibinary(tape, logits, domains);
    case DiscObjective::least_squares: return disc_loss_least_squares(tape, logits, domains);
  }
  throw std::invalid_argument("unknown discriminator objective");
}

OptimizerState make_optimizer(const TrainConfig& cfg, double lr) {
  if (cfg.optimizer == TrainConfig::Opt::adam) {
    return make_adam(lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_epsilon);
  }
  return make_sgd_momentum(lr, cfg.momentum);
}

void check_nan(double value, std::size_t step, const char* which) {
  if (std::isnan(value)) throw DivergedError(step, which);
}

using Snapshot = std::vector<std::vector<double>>;

Snapshot snap_params(const std::vector<const Tensor*>& params) {
  Snapshot s;
  s.reserve(params.size());
  for (const Tensor* p : params) s.push_back(p->data);
  return s;
}

void verify_frozen(const Snapshot& before, const std::vector<const Tensor*>& params,
                   const char* pass, std::size_t step) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& now = params[i]->data;
    if (now.size() != before[i].size() ||
        std::memcmp(now.data(), before[i].data(), now.size() * sizeof(double)) != 0) {
      throw std::logic_error(std::string("frozen parameters changed during the ") + pass +
                             " pass at step " + std::to_string(step));
    }
  }
}

std::vector<const Tensor*> const_params(const ModelBundle& b, bool enc, bool cls, bool discs) {
  std::vector<const Tensor*> out;
  auto append = [&](const Mlp& m) {
    auto ps = m.params();
    out.insert(out.end(), ps.begin(), ps.end());
  };
  if (enc) append(b.encoder);
  if (cls) append(b.classifier);
  if (discs) {
    for (const auto& d : b.discriminators) append(d);
  }
  return out;
}

// First train rows per domain, balanced across source domains, capped.
Tensor entropy_rows(const std::vector<DomainDataset>& domains, bool target, std::size_t cap) {
  std::vector<std::pair<std::size_t, std::size_t>> picks;  // (domain, row)
  if (target) {
    const auto& ds = domains.back();
    for (std::size_t i = 0; i < ds.n() && picks.size() < cap; ++i) {
      if (ds.split[i] == 0) picks.emplace_back(domains.size() - 1, i);
    }
  } else {
    const std::size_t n_src = domains.size() - 1;
    const std::size_t quota = std::max<std::size_t>(1, cap / n_src);
    for (std::size_t v = 0; v < n_src; ++v) {
      std::size_t taken = 0;
      for (std::size_t i = 0; i < domains[v].n() && taken < quota; ++i) {
        if (domains[v].split[i] == 0) {
          picks.emplace_back(v, i);
          ++taken;
        }
      }
    }
  }
  if (picks.empty()) throw DataError("entropy_rows: no train rows available");
  const std::size_t d = domains[0].dim();
  Tensor out = Tensor::zeros({picks.size(), d});
  for (std::size_t i = 0; i < picks.size(); ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      out.at(i, j) = domains[picks[i].first].features.at(picks[i].second, j);
    }
  }
  return out;
}

struct MetricsProbe {
  const std::vector<DomainDataset>& domains;
  const TrainConfig& cfg;
  Tensor src_rows, tgt_rows;

  MetricsProbe(const std::vector<DomainDataset>& doms, const TrainConfig& c)
      : domains(doms), cfg(c) {
    if (cfg.entropy_in_metrics) {
      src_rows = entropy_rows(domains, false, cfg.entropy_row_cap);
      tgt_rows = entropy_rows(domains, true, cfg.entropy_row_cap);
    }
  }

  void fill(MetricsRecord& r, const ModelBundle& bundle) const {
    double acc = 0.0;
    for (std::size_t v = 0; v + 1 < domains.size(); ++v) {
      acc += eval_accuracy(bundle, domains[v]);
    }
    r.acc_source_avg = acc / static_cast<double>(domains.size() - 1);
    r.acc_target = eval_accuracy(bundle, domains.back());
    if (cfg.entropy_in_metrics) {
      r.svd_entropy_src = svd_entropy(bundle.encoder.infer(src_rows));
      r.svd_entropy_tgt = svd_entropy(bundle.encoder.infer(tgt_rows));
    }
  }
};

TrainResult run_training(const std::vector<DomainDataset>& domains, const TrainConfig& cfg) {
  if (domains.size() < 2) {
    throw std::invalid_argument("train: need at least one source and one target domain");
  }
  if (cfg.steps == 0) throw std::invalid_argument("train: steps must be >= 1");
  if (cfg.m == 0) throw std::invalid_argument("train: batch rows per domain must be >= 1");

  int n_classes = 0;
  for (std::size_t v = 0; v + 1 < domains.size(); ++v) {
    for (std::size_t i = 0; i < domains[v].n(); ++i) {
      if (domains[v].split[i] == 0) n_classes = std::max(n_classes, domains[v].labels[i] + 1);
    }
  }
  if (n_classes < 2) {
    throw std::invalid_argument("train: source train rows carry fewer than two classes");
  }

  Rng rng(cfg.seed);
  ModelBundle bundle = build_bundle(cfg, domains[0].dim(), static_cast<std::size_t>(n_classes),
                                    domains.size(), rng);

  OptimizerState enc_opt = make_optimizer(cfg, cfg.lr);
  OptimizerState cls_opt = make_optimizer(cfg, cfg.lr);
  OptimizerState disc_opt = make_optimizer(cfg, cfg.lr * cfg.disc_lr_multiplier);

  std::vector<Tensor*> enc_params = bundle.encoder.params();
  std::vector<Tensor*> cls_params = bundle.classifier.params();
  std::vector<Tensor*> disc_params;
  for (auto& d : bundle.discriminators) {
    auto ps = d.params();
    disc_params.insert(disc_params.end(), ps.begin(), ps.end());
  }

  const bool adversarial = cfg.arm != Arm::source_only;
  const std::size_t nd = domains.size();
  const std::size_t src_rows = (nd - 1) * cfg.m;
  const ScheduleCfg beta_cfg{cfg.beta0, cfg.sigma};
  const ScheduleCfg gamma_cfg{cfg.gamma0, cfg.sigma};

  MetricsProbe probe(domains, cfg);
  std::vector<MetricsRecord> records;
  {
    MetricsRecord r0;
    r0.step = 0;
    if (adversarial) {
      r0.beta = cfg.beta0;
      if (cfg.bsp_enabled) r0.gamma = cfg.gamma_anneal ? 0.0 : cfg.gamma0;
    }
    probe.fill(r0, bundle);
    records.push_back(r0);
  }

  for (std::size_t t = 1; t <= cfg.steps; ++t) {
    MultiDomainBatch batch = make_batch(domains, cfg.m, rng);
    const double p = static_cast<double>(t) / static_cast<double>(cfg.steps);
    const double beta_t = cfg.beta_anneal ? beta_schedule(beta_cfg, p) : cfg.beta0;
    const double gamma_t =
        cfg.bsp_enabled ? (cfg.gamma_anneal ? gamma_schedule(gamma_cfg, p) : cfg.gamma0) : 0.0;

    double cls_value = 0.0, disc_value = 0.0;

    if (!adversarial) {
      Tensor x_src = head_rows(batch.x, src_rows);
      Tape tape;
      Tensor z = bundle.encoder.forward(tape, x_src);
      Tensor logits = bundle.classifier.forward(tape, z);
      Tensor loss = source_classification_loss(tape, logits, batch.labels);
      cls_value = loss.item();
      check_nan(cls_value, t, "classifier");
      tape.backward(loss);
      for (Tensor* pm : enc_params) tape.export_grad(*pm);
      for (Tensor* pm : cls_params) tape.export_grad(*pm);
      opt_step(enc_opt, enc_params);
      opt_step(cls_opt, cls_params);
    } else {
      // Discriminator pass: encoder output enters as plain data.
      Snapshot frozen1;
      if (cfg.check_freeze) frozen1 = snap_params(const_params(bundle, true, true, false));
      Tensor z_const = bundle.encoder.infer(batch.x);
      if (bundle.arm == Arm::mian) {
        Tape td;
        Tensor logits = bundle.discriminators[0].forward(td, z_const);
        Tensor dl = disc_objective_loss(td, cfg.disc_objective, logits, batch.domains);
        disc_value = dl.item();
        check_nan(disc_value, t, "discriminator");
        td.backward(dl);
        for (Tensor* pm : disc_params) td.export_grad(*pm);
      } else {
        MultiDomainBatch zb;
        zb.x = z_const;
        zb.m = batch.m;
        zb.n_domains = batch.n_domains;
        double mean_sum = 0.0;
        for (std::size_t k = 0; k + 1 < nd; ++k) {
          PairBatch pb = pair_batch(zb, k);
          Tape tk;
          Tensor logits = bundle.discriminators[k].forward(tk, pb.x);
          Tensor dl = disc_objective_loss(tk, cfg.disc_objective, logits, pb.binary_domains);
          const double v = dl.item();
          check_nan(v, t, "discriminator");
          mean_sum += v;
          tk.backward(dl);
          for (Tensor* pm : bundle.discriminators[k].params()) tk.export_grad(*pm);
        }
        disc_value = 2.0 * mean_sum / static_cast<double>(nd);
      }
      opt_step(disc_opt, disc_params);
      if (cfg.check_freeze) {
        verify_frozen(frozen1, const_params(bundle, true, true, false), "discriminator", t);
      }

      // Encoder pass: classification minus the scaled adversarial term.
      Snapshot frozen2;
      if (cfg.check_freeze) frozen2 = snap_params(const_params(bundle, false, true, true));
      Tape te;
      Tensor z = bundle.encoder.forward(te, batch.x);
      Tensor z_src = slice_rows(te, z, 0, src_rows);
      Tensor cls_logits = bundle.classifier.forward_frozen(te, z_src);
      Tensor l_cls = source_classification_loss(te, cls_logits, batch.labels);
      cls_value = l_cls.item();
      check_nan(cls_value, t, "classifier");

      Tensor l_adv;
      if (bundle.arm == Arm::mian) {
        Tensor logits = bundle.discriminators[0].forward_frozen(te, z);
        l_adv = disc_objective_loss(te, cfg.disc_objective, logits, batch.domains);
      } else {
        const std::vector<int> src_lab(cfg.m, 1), tgt_lab(cfg.m, 2);
        Tensor z_tgt = slice_rows(te, z, src_rows, nd * cfg.m);
        Tensor acc;
        for (std::size_t k = 0; k + 1 < nd; ++k) {
          Tensor zk = slice_rows(te, z, k * cfg.m, (k + 1) * cfg.m);
          Tensor ls = disc_objective_loss(
              te, cfg.disc_objective, bundle.discriminators[k].forward_frozen(te, zk), src_lab);
          Tensor lt = disc_objective_loss(
              te, cfg.disc_objective, bundle.discriminators[k].forward_frozen(te, z_tgt), tgt_lab);
          Tensor term = add(te, scale(te, ls, 0.5), scale(te, lt, 0.5));
          acc = k == 0 ? term : add(te, acc, term);
        }
        l_adv = scale(te, acc, 2.0 / static_cast<double>(nd));
      }
      Tensor total = encoder_adversarial_loss(te, l_cls, l_adv, beta_t);
      if (cfg.bsp_enabled) {
        std::vector<Tensor> blocks;
        for (std::size_t v = 0; v < nd; ++v) {
          blocks.push_back(slice_rows(te, z, v * cfg.m, (v + 1) * cfg.m));
        }
        Tensor pen = bsp_penalty(te, blocks, cfg.bsp_k, cfg.power_opts);
        total = add(te, total, scale(te, pen, gamma_t));
      }
      check_nan(total.item(), t, "encoder");
      te.backward(total);
      for (Tensor* pm : enc_params) te.export_grad(*pm);
      opt_step(enc_opt, enc_params);
      if (cfg.check_freeze) {
        verify_frozen(frozen2, const_params(bundle, false, true, true), "encoder", t);
      }

      // Classifier pass on the same batch's source rows, encoder frozen.
      Snapshot frozen3;
      if (cfg.check_freeze) frozen3 = snap_params(const_params(bundle, true, false, true));
      Tensor z3 = bundle.encoder.infer(head_rows(batch.x, src_rows));
      Tape tc;
      Tensor logits3 = bundle.classifier.forward(tc, z3);
      Tensor l3 = source_classification_loss(tc, logits3, batch.labels);
      check_nan(l3.item(), t, "classifier");
      tc.backward(l3);
      for (Tensor* pm : cls_params) tc.export_grad(*pm);
      opt_step(cls_opt, cls_params);
      if (cfg.check_freeze) {
        verify_frozen(frozen3, const_params(bundle, true, false, true), "classifier", t);
      }
    }

    const bool record_now =
        (cfg.metrics_every != 0 && t % cfg.metrics_every == 0) || t == cfg.steps;
    if (record_now) {
      MetricsRecord r;
      r.step = t;
      r.loss_cls = cls_value;
      if (adversarial) {
        r.loss_disc = disc_value;
        r.beta = beta_t;
        if (cfg.bsp_enabled) r.gamma = gamma_t;
      }
      probe.fill(r, bundle);
      records.push_back(r);
    }
  }

  return TrainResult{std::move(bundle), std::move(records)};
}

}  // namespace

TrainResult train_mian(const std::vector<DomainDataset>& domains, const TrainConfig& cfg) {
  TrainConfig c = cfg;
  c.arm = Arm::mian;
  return run_training(domains, c);
}

TrainResult train_multi_disc_baseline(const std::vector<DomainDataset>& domains,
                                      const TrainConfig& cfg) {
  TrainConfig c = cfg;
  c.arm = Arm::multi_disc;
  return run_training(domains, c);
}

TrainResult train_source_only(const std::vector<DomainDataset>& domains, const TrainConfig& cfg) {
  TrainConfig c = cfg;
  c.arm = Arm::source_only;
  return run_training(domains, c);
}

TrainResult train_arm(const std::vector<DomainDataset>& domains, const TrainConfig& cfg) {
  return run_training(domains, cfg);
}

}  // namespace mian
