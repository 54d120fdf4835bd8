#include "mian/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "mian/objectives.hpp"
#include "mian/rng.hpp"

#include <json.hpp>

namespace mian {

std::vector<double> jacobi_singular_values(const Tensor& a) {
  if (a.rank() != 2) {
    throw MetricsError("jacobi_singular_values: rank-2 input required, got " +
                       shape_str(a.shape));
  }
  // Work on the tall orientation so columns are the short side.
  std::size_t m = a.shape[0], n = a.shape[1];
  std::vector<double> w;
  if (m >= n) {
    w = a.data;
  } else {
    w.resize(a.size());
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) w[j * m + i] = a.data[i * n + j];
    }
    std::swap(m, n);
  }

  // One-sided Jacobi: rotate column pairs until all are orthogonal.
  const double eps = 1e-15;
  for (std::size_t sweep = 0; sweep < 60; ++sweep) {
    bool rotated = false;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        double app = 0.0, aqq = 0.0, apq = 0.0;
        for (std::size_t i = 0; i < m; ++i) {
          const double xp = w[i * n + p], xq = w[i * n + q];
          app += xp * xp;
          aqq += xq * xq;
          apq += xp * xq;
        }
        if (std::abs(apq) <= eps * std::sqrt(app * aqq)) continue;
        rotated = true;
        const double theta = 0.5 * std::atan2(2.0 * apq, app - aqq);
        const double c = std::cos(theta), s = std::sin(theta);
        for (std::size_t i = 0; i < m; ++i) {
          const double xp = w[i * n + p], xq = w[i * n + q];
          w[i * n + p] = c * xp + s * xq;
          w[i * n + q] = -s * xp + c * xq;
        }
      }
    }
    if (!rotated) break;
  }

  std::vector<double> sv(n, 0.0);
  for (std::size_t j = 0; j < n; ++j) {
    double acc = 0.0;
    for (std::size_t i = 0; i < m; ++i) acc += w[i * n + j] * w[i * n + j];
    sv[j] = std::sqrt(acc);
  }
  std::sort(sv.begin(), sv.end(), std::greater<>());
  return sv;
}

SvdEntropyReport svd_entropy_report(const Tensor& reps) {
  SvdEntropyReport rep;
  auto sv = jacobi_singular_values(reps);
  rep.values = sv.size();
  double total = 0.0;
  for (double s : sv) total += s * s;
  if (total == 0.0) {
    rep.zero_matrix = true;
    rep.value = 0.0;
    return rep;
  }
  double h = 0.0;
  for (double s : sv) {
    const double rho = s * s / total;
    if (rho > 0.0) h -= rho * std::log(rho);
  }
  rep.value = h;
  return rep;
}

double svd_entropy(const Tensor& reps) { return svd_entropy_report(reps).value; }

std::string ProbeReport::to_json_line() const {
  nlohmann::json j;
  j["name"] = name;
  j["value"] = value;
  j["auxiliary"] = auxiliary;
  return j.dump();
}

namespace {

// Caps each domain's rows, then splits per domain into train/held.
struct SplitPlan {
  std::vector<std::size_t> train_idx, held_idx;
};

SplitPlan plan_split(const std::vector<int>& domains, int n_classes, const ProbeCfg& cfg,
                     Rng& rng) {
  SplitPlan plan;
  for (int c = 1; c <= n_classes; ++c) {
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < domains.size(); ++i) {
      if (domains[i] == c) rows.push_back(i);
    }
    if (rows.size() < 4) {
      throw MetricsError("probe split: domain " + std::to_string(c) + " has only " +
                         std::to_string(rows.size()) + " rows (need >= 4)");
    }
    for (std::size_t i = rows.size(); i > 1; --i) {
      std::size_t j = rng.below(i);
      std::swap(rows[i - 1], rows[j]);
    }
    if (rows.size() > cfg.sample_cap) rows.resize(cfg.sample_cap);
    const std::size_t n_train = std::max<std::size_t>(
        2, std::min(rows.size() - 2,
                    static_cast<std::size_t>(std::llround(cfg.train_fraction *
                                                          static_cast<double>(rows.size())))));
    for (std::size_t i = 0; i < rows.size(); ++i) {
      (i < n_train ? plan.train_idx : plan.held_idx).push_back(rows[i]);
    }
  }
  std::sort(plan.train_idx.begin(), plan.train_idx.end());
  std::sort(plan.held_idx.begin(), plan.held_idx.end());
  return plan;
}

Tensor gather_rows(const Tensor& src, const std::vector<std::size_t>& idx) {
  const std::size_t d = src.cols();
  Tensor out = Tensor::zeros({idx.size(), d});
  for (std::size_t i = 0; i < idx.size(); ++i) {
    for (std::size_t j = 0; j < d; ++j) out.at(i, j) = src.at(idx[i], j);
  }
  return out;
}

double mean_loglik(const Mlp& model, const Tensor& x, const std::vector<int>& labels0) {
  Tensor logits = model.infer(x);
  const std::size_t B = logits.rows(), K = logits.cols();
  double acc = 0.0;
  for (std::size_t i = 0; i < B; ++i) {
    double mx = logits.at(i, 0);
    for (std::size_t j = 1; j < K; ++j) mx = std::max(mx, logits.at(i, j));
    double s = 0.0;
    for (std::size_t j = 0; j < K; ++j) s += std::exp(logits.at(i, j) - mx);
    acc += logits.at(i, static_cast<std::size_t>(labels0[i])) - mx - std::log(s);
  }
  return acc / static_cast<double>(B);
}

}  // namespace

DomainProbeFit train_domain_probe(const Tensor& reps, const std::vector<int>& domains,
                                  const ProbeCfg& cfg) {
  if (reps.rank() != 2) throw MetricsError("domain probe: rank-2 representations required");
  if (domains.size() != reps.shape[0]) {
    throw MetricsError("domain probe: " + std::to_string(domains.size()) + " domain labels for " +
                       std::to_string(reps.shape[0]) + " rows");
  }
  int n_classes = 0;
  for (int v : domains) {
    if (v < 1) throw MetricsError("domain probe: domain labels must be >= 1");
    n_classes = std::max(n_classes, v);
  }
  if (n_classes < 2) {
    throw MetricsError("domain probe: a single domain value carries no domain information");
  }

  Rng rng(cfg.seed);
  auto plan = plan_split(domains, n_classes, cfg, rng);

  Tensor x_train = gather_rows(reps, plan.train_idx);
  std::vector<int> y_train;
  y_train.reserve(plan.train_idx.size());
  for (auto i : plan.train_idx) y_train.push_back(domains[i] - 1);

  DomainProbeFit fit;
  fit.n_classes = n_classes;
  fit.model = init_mlp({reps.shape[1], cfg.hidden, static_cast<std::size_t>(n_classes)}, rng,
                       "domain_probe");
  auto opt = make_adam(cfg.lr);
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    Tape tape;
    Tensor logits = fit.model.forward(tape, x_train);
    Tensor loss = source_classification_loss(tape, logits, y_train);
    tape.backward(loss);
    auto params = fit.model.params();
    for (Tensor* p : params) tape.export_grad(*p);
    opt_step(opt, params);
  }

  Tensor x_held = gather_rows(reps, plan.held_idx);
  std::vector<int> y_held;
  y_held.reserve(plan.held_idx.size());
  for (auto i : plan.held_idx) y_held.push_back(domains[i] - 1);
  fit.heldout_mean_loglik = mean_loglik(fit.model, x_held, y_held);
  fit.train_idx = std::move(plan.train_idx);
  fit.held_idx = std::move(plan.held_idx);
  return fit;
}

ProbeReport empirical_mutual_information(const Tensor& reps, const std::vector<int>& domains,
                                         const ProbeCfg& cfg) {
  auto fit = train_domain_probe(reps, domains, cfg);
  const double hv = std::log(static_cast<double>(fit.n_classes));
  const double raw = fit.heldout_mean_loglik + hv;
  ProbeReport rep;
  rep.name = "empirical_mutual_information";
  rep.value = std::max(raw, 0.0);
  rep.auxiliary["raw"] = raw;
  rep.auxiliary["heldout_mean_loglik"] = fit.heldout_mean_loglik;
  rep.auxiliary["log_n_domains"] = hv;
  rep.auxiliary["n_train"] = static_cast<double>(fit.train_idx.size());
  rep.auxiliary["n_held"] = static_cast<double>(fit.held_idx.size());
  return rep;
}

ProbeReport proxy_a_distance(const Tensor& src_reps, const Tensor& tgt_reps, const ProbeCfg& cfg) {
  if (src_reps.rank() != 2 || tgt_reps.rank() != 2 || src_reps.shape[1] != tgt_reps.shape[1]) {
    throw MetricsError("proxy_a_distance: two rank-2 inputs on a shared feature space required");
  }
  const std::size_t ns = src_reps.shape[0], nt = tgt_reps.shape[0], d = src_reps.shape[1];
  Tensor all = Tensor::zeros({ns + nt, d});
  std::vector<int> domains(ns + nt);
  for (std::size_t i = 0; i < ns; ++i) {
    for (std::size_t j = 0; j < d; ++j) all.at(i, j) = src_reps.at(i, j);
    domains[i] = 1;
  }
  for (std::size_t i = 0; i < nt; ++i) {
    for (std::size_t j = 0; j < d; ++j) all.at(ns + i, j) = tgt_reps.at(i, j);
    domains[ns + i] = 2;
  }
  auto fit = train_domain_probe(all, domains, cfg);

  Tensor x_held = gather_rows(all, fit.held_idx);
  Tensor logits = fit.model.infer(x_held);
  std::size_t wrong = 0;
  for (std::size_t i = 0; i < fit.held_idx.size(); ++i) {
    const int pred = logits.at(i, 1) > logits.at(i, 0) ? 2 : 1;
    wrong += pred != domains[fit.held_idx[i]];
  }
  const double eps = static_cast<double>(wrong) / static_cast<double>(fit.held_idx.size());
  const double raw = 2.0 * (1.0 - 2.0 * eps);
  ProbeReport rep;
  rep.name = "proxy_a_distance";
  rep.value = std::clamp(raw, 0.0, 2.0);
  rep.auxiliary["raw"] = raw;
  rep.auxiliary["heldout_error"] = eps;
  rep.auxiliary["n_held"] = static_cast<double>(fit.held_idx.size());
  return rep;
}

namespace {

ProbeReport hdiv_from_predictions(const std::vector<int>& domains,
                                  const std::vector<int>& predictions, int n_classes) {
  double total = 0.0;
  ProbeReport rep;
  rep.name = "empirical_hdiv_mixture";
  for (int v = 1; v <= n_classes; ++v) {
    std::size_t n_v = 0, n_rest = 0, fn = 0, fp = 0;
    for (std::size_t i = 0; i < domains.size(); ++i) {
      if (domains[i] == v) {
        ++n_v;
        fn += predictions[i] != v;
      } else {
        ++n_rest;
        fp += predictions[i] == v;
      }
    }
    if (n_v == 0 || n_rest == 0) {
      throw MetricsError("empirical_hdiv_mixture: domain " + std::to_string(v) +
                         " missing from one side of the one-vs-rest split");
    }
    const double fn_rate = static_cast<double>(fn) / static_cast<double>(n_v);
    const double fp_rate = static_cast<double>(fp) / static_cast<double>(n_rest);
    total += 2.0 * (1.0 - (fn_rate + fp_rate));
    rep.auxiliary["fn_" + std::to_string(v)] = fn_rate;
    rep.auxiliary["fp_" + std::to_string(v)] = fp_rate;
  }
  rep.value = total / static_cast<double>(n_classes);
  return rep;
}

std::vector<int> argmax_predictions(const Mlp& h, const Tensor& reps) {
  Tensor logits = h.infer(reps);
  const std::size_t B = logits.rows(), K = logits.cols();
  std::vector<int> pred(B);
  for (std::size_t i = 0; i < B; ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < K; ++j) {
      if (logits.at(i, j) > logits.at(i, best)) best = j;
    }
    pred[i] = static_cast<int>(best) + 1;
  }
  return pred;
}

}  // namespace

ProbeReport empirical_hdiv_mixture(const Tensor& reps, const std::vector<int>& domains,
                                   const Mlp& trained_h) {
  if (reps.rank() != 2 || domains.size() != reps.shape[0]) {
    throw MetricsError("empirical_hdiv_mixture: representations and domain labels disagree");
  }
  int n_classes = 0;
  for (int v : domains) n_classes = std::max(n_classes, v);
  if (n_classes < 2) throw MetricsError("empirical_hdiv_mixture: need at least two domains");
  return hdiv_from_predictions(domains, argmax_predictions(trained_h, reps), n_classes);
}

ProbeReport empirical_hdiv_mixture_fresh(const Tensor& reps, const std::vector<int>& domains,
                                         const ProbeCfg& cfg) {
  auto fit = train_domain_probe(reps, domains, cfg);
  Tensor x_held = gather_rows(reps, fit.held_idx);
  std::vector<int> d_held;
  d_held.reserve(fit.held_idx.size());
  for (auto i : fit.held_idx) d_held.push_back(domains[i]);
  auto rep = hdiv_from_predictions(d_held, argmax_predictions(fit.model, x_held), fit.n_classes);
  rep.auxiliary["n_held"] = static_cast<double>(fit.held_idx.size());
  return rep;
}

ProbeReport gradient_variance_probe(const ModelBundle& bundle,
                                    const std::vector<DomainDataset>& domains,
                                    const TrainConfig& tc, const GradVarCfg& cfg) {
  if (cfg.batches < 2) {
    throw MetricsError("gradient_variance_probe: need at least 2 batches, got " +
                       std::to_string(cfg.batches));
  }
  if (bundle.arm == Arm::source_only || bundle.discriminators.empty()) {
    throw MetricsError("gradient_variance_probe: bundle has no adversarial term");
  }

  // Probe copies: forward registration must not disturb the caller's bundle.
  Mlp encoder = bundle.encoder;
  std::vector<Mlp> discs = bundle.discriminators;

  const std::size_t first = 0, last = encoder.layers.size() - 1;
  const std::size_t n_first = encoder.layers[first].w.size() + encoder.layers[first].b.size();
  const std::size_t n_last = encoder.layers[last].w.size() + encoder.layers[last].b.size();
  const std::size_t n_par = n_first + n_last;

  std::vector<double> mean(n_par, 0.0), m2(n_par, 0.0), g(n_par);
  Rng rng(cfg.seed);

  auto disc_loss = [&](Tape& tape, const Mlp& h, const Tensor& z,
                       const std::vector<int>& dlabels) {
    switch (tc.disc_objective) {
      case DiscObjective::softmax:
        return disc_loss_softmax(tape, h.forward_frozen(tape, z), dlabels);
      case DiscObjective::multibinary:
        return disc_loss_multibinary(tape, h.forward_frozen(tape, z), dlabels);
      case DiscObjective::least_squares:
        return disc_loss_least_squares(tape, h.forward_frozen(tape, z), dlabels);
    }
    throw MetricsError("gradient_variance_probe: unknown discriminator objective");
  };

  for (std::size_t b = 0; b < cfg.batches; ++b) {
    MultiDomainBatch batch = make_batch(domains, tc.m, rng);
    Tape tape;
    Tensor z = encoder.forward(tape, batch.x);

    Tensor loss;
    if (bundle.arm == Arm::mian) {
      loss = disc_loss(tape, discs[0], z, batch.domains);
    } else {
      const std::size_t m = batch.m, nd = batch.n_domains;
      std::vector<int> src_lab(m, 1), tgt_lab(m, 2);
      bool started = false;
      for (std::size_t k = 0; k + 1 < nd; ++k) {
        Tensor z_src = slice_rows(tape, z, k * m, (k + 1) * m);
        Tensor z_tgt = slice_rows(tape, z, (nd - 1) * m, nd * m);
        Tensor lk = add(tape, scale(tape, disc_loss(tape, discs[k], z_src, src_lab), 0.5),
                        scale(tape, disc_loss(tape, discs[k], z_tgt, tgt_lab), 0.5));
        loss = started ? add(tape, loss, lk) : lk;
        started = true;
      }
      loss = scale(tape, loss, 2.0 / static_cast<double>(nd));
    }
    tape.backward(loss);

    std::size_t off = 0;
    for (std::size_t layer : {first, last}) {
      auto gw = tape.grad(encoder.layers[layer].w_node);
      auto gb = tape.grad(encoder.layers[layer].b_node);
      const std::size_t nw = encoder.layers[layer].w.size();
      const std::size_t nb = encoder.layers[layer].b.size();
      for (std::size_t i = 0; i < nw; ++i) g[off + i] = gw.empty() ? 0.0 : gw[i];
      off += nw;
      for (std::size_t i = 0; i < nb; ++i) g[off + i] = gb.empty() ? 0.0 : gb[i];
      off += nb;
    }

    const double n1 = static_cast<double>(b + 1);
    for (std::size_t i = 0; i < n_par; ++i) {
      const double d = g[i] - mean[i];
      mean[i] += d / n1;
      m2[i] += d * (g[i] - mean[i]);
    }
  }

  const double denom = static_cast<double>(cfg.batches - 1);
  double total = 0.0, total_first = 0.0, total_last = 0.0;
  for (std::size_t i = 0; i < n_par; ++i) {
    const double var = m2[i] / denom;
    total += var;
    (i < n_first ? total_first : total_last) += var;
  }
  ProbeReport rep;
  rep.name = "gradient_variance";
  rep.value = total / static_cast<double>(n_par);
  rep.auxiliary["ln_value"] = rep.value > 0.0 ? std::log(rep.value)
                                              : -std::numeric_limits<double>::infinity();
  rep.auxiliary["first_layer_mean"] = total_first / static_cast<double>(n_first);
  rep.auxiliary["last_layer_mean"] = total_last / static_cast<double>(n_last);
  rep.auxiliary["batches"] = static_cast<double>(cfg.batches);
  return rep;
}

}  // namespace mian
