#include <algorithm>
#include <array>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "mian/config.hpp"
#include "mian/data.hpp"
#include "mian/metrics.hpp"
#include "mian/oracle.hpp"
#include "mian/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;

struct LineSink {
  std::ofstream file;
  std::ostream* out = &std::cout;

  explicit LineSink(const std::string& path) {
    if (!path.empty()) {
      file.open(path, std::ios::binary);
      if (!file) throw std::runtime_error("cannot open " + path + " for writing");
      out = &file;
    }
  }
  void line(const std::string& s) { *out << s << "\n"; }
};

int usage_error(const std::string& msg) {
  std::cerr << "error: " << msg << "\n";
  return kExitUsage;
}

// Representations of every row matching the split filter (-1 for all rows),
// concatenated in domain order.
struct PooledReprs {
  mian::Tensor reprs;
  std::vector<int> labels;
  std::vector<int> domains;
};

PooledReprs pool_reprs(const mian::ModelBundle& bundle,
                       const std::vector<mian::DomainDataset>& domains, int split_filter) {
  std::vector<std::pair<std::size_t, std::size_t>> rows;
  for (std::size_t v = 0; v < domains.size(); ++v) {
    for (std::size_t i = 0; i < domains[v].n(); ++i) {
      if (split_filter < 0 || domains[v].split[i] == split_filter) rows.emplace_back(v, i);
    }
  }
  if (rows.empty()) throw std::runtime_error("no rows match the requested split");
  const std::size_t d = domains[0].dim();
  mian::Tensor x = mian::Tensor::zeros({rows.size(), d});
  PooledReprs out;
  out.labels.reserve(rows.size());
  out.domains.reserve(rows.size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto& ds = domains[rows[r].first];
    for (std::size_t j = 0; j < d; ++j) x.at(r, j) = ds.features.at(rows[r].second, j);
    out.labels.push_back(ds.labels[rows[r].second]);
    out.domains.push_back(ds.domain_label);
  }
  out.reprs = bundle.encoder.infer(x);
  return out;
}

std::vector<mian::DomainDataset> datasets_from_args(const std::string& config_path,
                                                    const std::vector<std::string>& data_paths) {
  if (!config_path.empty()) {
    mian::Config cfg = mian::Config::from_file(config_path);
    return mian::build_datasets(mian::experiment_from_config(cfg).data);
  }
  std::vector<mian::DomainDataset> domains;
  for (const auto& p : data_paths) domains.push_back(mian::load_csv(p));
  for (std::size_t v = 0; v < domains.size(); ++v) {
    if (domains[v].domain_label != static_cast<int>(v) + 1) {
      throw std::runtime_error(data_paths[v] + " carries domain " +
                               std::to_string(domains[v].domain_label) + " but sits at position " +
                               std::to_string(v + 1) + " (order files source 1..N, target last)");
    }
  }
  return domains;
}

void write_run_probes(const std::string& path, const mian::ModelBundle& bundle,
                      const std::vector<mian::DomainDataset>& domains,
                      const mian::ProbeCfg& pcfg) {
  LineSink sink(path);
  PooledReprs all = pool_reprs(bundle, domains, 0);
  sink.line(mian::empirical_mutual_information(all.reprs, all.domains, pcfg).to_json_line());
  sink.line(mian::empirical_hdiv_mixture_fresh(all.reprs, all.domains, pcfg).to_json_line());

  std::size_t n_tgt = 0;
  for (int v : all.domains) n_tgt += v == static_cast<int>(domains.size());
  const std::size_t n_src = all.domains.size() - n_tgt;
  const std::size_t d = all.reprs.cols();
  mian::Tensor src = mian::Tensor::zeros({n_src, d}), tgt = mian::Tensor::zeros({n_tgt, d});
  std::size_t si = 0, ti = 0;
  for (std::size_t i = 0; i < all.domains.size(); ++i) {
    const bool is_tgt = all.domains[i] == static_cast<int>(domains.size());
    for (std::size_t j = 0; j < d; ++j) {
      (is_tgt ? tgt.at(ti, j) : src.at(si, j)) = all.reprs.at(i, j);
    }
    (is_tgt ? ti : si) += 1;
  }
  sink.line(mian::proxy_a_distance(src, tgt, pcfg).to_json_line());

  mian::ProbeReport hs;
  hs.name = "svd_entropy_source";
  hs.value = mian::svd_entropy(src);
  sink.line(hs.to_json_line());
  mian::ProbeReport ht;
  ht.name = "svd_entropy_target";
  ht.value = mian::svd_entropy(tgt);
  sink.line(ht.to_json_line());
}

int cmd_verify(std::uint64_t seed, std::size_t resamples, const std::string& out_path) {
  if (resamples < 100) {
    return usage_error("--resamples must be >= 100 for a meaningful variance estimate");
  }
  mian::VerifySuiteCfg cfg;
  cfg.seed = seed;
  cfg.variance.resamples = resamples;
  auto results = mian::run_verification_suite(cfg);
  LineSink sink(out_path);
  for (const auto& r : results) sink.line(r.to_json_line());
  return mian::verify_exit_code(results);
}

int cmd_train(const std::string& config_path, const std::string& output,
              const std::string& seeds_csv) {
  mian::Config cfg = mian::Config::from_file(config_path);
  mian::ExperimentSpec spec = mian::experiment_from_config(cfg);
  if (!seeds_csv.empty()) {
    mian::Config override_cfg =
        mian::Config::from_text("[experiment]\nseeds = " + seeds_csv, "--seeds");
    spec.seeds = override_cfg.seed_list_or("experiment.seeds", {});
  }
  const fs::path out_dir = output.empty() ? fs::path("runs") / spec.name : fs::path(output);

  auto domains = mian::build_datasets(spec.data);
  fs::create_directories(out_dir / "data");
  for (std::size_t v = 0; v < domains.size(); ++v) {
    mian::write_domain_csv((out_dir / "data" / ("domain_" + std::to_string(v + 1) + ".csv")).string(),
                           domains[v]);
  }

  for (std::uint64_t seed : spec.seeds) {
    const fs::path run_dir = out_dir / ("seed_" + std::to_string(seed));
    fs::create_directories(run_dir);
    {
      std::ofstream echo(run_dir / "config.cfg", std::ios::binary);
      echo << cfg.raw();
    }
    mian::TrainConfig tc = spec.train;
    tc.seed = seed;
    mian::TrainResult result;
    try {
      result = mian::train_arm(domains, tc);
    } catch (const mian::DivergedError& e) {
      json j{{"name", "diverged"}, {"seed", seed}, {"step", e.step}, {"which", e.which}};
      std::cout << j.dump() << "\n";
      return kExitFailure;
    }
    mian::write_metrics_csv((run_dir / "metrics.csv").string(), result.records);
    mian::save_bundle((run_dir / "checkpoint.bin").string(), result.bundle);
    if (spec.run_probes) {
      write_run_probes((run_dir / "probes.jsonl").string(), result.bundle, domains, spec.probes);
    }
    const auto& last = result.records.back();
    json j{{"name", "run_complete"},
           {"arm", mian::arm_name(tc.arm)},
           {"seed", seed},
           {"steps", tc.steps},
           {"dir", run_dir.string()}};
    if (last.acc_target) j["target_accuracy"] = *last.acc_target;
    if (last.acc_source_avg) j["source_accuracy_avg"] = *last.acc_source_avg;
    std::cout << j.dump() << "\n";
  }
  return kExitOk;
}

int cmd_probe_variance(const std::string& config_path, std::size_t warmup, std::size_t batches,
                       const std::string& out_path) {
  if (warmup == 0) return usage_error("--warmup-steps must be >= 1");
  if (batches < 2) return usage_error("--batches must be >= 2 to estimate a variance");
  mian::Config cfg = mian::Config::from_file(config_path);
  mian::ExperimentSpec spec = mian::experiment_from_config(cfg);
  auto domains = mian::build_datasets(spec.data);

  LineSink sink(out_path);
  for (std::uint64_t seed : spec.seeds) {
    for (mian::Arm arm : {mian::Arm::mian, mian::Arm::multi_disc}) {
      mian::TrainConfig tc = spec.train;
      tc.arm = arm;
      tc.seed = seed;
      tc.steps = warmup;
      tc.metrics_every = 0;
      tc.entropy_in_metrics = false;
      mian::TrainResult result = mian::train_arm(domains, tc);
      mian::GradVarCfg gv;
      gv.batches = batches;
      gv.seed = seed;
      mian::ProbeReport rep = mian::gradient_variance_probe(result.bundle, domains, tc, gv);
      json j{{"name", rep.name},
             {"arm", mian::arm_name(arm)},
             {"seed", seed},
             {"step", warmup},
             {"value", rep.value},
             {"auxiliary", rep.auxiliary}};
      sink.line(j.dump());
    }
  }
  return kExitOk;
}

int cmd_metrics(const std::string& checkpoint, const std::string& config_path,
                const std::vector<std::string>& data_paths, const std::string& out_path) {
  if (config_path.empty() && data_paths.size() < 2) {
    return usage_error("provide --config or at least two --data files (target last)");
  }
  mian::ModelBundle bundle = mian::load_bundle(checkpoint);
  auto domains = datasets_from_args(config_path, data_paths);
  mian::ProbeCfg pcfg;
  if (!config_path.empty()) {
    mian::Config cfg = mian::Config::from_file(config_path);
    pcfg = mian::experiment_from_config(cfg).probes;
  }
  write_run_probes(out_path, bundle, domains, pcfg);
  return kExitOk;
}

int cmd_export_repr(const std::string& checkpoint, const std::string& config_path,
                    const std::vector<std::string>& data_paths, const std::string& out_path) {
  if (config_path.empty() && data_paths.size() < 2) {
    return usage_error("provide --config or at least two --data files (target last)");
  }
  mian::ModelBundle bundle = mian::load_bundle(checkpoint);
  auto domains = datasets_from_args(config_path, data_paths);
  PooledReprs all = pool_reprs(bundle, domains, -1);
  mian::write_repr_csv(out_path, all.reprs, all.labels, all.domains);
  json j{{"name", "export_repr"}, {"rows", all.labels.size()}, {"path", out_path}};
  std::cout << j.dump() << "\n";
  return kExitOk;
}

int cmd_summarize(const std::string& runs_dir, const std::string& out_path) {
  std::vector<fs::path> metric_files;
  if (!fs::is_directory(runs_dir)) {
    std::cerr << "error: " << runs_dir << " is not a directory\n";
    return kExitFailure;
  }
  for (const auto& entry : fs::directory_iterator(runs_dir)) {
    if (!entry.is_directory()) continue;
    if (entry.path().filename().string().rfind("seed_", 0) != 0) continue;
    const fs::path mpath = entry.path() / "metrics.csv";
    if (fs::exists(mpath)) metric_files.push_back(mpath);
  }
  std::sort(metric_files.begin(), metric_files.end());
  if (metric_files.empty()) {
    std::cerr << "error: no seed_*/metrics.csv under " << runs_dir << "\n";
    return kExitFailure;
  }

  struct Acc {
    double sum = 0.0;
    std::size_t count = 0;
  };
  std::map<std::size_t, std::array<Acc, 8>> by_step;
  for (const auto& path : metric_files) {
    for (const auto& r : mian::read_metrics_csv(path.string())) {
      auto& slots = by_step[r.step];
      const std::optional<double>* fields[8] = {&r.loss_cls,       &r.loss_disc,
                                                &r.beta,           &r.gamma,
                                                &r.acc_source_avg, &r.acc_target,
                                                &r.svd_entropy_src, &r.svd_entropy_tgt};
      for (std::size_t f = 0; f < 8; ++f) {
        if (*fields[f]) {
          slots[f].sum += **fields[f];
          slots[f].count += 1;
        }
      }
    }
  }

  std::vector<mian::MetricsRecord> out;
  for (const auto& [step, slots] : by_step) {
    mian::MetricsRecord r;
    r.step = step;
    std::optional<double>* fields[8] = {&r.loss_cls,       &r.loss_disc,
                                        &r.beta,           &r.gamma,
                                        &r.acc_source_avg, &r.acc_target,
                                        &r.svd_entropy_src, &r.svd_entropy_tgt};
    for (std::size_t f = 0; f < 8; ++f) {
      if (slots[f].count > 0) *fields[f] = slots[f].sum / static_cast<double>(slots[f].count);
    }
    out.push_back(r);
  }
  mian::write_metrics_csv(out_path, out);
  json j{{"name", "summarize"}, {"runs", metric_files.size()}, {"steps", out.size()},
         {"path", out_path}};
  std::cout << j.dump() << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"adversarial multi-source adaptation workbench"};
  app.require_subcommand(1);

  auto* verify = app.add_subcommand("verify", "run the numeric verification suite");
  std::uint64_t verify_seed = 20240901;
  std::size_t verify_resamples = 10000;
  std::string verify_out;
  verify->add_option("--seed", verify_seed, "suite seed");
  verify->add_option("--resamples", verify_resamples, "Monte Carlo resamples (>= 100)");
  verify->add_option("--out", verify_out, "write report lines to a file instead of stdout");

  auto* train = app.add_subcommand("train", "train the configured arm over all seeds");
  std::string train_config, train_output, train_seeds;
  train->add_option("--config", train_config, "experiment config file")->required();
  train->add_option("--output", train_output, "experiment directory (default runs/<name>)");
  train->add_option("--seeds", train_seeds, "comma-separated seed override");

  auto* pv = app.add_subcommand("probe-variance",
                                "gradient variance of both adversarial arms after a warmup");
  std::string pv_config, pv_out;
  std::size_t pv_warmup = 1000, pv_batches = 64;
  pv->add_option("--config", pv_config, "experiment config file")->required();
  pv->add_option("--warmup-steps", pv_warmup, "training steps before probing");
  pv->add_option("--batches", pv_batches, "fresh batches per variance estimate (>= 2)");
  pv->add_option("--out", pv_out, "write report lines to a file instead of stdout");

  auto* metrics = app.add_subcommand("metrics", "probe suite for a saved checkpoint");
  std::string m_checkpoint, m_config, m_out;
  std::vector<std::string> m_data;
  metrics->add_option("--checkpoint", m_checkpoint, "bundle checkpoint")->required();
  metrics->add_option("--config", m_config, "regenerate data from this experiment config");
  metrics->add_option("--data", m_data, "domain CSV files, target last");
  metrics->add_option("--out", m_out, "write report lines to a file instead of stdout");

  auto* er = app.add_subcommand("export-repr", "write encoder representations as CSV");
  std::string er_checkpoint, er_config, er_out;
  std::vector<std::string> er_data;
  er->add_option("--checkpoint", er_checkpoint, "bundle checkpoint")->required();
  er->add_option("--config", er_config, "regenerate data from this experiment config");
  er->add_option("--data", er_data, "domain CSV files, target last");
  er->add_option("--out", er_out, "output CSV path")->required();

  auto* sm = app.add_subcommand("summarize", "mean metrics across seed_* runs");
  std::string sm_runs, sm_out;
  sm->add_option("--runs", sm_runs, "experiment directory holding seed_* runs")->required();
  sm->add_option("--out", sm_out, "output CSV path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }

  try {
    if (*verify) return cmd_verify(verify_seed, verify_resamples, verify_out);
    if (*train) return cmd_train(train_config, train_output, train_seeds);
    if (*pv) return cmd_probe_variance(pv_config, pv_warmup, pv_batches, pv_out);
    if (*metrics) return cmd_metrics(m_checkpoint, m_config, m_data, m_out);
    if (*er) return cmd_export_repr(er_checkpoint, er_config, er_data, er_out);
    if (*sm) return cmd_summarize(sm_runs, sm_out);
  } catch (const mian::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitUsage;
}
