#include "mian/config.hpp"

#include <cctype>
#include <charconv>
#include <fstream>
#include <sstream>
#include <string_view>

namespace mian {

namespace {

std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

std::vector<std::string> split_on(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= s.size(); ++i) {
    if (i == s.size() || s[i] == sep) {
      out.push_back(trim(s.substr(start, i - start)));
      start = i + 1;
    }
  }
  return out;
}

double parse_num(const std::string& origin, const std::string& key, std::string_view s) {
  double x = 0.0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), x);
  if (ec != std::errc() || p != s.data() + s.size()) {
    throw ConfigError(origin + ": key '" + key + "' has non-numeric value '" + std::string(s) +
                      "'");
  }
  return x;
}

}  // namespace

Config Config::from_text(std::string text, std::string origin) {
  Config cfg;
  cfg.origin_ = std::move(origin);
  cfg.raw_ = std::move(text);

  std::istringstream in(cfg.raw_);
  std::string line, section;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    std::string t = trim(line);
    if (t.empty()) continue;
    if (t.front() == '[') {
      if (t.back() != ']' || t.size() < 3) {
        throw ConfigError(cfg.origin_ + ":" + std::to_string(line_no) + ": malformed section '" +
                          t + "'");
      }
      section = trim(std::string_view(t).substr(1, t.size() - 2));
      continue;
    }
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(cfg.origin_ + ":" + std::to_string(line_no) +
                        ": expected 'key = value', got '" + t + "'");
    }
    if (section.empty()) {
      throw ConfigError(cfg.origin_ + ":" + std::to_string(line_no) +
                        ": key outside any [section]");
    }
    const std::string key = section + "." + trim(std::string_view(t).substr(0, eq));
    const std::string value = trim(std::string_view(t).substr(eq + 1));
    if (!cfg.values_.emplace(key, value).second) {
      throw ConfigError(cfg.origin_ + ":" + std::to_string(line_no) + ": duplicate key '" + key +
                        "'");
    }
  }
  return cfg;
}

Config Config::from_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return from_text(buf.str(), path);
}

std::string Config::str(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError(origin_ + ": missing required key '" + key + "'");
  consumed_.insert(key);
  return it->second;
}

std::string Config::str_or(const std::string& key, std::string dflt) const {
  consumed_.insert(key);
  auto it = values_.find(key);
  return it == values_.end() ? std::move(dflt) : it->second;
}

double Config::num(const std::string& key) const { return parse_num(origin_, key, str(key)); }

double Config::num_or(const std::string& key, double dflt) const {
  consumed_.insert(key);
  auto it = values_.find(key);
  return it == values_.end() ? dflt : parse_num(origin_, key, it->second);
}

long long Config::integer(const std::string& key) const {
  const std::string s = str(key);
  long long x = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), x);
  if (ec != std::errc() || p != s.data() + s.size()) {
    throw ConfigError(origin_ + ": key '" + key + "' has non-integer value '" + s + "'");
  }
  return x;
}

long long Config::integer_or(const std::string& key, long long dflt) const {
  consumed_.insert(key);
  return has(key) ? integer(key) : dflt;
}

bool Config::flag_or(const std::string& key, bool dflt) const {
  consumed_.insert(key);
  auto it = values_.find(key);
  if (it == values_.end()) return dflt;
  if (it->second == "true") return true;
  if (it->second == "false") return false;
  throw ConfigError(origin_ + ": key '" + key + "' must be true or false, got '" + it->second +
                    "'");
}

std::vector<double> Config::num_list(const std::string& key) const {
  std::vector<double> out;
  for (const auto& part : split_on(str(key), ',')) out.push_back(parse_num(origin_, key, part));
  return out;
}

std::vector<std::size_t> Config::size_list_or(const std::string& key,
                                              std::vector<std::size_t> dflt) const {
  consumed_.insert(key);
  if (!has(key)) return dflt;
  std::vector<std::size_t> out;
  for (double x : num_list(key)) {
    if (x < 1.0 || x != static_cast<double>(static_cast<std::size_t>(x))) {
      throw ConfigError(origin_ + ": key '" + key + "' must list positive integers");
    }
    out.push_back(static_cast<std::size_t>(x));
  }
  return out;
}

std::vector<std::uint64_t> Config::seed_list_or(const std::string& key,
                                                std::vector<std::uint64_t> dflt) const {
  consumed_.insert(key);
  if (!has(key)) return dflt;
  std::vector<std::uint64_t> out;
  for (const auto& part : split_on(str(key), ',')) {
    std::uint64_t x = 0;
    auto [p, ec] = std::from_chars(part.data(), part.data() + part.size(), x);
    if (ec != std::errc() || p != part.data() + part.size()) {
      throw ConfigError(origin_ + ": key '" + key + "' must list unsigned integers");
    }
    out.push_back(x);
  }
  if (out.empty()) throw ConfigError(origin_ + ": key '" + key + "' lists no seeds");
  return out;
}

std::vector<std::vector<double>> Config::vector_list(const std::string& key) const {
  std::vector<std::vector<double>> out;
  for (const auto& group : split_on(str(key), ';')) {
    std::vector<double> v;
    for (const auto& part : split_on(group, ',')) v.push_back(parse_num(origin_, key, part));
    out.push_back(std::move(v));
  }
  return out;
}

void Config::finish() const {
  std::string leftover;
  for (const auto& [key, value] : values_) {
    if (consumed_.count(key)) continue;
    if (!leftover.empty()) leftover += ", ";
    leftover += "'" + key + "'";
  }
  if (!leftover.empty()) {
    throw ConfigError(origin_ + ": unrecognized keys: " + leftover);
  }
}

Arm arm_from_name(const std::string& name) {
  if (name == "mian") return Arm::mian;
  if (name == "multi_disc") return Arm::multi_disc;
  if (name == "source_only") return Arm::source_only;
  throw ConfigError("unknown arm '" + name + "' (expected mian, multi_disc, or source_only)");
}

DiscObjective disc_objective_from_name(const std::string& name) {
  if (name == "softmax") return DiscObjective::softmax;
  if (name == "multibinary") return DiscObjective::multibinary;
  if (name == "least_squares") return DiscObjective::least_squares;
  throw ConfigError("unknown discriminator objective '" + name +
                    "' (expected softmax, multibinary, or least_squares)");
}

ExperimentSpec experiment_from_config(const Config& cfg) {
  ExperimentSpec spec;
  spec.name = cfg.str("experiment.name");
  spec.seeds = cfg.seed_list_or("experiment.seeds", {1});
  spec.train.arm = arm_from_name(cfg.str_or("experiment.arm", "mian"));

  const std::string kind = cfg.str_or("data.kind", "moons");
  if (kind == "moons") {
    spec.data.kind = DataSpec::Kind::moons;
    if (cfg.has("data.angles")) spec.data.angles_deg = cfg.num_list("data.angles");
    if (spec.data.angles_deg.size() < 2) {
      throw ConfigError("data.angles must list at least two angles (target last)");
    }
  } else if (kind == "gaussians") {
    spec.data.kind = DataSpec::Kind::gaussians;
    spec.data.offsets = cfg.vector_list("data.offsets");
    if (spec.data.offsets.size() < 2) {
      throw ConfigError("data.offsets must list at least two offsets (target last)");
    }
    spec.data.class_sep = cfg.num_or("data.class_sep", spec.data.class_sep);
  } else {
    throw ConfigError("unknown data.kind '" + kind + "' (expected moons or gaussians)");
  }
  spec.data.n_per_domain =
      static_cast<std::size_t>(cfg.integer_or("data.n_per_domain", 2000));
  if (spec.data.n_per_domain == 0) throw ConfigError("data.n_per_domain must be >= 1");
  spec.data.noise_sd = cfg.num_or("data.noise_sd", spec.data.noise_sd);
  spec.data.test_fraction = cfg.num_or("data.test_fraction", spec.data.test_fraction);
  spec.data.seed = static_cast<std::uint64_t>(cfg.integer_or("data.seed", 9));
  spec.data.standardize = cfg.flag_or("data.standardize", true);

  TrainConfig& tc = spec.train;
  tc.latent_dim = static_cast<std::size_t>(cfg.integer_or("model.latent_dim", 16));
  tc.encoder_hidden = cfg.size_list_or("model.encoder_hidden", tc.encoder_hidden);
  tc.classifier_hidden = cfg.size_list_or("model.classifier_hidden", tc.classifier_hidden);
  tc.disc_hidden = cfg.size_list_or("model.disc_hidden", tc.disc_hidden);

  tc.steps = static_cast<std::size_t>(cfg.integer_or("train.steps", 3000));
  tc.m = static_cast<std::size_t>(cfg.integer_or("train.m", 16));
  tc.seed = spec.seeds.front();
  tc.disc_objective = disc_objective_from_name(cfg.str_or("train.disc_objective", "multibinary"));
  tc.beta0 = cfg.num_or("train.beta0", tc.beta0);
  tc.beta_anneal = cfg.flag_or("train.beta_anneal", tc.beta_anneal);
  tc.sigma = cfg.num_or("train.sigma", tc.sigma);
  tc.bsp_enabled = cfg.flag_or("train.bsp_enabled", tc.bsp_enabled);
  tc.gamma0 = cfg.num_or("train.gamma0", tc.gamma0);
  tc.gamma_anneal = cfg.flag_or("train.gamma_anneal", tc.gamma_anneal);
  tc.bsp_k = static_cast<std::size_t>(cfg.integer_or("train.bsp_k", 1));
  const std::string opt = cfg.str_or("train.optimizer", "adam");
  if (opt == "adam") {
    tc.optimizer = TrainConfig::Opt::adam;
  } else if (opt == "sgd") {
    tc.optimizer = TrainConfig::Opt::sgd_momentum;
  } else {
    throw ConfigError("unknown train.optimizer '" + opt + "' (expected adam or sgd)");
  }
  tc.lr = cfg.num_or("train.lr", tc.lr);
  tc.adam_beta1 = cfg.num_or("train.adam_beta1", tc.adam_beta1);
  tc.adam_beta2 = cfg.num_or("train.adam_beta2", tc.adam_beta2);
  tc.adam_epsilon = cfg.num_or("train.adam_epsilon", tc.adam_epsilon);
  tc.momentum = cfg.num_or("train.momentum", tc.momentum);
  tc.disc_lr_multiplier = cfg.num_or("train.disc_lr_multiplier", tc.disc_lr_multiplier);
  tc.metrics_every = static_cast<std::size_t>(cfg.integer_or("train.metrics_every", 50));
  tc.entropy_in_metrics = cfg.flag_or("train.entropy_in_metrics", tc.entropy_in_metrics);
  tc.entropy_row_cap =
      static_cast<std::size_t>(cfg.integer_or("train.entropy_row_cap", 512));

  spec.run_probes = cfg.flag_or("probes.enabled", true);
  spec.probes.train_fraction = cfg.num_or("probes.train_fraction", spec.probes.train_fraction);
  spec.probes.steps = static_cast<std::size_t>(
      cfg.integer_or("probes.steps", static_cast<long long>(spec.probes.steps)));
  spec.probes.lr = cfg.num_or("probes.lr", spec.probes.lr);
  spec.probes.hidden = static_cast<std::size_t>(
      cfg.integer_or("probes.hidden", static_cast<long long>(spec.probes.hidden)));
  spec.probes.sample_cap = static_cast<std::size_t>(
      cfg.integer_or("probes.sample_cap", static_cast<long long>(spec.probes.sample_cap)));
  spec.probes.seed = static_cast<std::uint64_t>(
      cfg.integer_or("probes.seed", static_cast<long long>(spec.probes.seed)));

  cfg.finish();
  return spec;
}

std::vector<DomainDataset> build_datasets(const DataSpec& spec) {
  std::vector<DomainDataset> domains;
  if (spec.kind == DataSpec::Kind::moons) {
    domains = gen_rotated_moons(spec.n_per_domain, spec.angles_deg, spec.noise_sd,
                                spec.test_fraction, spec.seed);
  } else {
    domains = gen_shifted_gaussians(spec.n_per_domain, spec.offsets, spec.class_sep,
                                    spec.noise_sd, spec.test_fraction, spec.seed);
  }
  if (spec.standardize) {
    apply_standardization(domains, source_standard_stats(domains));
  }
  return domains;
}

}  // namespace mian
