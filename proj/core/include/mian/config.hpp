#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "mian/data.hpp"
#include "mian/metrics.hpp"
#include "mian/train.hpp"

namespace mian {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Flat key = value file with [section] headers; '#' starts a comment. Keys
// are addressed as "section.key". Getters mark keys as consumed; finish()
// rejects anything left over, so typos surface instead of silently applying
// defaults. The raw bytes are kept for verbatim echo into run directories.
class Config {
 public:
  static Config from_text(std::string text, std::string origin = "<config>");
  static Config from_file(const std::string& path);

  const std::string& raw() const { return raw_; }
  const std::string& origin() const { return origin_; }
  bool has(const std::string& key) const { return values_.count(key) != 0; }

  std::string str(const std::string& key) const;
  std::string str_or(const std::string& key, std::string dflt) const;
  double num(const std::string& key) const;
  double num_or(const std::string& key, double dflt) const;
  long long integer(const std::string& key) const;
  long long integer_or(const std::string& key, long long dflt) const;
  bool flag_or(const std::string& key, bool dflt) const;
  std::vector<double> num_list(const std::string& key) const;
  std::vector<std::size_t> size_list_or(const std::string& key,
                                        std::vector<std::size_t> dflt) const;
  std::vector<std::uint64_t> seed_list_or(const std::string& key,
                                          std::vector<std::uint64_t> dflt) const;
  // Semicolon-separated vectors of comma-separated numbers.
  std::vector<std::vector<double>> vector_list(const std::string& key) const;

  void finish() const;

 private:
  std::string origin_, raw_;
  std::map<std::string, std::string> values_;
  mutable std::set<std::string> consumed_;
};

struct DataSpec {
  enum class Kind { moons, gaussians };
  Kind kind = Kind::moons;
  std::size_t n_per_domain = 2000;
  std::vector<double> angles_deg{0.0, 15.0, 30.0, 45.0, 60.0};
  std::vector<std::vector<double>> offsets;
  double class_sep = 2.0;
  double noise_sd = 0.12;
  double test_fraction = 0.2;
  std::uint64_t seed = 9;
  bool standardize = true;
};

struct ExperimentSpec {
  std::string name;
  std::vector<std::uint64_t> seeds{1};
  DataSpec data;
  TrainConfig train;
  ProbeCfg probes;
  bool run_probes = true;
};

ExperimentSpec experiment_from_config(const Config& cfg);

// Generates the domains (target last) and applies source-train
// standardization when requested.
std::vector<DomainDataset> build_datasets(const DataSpec& spec);

Arm arm_from_name(const std::string& name);
DiscObjective disc_objective_from_name(const std::string& name);

}  // namespace mian
