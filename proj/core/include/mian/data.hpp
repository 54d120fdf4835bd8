#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mian/rng.hpp"
#include "mian/tensor.hpp"

namespace mian {

struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// One domain's rows. domain_label is 1-based; 1..N are sources, N+1 is the
// target. label -1 marks an unlabeled row. split: 0 train, 1 test.
struct DomainDataset {
  Tensor features;  // [n x d]
  std::vector<int> labels;
  std::vector<std::uint8_t> split;
  int domain_label = 1;

  std::size_t n() const { return features.shape.empty() ? 0 : features.shape[0]; }
  std::size_t dim() const { return features.shape.size() < 2 ? 0 : features.shape[1]; }
  std::size_t count_split(std::uint8_t s) const;
};

// Two-moons base: class 0 is (cos t, sin t), class 1 is (1 - cos t, 0.5 - sin t),
// t uniform on [0, pi], centered at the analytic mean (0.5, 0.25), plus
// isotropic Gaussian noise. Domain v rotates the centered configuration by
// angles_deg[v]; the last angle is the target domain.
std::vector<DomainDataset> gen_rotated_moons(std::size_t n_per_domain,
                                             const std::vector<double>& angles_deg,
                                             double noise_sd, double test_fraction,
                                             std::uint64_t seed);

// Two-class Gaussian blobs: class centers at -sep/2 and +sep/2 along the first
// axis, isotropic noise_sd, shifted per domain by offsets[v]. Offsets define
// the dimension; the last offset is the target domain.
std::vector<DomainDataset> gen_shifted_gaussians(std::size_t n_per_domain,
                                                 const std::vector<std::vector<double>>& offsets,
                                                 double class_sep, double noise_sd,
                                                 double test_fraction, std::uint64_t seed);

// Per-feature mean/sd over pooled source-domain train rows only.
struct StandardStats {
  std::vector<double> mean, sd;
};
StandardStats source_standard_stats(const std::vector<DomainDataset>& domains);
void apply_standardization(std::vector<DomainDataset>& domains, const StandardStats& stats);

// m rows per domain, sampled uniformly without replacement from each domain's
// train split per call. Rows are grouped by domain in dataset order; class
// labels cover only the source blocks (target labels are never copied).
struct MultiDomainBatch {
  Tensor x;                  // [(N+1)m x d]
  std::vector<int> domains;  // size (N+1)m, values 1..N+1
  std::vector<int> labels;   // size N*m, source rows only
  std::size_t m = 0;
  std::size_t n_domains = 0;

  std::size_t source_rows() const { return m * (n_domains - 1); }
};
MultiDomainBatch make_batch(const std::vector<DomainDataset>& domains, std::size_t m, Rng& rng);

// Reassigns train/test tags with a seeded shuffle.
void assign_split(DomainDataset& ds, double test_fraction, std::uint64_t seed);

// CSV with header feature_0..feature_{d-1},label,domain; UTF-8, LF line ends.
// Values are written as shortest round-trip decimals, so write -> load is
// lossless for f64. A file must hold exactly one domain value.
void write_domain_csv(const std::string& path, const DomainDataset& ds);
DomainDataset load_csv(const std::string& path);

// CSV with header repr_0..repr_{d-1},label,domain.
void write_repr_csv(const std::string& path, const Tensor& reprs, const std::vector<int>& labels,
                    const std::vector<int>& domains);
struct ReprRows {
  Tensor reprs;
  std::vector<int> labels;
  std::vector<int> domains;
};
ReprRows load_repr_csv(const std::string& path);

}  // namespace mian
