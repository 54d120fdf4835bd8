#include "mian/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>
#include <system_error>

namespace mian {

std::size_t DomainDataset::count_split(std::uint8_t s) const {
  std::size_t c = 0;
  for (auto v : split) c += v == s;
  return c;
}

namespace {

void seeded_split(std::vector<std::uint8_t>& split, double test_fraction, Rng& rng) {
  const std::size_t n = split.size();
  std::size_t n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(n)));
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  for (std::size_t i = n; i > 1; --i) {
    std::size_t j = rng.below(i);
    std::swap(idx[i - 1], idx[j]);
  }
  std::fill(split.begin(), split.end(), std::uint8_t{0});
  for (std::size_t i = 0; i < n_test; ++i) split[idx[i]] = 1;
}

}  // namespace

void assign_split(DomainDataset& ds, double test_fraction, std::uint64_t seed) {
  if (test_fraction < 0.0 || test_fraction >= 1.0) {
    throw DataError("assign_split: test_fraction " + std::to_string(test_fraction) +
                    " outside [0, 1)");
  }
  Rng rng(seed ^ (0x51ed2701ull * static_cast<std::uint64_t>(ds.domain_label)));
  ds.split.assign(ds.n(), 0);
  seeded_split(ds.split, test_fraction, rng);
}

std::vector<DomainDataset> gen_rotated_moons(std::size_t n_per_domain,
                                             const std::vector<double>& angles_deg,
                                             double noise_sd, double test_fraction,
                                             std::uint64_t seed) {
  if (angles_deg.size() < 2) {
    throw DataError("gen_rotated_moons: need at least one source angle plus the target");
  }
  if (n_per_domain == 0) throw DataError("gen_rotated_moons: n_per_domain must be positive");

  std::vector<DomainDataset> out;
  for (std::size_t v = 0; v < angles_deg.size(); ++v) {
    Rng rng(seed + 0x9e3779b9ull * (v + 1));
    DomainDataset ds;
    ds.domain_label = static_cast<int>(v + 1);
    ds.features = Tensor::zeros({n_per_domain, 2});
    ds.labels.resize(n_per_domain);
    const double ang = angles_deg[v] * std::numbers::pi / 180.0;
    const double ca = std::cos(ang), sa = std::sin(ang);
    const std::size_t n0 = (n_per_domain + 1) / 2;
    for (std::size_t i = 0; i < n_per_domain; ++i) {
      const int y = i < n0 ? 0 : 1;
      const double t = rng.uniform(0.0, std::numbers::pi);
      double px, py;
      if (y == 0) {
        px = std::cos(t) - 0.5;
        py = std::sin(t) - 0.25;
      } else {
        px = 0.5 - std::cos(t);
        py = 0.25 - std::sin(t);
      }
      px += rng.normal(0.0, noise_sd);
      py += rng.normal(0.0, noise_sd);
      ds.features.at(i, 0) = ca * px - sa * py;
      ds.features.at(i, 1) = sa * px + ca * py;
      ds.labels[i] = y;
    }
    ds.split.assign(n_per_domain, 0);
    seeded_split(ds.split, test_fraction, rng);
    out.push_back(std::move(ds));
  }
  return out;
}

std::vector<DomainDataset> gen_shifted_gaussians(std::size_t n_per_domain,
                                                 const std::vector<std::vector<double>>& offsets,
                                                 double class_sep, double noise_sd,
                                                 double test_fraction, std::uint64_t seed) {
  if (offsets.size() < 2) {
    throw DataError("gen_shifted_gaussians: need at least one source offset plus the target");
  }
  const std::size_t dim = offsets.front().size();
  if (dim == 0) throw DataError("gen_shifted_gaussians: zero-dimensional offsets");
  for (const auto& o : offsets) {
    if (o.size() != dim) {
      throw DataError("gen_shifted_gaussians: offsets have mixed dimensions");
    }
  }
  if (n_per_domain == 0) throw DataError("gen_shifted_gaussians: n_per_domain must be positive");

  std::vector<DomainDataset> out;
  for (std::size_t v = 0; v < offsets.size(); ++v) {
    Rng rng(seed + 0x9e3779b9ull * (v + 1));
    DomainDataset ds;
    ds.domain_label = static_cast<int>(v + 1);
    ds.features = Tensor::zeros({n_per_domain, dim});
    ds.labels.resize(n_per_domain);
    const std::size_t n0 = (n_per_domain + 1) / 2;
    for (std::size_t i = 0; i < n_per_domain; ++i) {
      const int y = i < n0 ? 0 : 1;
      const double center0 = (y == 0 ? -0.5 : 0.5) * class_sep;
      for (std::size_t j = 0; j < dim; ++j) {
        double c = offsets[v][j] + (j == 0 ? center0 : 0.0);
        ds.features.at(i, j) = c + rng.normal(0.0, noise_sd);
      }
      ds.labels[i] = y;
    }
    ds.split.assign(n_per_domain, 0);
    seeded_split(ds.split, test_fraction, rng);
    out.push_back(std::move(ds));
  }
  return out;
}

StandardStats source_standard_stats(const std::vector<DomainDataset>& domains) {
  if (domains.size() < 2) throw DataError("source_standard_stats: need sources plus target");
  const std::size_t d = domains.front().dim();
  StandardStats st;
  st.mean.assign(d, 0.0);
  st.sd.assign(d, 0.0);
  std::size_t n = 0;
  for (std::size_t v = 0; v + 1 < domains.size(); ++v) {
    const auto& ds = domains[v];
    for (std::size_t i = 0; i < ds.n(); ++i) {
      if (ds.split[i] != 0) continue;
      for (std::size_t j = 0; j < d; ++j) st.mean[j] += ds.features.at(i, j);
      ++n;
    }
  }
  if (n == 0) throw DataError("source_standard_stats: no source train rows");
  for (auto& m : st.mean) m /= static_cast<double>(n);
  for (std::size_t v = 0; v + 1 < domains.size(); ++v) {
    const auto& ds = domains[v];
    for (std::size_t i = 0; i < ds.n(); ++i) {
      if (ds.split[i] != 0) continue;
      for (std::size_t j = 0; j < d; ++j) {
        const double c = ds.features.at(i, j) - st.mean[j];
        st.sd[j] += c * c;
      }
    }
  }
  for (auto& s : st.sd) s = std::max(std::sqrt(s / static_cast<double>(n)), 1e-12);
  return st;
}

void apply_standardization(std::vector<DomainDataset>& domains, const StandardStats& stats) {
  for (auto& ds : domains) {
    const std::size_t d = ds.dim();
    if (d != stats.mean.size()) {
      throw DataError("apply_standardization: stats dimension " + std::to_string(stats.mean.size()) +
                      " vs data dimension " + std::to_string(d));
    }
    for (std::size_t i = 0; i < ds.n(); ++i) {
      for (std::size_t j = 0; j < d; ++j) {
        ds.features.at(i, j) = (ds.features.at(i, j) - stats.mean[j]) / stats.sd[j];
      }
    }
  }
}

MultiDomainBatch make_batch(const std::vector<DomainDataset>& domains, std::size_t m, Rng& rng) {
  if (domains.size() < 2) throw DataError("make_batch: need sources plus target");
  if (m == 0) throw DataError("make_batch: m must be positive");
  const std::size_t nd = domains.size();
  const std::size_t d = domains.front().dim();

  MultiDomainBatch batch;
  batch.m = m;
  batch.n_domains = nd;
  batch.x = Tensor::zeros({m * nd, d});
  batch.domains.resize(m * nd);

  for (std::size_t v = 0; v < nd; ++v) {
    const auto& ds = domains[v];
    if (ds.dim() != d) {
      throw DataError("make_batch: domain " + std::to_string(ds.domain_label) +
                      " has dimension " + std::to_string(ds.dim()) + ", expected " +
                      std::to_string(d));
    }
    std::vector<std::size_t> train_rows;
    train_rows.reserve(ds.n());
    for (std::size_t i = 0; i < ds.n(); ++i) {
      if (ds.split[i] == 0) train_rows.push_back(i);
    }
    if (train_rows.size() < m) {
      throw DataError("make_batch: domain " + std::to_string(ds.domain_label) + " has " +
                      std::to_string(train_rows.size()) + " train rows, need " + std::to_string(m));
    }
    // Partial Fisher-Yates: m distinct rows, uniform without replacement.
    for (std::size_t i = 0; i < m; ++i) {
      std::size_t j = i + rng.below(train_rows.size() - i);
      std::swap(train_rows[i], train_rows[j]);
      const std::size_t src = train_rows[i];
      const std::size_t dst = v * m + i;
      for (std::size_t c = 0; c < d; ++c) batch.x.at(dst, c) = ds.features.at(src, c);
      batch.domains[dst] = ds.domain_label;
      if (v + 1 < nd) {
        if (ds.labels[src] < 0) {
          throw DataError("make_batch: unlabeled row in source domain " +
                          std::to_string(ds.domain_label));
        }
        batch.labels.push_back(ds.labels[src]);
      }
    }
  }
  return batch;
}

namespace {

std::string fmt_double(double x) {
  char buf[32];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, end);
}

double parse_double(std::string_view s, std::size_t line_no, const std::string& path) {
  double x = 0.0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), x);
  if (ec != std::errc() || p != s.data() + s.size()) {
    throw DataError(path + ":" + std::to_string(line_no) + ": bad numeric field '" +
                    std::string(s) + "'");
  }
  return x;
}

long parse_int(std::string_view s, std::size_t line_no, const std::string& path) {
  long x = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), x);
  if (ec != std::errc() || p != s.data() + s.size()) {
    throw DataError(path + ":" + std::to_string(line_no) + ": bad integer field '" +
                    std::string(s) + "'");
  }
  return x;
}

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= line.size(); ++i) {
    if (i == line.size() || line[i] == ',') {
      out.push_back(line.substr(start, i - start));
      start = i + 1;
    }
  }
  return out;
}

std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  return lines;
}

}  // namespace

void write_domain_csv(const std::string& path, const DomainDataset& ds) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open " + path + " for writing");
  const std::size_t d = ds.dim();
  for (std::size_t j = 0; j < d; ++j) out << "feature_" << j << ",";
  out << "label,domain\n";
  for (std::size_t i = 0; i < ds.n(); ++i) {
    for (std::size_t j = 0; j < d; ++j) out << fmt_double(ds.features.at(i, j)) << ",";
    out << ds.labels[i] << "," << ds.domain_label << "\n";
  }
  if (!out) throw DataError("write failed for " + path);
}

DomainDataset load_csv(const std::string& path) {
  auto lines = read_lines(path);
  if (lines.empty()) throw DataError(path + ": empty file");
  auto header = split_fields(lines[0]);
  if (header.size() < 3 || header[header.size() - 2] != "label" || header.back() != "domain") {
    throw DataError(path + ":1: expected header feature_0..feature_{d-1},label,domain");
  }
  const std::size_t d = header.size() - 2;
  for (std::size_t j = 0; j < d; ++j) {
    if (header[j] != "feature_" + std::to_string(j)) {
      throw DataError(path + ":1: expected column 'feature_" + std::to_string(j) + "', got '" +
                      std::string(header[j]) + "'");
    }
  }
  std::size_t n = 0;
  for (std::size_t li = 1; li < lines.size(); ++li) {
    if (!lines[li].empty()) ++n;
  }
  DomainDataset ds;
  ds.features = Tensor::zeros({n, d});
  ds.labels.reserve(n);
  int domain_value = 0;
  std::size_t row = 0;
  for (std::size_t li = 1; li < lines.size(); ++li) {
    if (lines[li].empty()) continue;
    auto fields = split_fields(lines[li]);
    if (fields.size() != d + 2) {
      throw DataError(path + ":" + std::to_string(li + 1) + ": expected " + std::to_string(d + 2) +
                      " fields, got " + std::to_string(fields.size()));
    }
    for (std::size_t j = 0; j < d; ++j) {
      ds.features.at(row, j) = parse_double(fields[j], li + 1, path);
    }
    long label = parse_int(fields[d], li + 1, path);
    if (label < -1) {
      throw DataError(path + ":" + std::to_string(li + 1) + ": label " + std::to_string(label) +
                      " (must be >= 0, or -1 for unlabeled)");
    }
    long dom = parse_int(fields[d + 1], li + 1, path);
    if (dom < 1) {
      throw DataError(path + ":" + std::to_string(li + 1) + ": domain " + std::to_string(dom) +
                      " (must be >= 1)");
    }
    if (domain_value == 0) {
      domain_value = static_cast<int>(dom);
    } else if (domain_value != static_cast<int>(dom)) {
      throw DataError(path + ":" + std::to_string(li + 1) + ": mixed domain values " +
                      std::to_string(domain_value) + " and " + std::to_string(dom) +
                      " (one domain per file)");
    }
    ds.labels.push_back(static_cast<int>(label));
    ++row;
  }
  if (row == 0) throw DataError(path + ": no data rows");
  ds.domain_label = domain_value;
  ds.split.assign(row, 0);
  return ds;
}

void write_repr_csv(const std::string& path, const Tensor& reprs, const std::vector<int>& labels,
                    const std::vector<int>& domains) {
  if (reprs.rank() != 2) throw DataError("write_repr_csv: rank-2 representations required");
  const std::size_t n = reprs.shape[0], d = reprs.shape[1];
  if (labels.size() != n || domains.size() != n) {
    throw DataError("write_repr_csv: row count mismatch between representations and labels/domains");
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open " + path + " for writing");
  for (std::size_t j = 0; j < d; ++j) out << "repr_" << j << ",";
  out << "label,domain\n";
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) out << fmt_double(reprs.at(i, j)) << ",";
    out << labels[i] << "," << domains[i] << "\n";
  }
  if (!out) throw DataError("write failed for " + path);
}

ReprRows load_repr_csv(const std::string& path) {
  auto lines = read_lines(path);
  if (lines.empty()) throw DataError(path + ": empty file");
  auto header = split_fields(lines[0]);
  if (header.size() < 3 || header[header.size() - 2] != "label" || header.back() != "domain") {
    throw DataError(path + ":1: expected header repr_0..repr_{d-1},label,domain");
  }
  const std::size_t d = header.size() - 2;
  std::size_t n = 0;
  for (std::size_t li = 1; li < lines.size(); ++li) {
    if (!lines[li].empty()) ++n;
  }
  ReprRows out;
  out.reprs = Tensor::zeros({n, d});
  std::size_t row = 0;
  for (std::size_t li = 1; li < lines.size(); ++li) {
    if (lines[li].empty()) continue;
    auto fields = split_fields(lines[li]);
    if (fields.size() != d + 2) {
      throw DataError(path + ":" + std::to_string(li + 1) + ": expected " + std::to_string(d + 2) +
                      " fields, got " + std::to_string(fields.size()));
    }
    for (std::size_t j = 0; j < d; ++j) {
      out.reprs.at(row, j) = parse_double(fields[j], li + 1, path);
    }
    out.labels.push_back(static_cast<int>(parse_int(fields[d], li + 1, path)));
    out.domains.push_back(static_cast<int>(parse_int(fields[d + 1], li + 1, path)));
    ++row;
  }
  return out;
}

}  // namespace mian
