#include <doctest.h>

#include <cmath>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <set>
#include <string>
#include <vector>

#include "mian/data.hpp"
#include "mian/rng.hpp"

using namespace mian;

namespace {

std::filesystem::path scratch_dir() {
  auto d = std::filesystem::temp_directory_path() / "mian_test_data";
  std::filesystem::create_directories(d);
  return d;
}

std::string read_bytes(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  REQUIRE(f.good());
  return std::string(std::istreambuf_iterator<char>(f), {});
}

}  // namespace

TEST_CASE("moons domains differ only by rotation of a shared base draw") {
  auto rot = gen_rotated_moons(40, {0.0, 90.0}, 0.05, 0.0, 123);
  auto flat = gen_rotated_moons(40, {0.0, 0.0}, 0.05, 0.0, 123);

  const double c = std::cos(std::numbers::pi / 2), s = std::sin(std::numbers::pi / 2);
  for (std::size_t i = 0; i < 40; ++i) {
    double px = flat[1].features.at(i, 0), py = flat[1].features.at(i, 1);
    CHECK(rot[1].features.at(i, 0) == doctest::Approx(c * px - s * py).epsilon(1e-12));
    CHECK(rot[1].features.at(i, 1) == doctest::Approx(s * px + c * py).epsilon(1e-12));
  }

  auto full = gen_rotated_moons(40, {0.0, 360.0}, 0.05, 0.0, 123);
  for (std::size_t i = 0; i < 40; ++i) {
    CHECK(full[1].features.at(i, 0) ==
          doctest::Approx(flat[1].features.at(i, 0)).epsilon(1e-12));
    CHECK(full[1].features.at(i, 1) ==
          doctest::Approx(flat[1].features.at(i, 1)).epsilon(1e-12));
  }
}

TEST_CASE("moons classes are balanced and labeled everywhere") {
  auto domains = gen_rotated_moons(100, {0.0, 30.0, 60.0}, 0.1, 0.25, 7);
  REQUIRE(domains.size() == 3);
  for (const auto& d : domains) {
    std::size_t zeros = 0;
    for (int y : d.labels) zeros += y == 0;
    CHECK(zeros == 50);
    CHECK(d.n() == 100);
    CHECK(d.dim() == 2);
    CHECK(d.count_split(1) == 25);
  }
  CHECK(domains[0].domain_label == 1);
  CHECK(domains[2].domain_label == 3);

  CHECK_THROWS_AS(gen_rotated_moons(0, {0.0, 1.0}, 0.1, 0.2, 1), DataError);
  CHECK_THROWS_AS(gen_rotated_moons(10, {0.0}, 0.1, 0.2, 1), DataError);
}

TEST_CASE("gaussians center classes along the first axis per domain offset") {
  std::vector<std::vector<double>> offsets{{0, 0, 0}, {0, 2.0, 0}, {1.0, 0, 1.0}};
  auto domains = gen_shifted_gaussians(4000, offsets, 3.0, 0.1, 0.0, 5);
  REQUIRE(domains.size() == 3);
  CHECK(domains[0].dim() == 3);

  for (std::size_t v = 0; v < 3; ++v) {
    double m0 = 0, m1 = 0;
    std::size_t c0 = 0, c1 = 0;
    for (std::size_t i = 0; i < domains[v].n(); ++i) {
      if (domains[v].labels[i] == 0) {
        m0 += domains[v].features.at(i, 0);
        ++c0;
      } else {
        m1 += domains[v].features.at(i, 0);
        ++c1;
      }
    }
    CHECK(m0 / static_cast<double>(c0) ==
          doctest::Approx(offsets[v][0] - 1.5).epsilon(0.01));
    CHECK(m1 / static_cast<double>(c1) ==
          doctest::Approx(offsets[v][0] + 1.5).epsilon(0.01));
  }

  CHECK_THROWS_AS(gen_shifted_gaussians(10, {{0, 0}}, 1.0, 0.1, 0.0, 1), DataError);
  CHECK_THROWS_AS(gen_shifted_gaussians(10, {{0, 0}, {0, 0, 0}}, 1.0, 0.1, 0.0, 1), DataError);
  CHECK_THROWS_AS(gen_shifted_gaussians(0, {{0}, {1}}, 1.0, 0.1, 0.0, 1), DataError);
}

TEST_CASE("standardization stats come from source train rows only") {
  std::vector<DomainDataset> domains(3);
  // source 1: train rows {0, 2}, test row {100}
  domains[0].features = Tensor::from({3, 1}, {0.0, 2.0, 100.0});
  domains[0].labels = {0, 1, 0};
  domains[0].split = {0, 0, 1};
  domains[0].domain_label = 1;
  // source 2: train rows {4, 6}
  domains[1].features = Tensor::from({2, 1}, {4.0, 6.0});
  domains[1].labels = {0, 1};
  domains[1].split = {0, 0};
  domains[1].domain_label = 2;
  // target rows must not contribute
  domains[2].features = Tensor::from({2, 1}, {1000.0, -1000.0});
  domains[2].labels = {-1, -1};
  domains[2].split = {0, 0};
  domains[2].domain_label = 3;

  StandardStats st = source_standard_stats(domains);
  CHECK(st.mean[0] == doctest::Approx(3.0).epsilon(1e-12));
  double sd = std::sqrt((9.0 + 1.0 + 1.0 + 9.0) / 4.0);
  CHECK(st.sd[0] == doctest::Approx(sd).epsilon(1e-12));

  apply_standardization(domains, st);
  CHECK(domains[0].features.at(0, 0) == doctest::Approx(-3.0 / sd).epsilon(1e-12));
  CHECK(domains[2].features.at(0, 0) == doctest::Approx(997.0 / sd).epsilon(1e-12));
}

TEST_CASE("batches route m train rows per domain and never copy target labels") {
  auto domains = gen_rotated_moons(30, {0.0, 20.0, 40.0}, 0.1, 0.3, 11);
  Rng rng(2);
  MultiDomainBatch batch = make_batch(domains, 5, rng);

  CHECK(batch.m == 5);
  CHECK(batch.n_domains == 3);
  CHECK(batch.x.rows() == 15);
  CHECK(batch.source_rows() == 10);
  CHECK(batch.labels.size() == 10);
  REQUIRE(batch.domains.size() == 15);
  for (std::size_t i = 0; i < 15; ++i) CHECK(batch.domains[i] == static_cast<int>(i / 5) + 1);

  // Every batch row must be one of its domain's train rows.
  for (std::size_t v = 0; v < 3; ++v) {
    std::set<std::pair<double, double>> train_rows;
    for (std::size_t i = 0; i < domains[v].n(); ++i) {
      if (domains[v].split[i] == 0) {
        train_rows.insert({domains[v].features.at(i, 0), domains[v].features.at(i, 1)});
      }
    }
    for (std::size_t r = v * 5; r < (v + 1) * 5; ++r) {
      CHECK(train_rows.count({batch.x.at(r, 0), batch.x.at(r, 1)}) == 1);
    }
  }

  // m above the train-row count is an error, not silent reuse.
  CHECK_THROWS_AS(make_batch(domains, 25, rng), DataError);

  Rng r1(9), r2(9);
  MultiDomainBatch b1 = make_batch(domains, 4, r1);
  MultiDomainBatch b2 = make_batch(domains, 4, r2);
  CHECK(b1.x.data == b2.x.data);
  CHECK(b1.labels == b2.labels);
}

TEST_CASE("assign_split is a seeded exact-count retag") {
  DomainDataset ds;
  ds.features = Tensor::zeros({10, 1});
  ds.labels.assign(10, 0);
  ds.split.assign(10, 0);
  ds.domain_label = 2;

  assign_split(ds, 0.3, 4);
  CHECK(ds.count_split(1) == 3);
  auto first = ds.split;
  assign_split(ds, 0.3, 4);
  CHECK(ds.split == first);
  assign_split(ds, 0.3, 5);

  CHECK_THROWS_AS(assign_split(ds, 1.0, 1), DataError);
  CHECK_THROWS_AS(assign_split(ds, -0.1, 1), DataError);
}

TEST_CASE("domain csv round-trips losslessly") {
  auto dir = scratch_dir();
  auto domains = gen_rotated_moons(25, {0.0, 45.0}, 0.2, 0.2, 31);
  domains[1].labels.assign(25, -1);  // unlabeled target

  std::string p1 = (dir / "d1.csv").string();
  std::string p2 = (dir / "d1_again.csv").string();
  write_domain_csv(p1, domains[1]);
  DomainDataset back = load_csv(p1);
  CHECK(back.domain_label == domains[1].domain_label);
  CHECK(back.labels == domains[1].labels);
  CHECK(back.features.data == domains[1].features.data);

  write_domain_csv(p2, back);
  CHECK(read_bytes(p1) == read_bytes(p2));
}

TEST_CASE("csv loader rejects mixed domains and missing files") {
  auto dir = scratch_dir();
  std::string path = (dir / "mixed.csv").string();
  {
    std::ofstream f(path, std::ios::binary);
    f << "feature_0,feature_1,label,domain\n";
    f << "0.5,1.0,0,1\n";
    f << "0.25,0.125,1,2\n";
  }
  CHECK_THROWS_AS(load_csv(path), DataError);
  CHECK_THROWS_AS(load_csv((dir / "absent.csv").string()), DataError);
}

TEST_CASE("representation csv round-trips") {
  auto dir = scratch_dir();
  Tensor reprs = Tensor::from({3, 2}, {0.1, -2.5, 1e-17, 3.0, 4.0, -0.0});
  std::vector<int> labels{0, 1, -1};
  std::vector<int> domains{1, 1, 2};

  std::string path = (dir / "reprs.csv").string();
  write_repr_csv(path, reprs, labels, domains);
  ReprRows back = load_repr_csv(path);
  CHECK(back.reprs.data == reprs.data);
  CHECK(back.labels == labels);
  CHECK(back.domains == domains);

  std::string again = (dir / "reprs2.csv").string();
  write_repr_csv(again, back.reprs, back.labels, back.domains);
  CHECK(read_bytes(path) == read_bytes(again));
}
