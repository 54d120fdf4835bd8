#include <doctest.h>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "mian/data.hpp"
#include "mian/nn.hpp"
#include "mian/rng.hpp"
#include "mian/train.hpp"

using namespace mian;

namespace {

std::filesystem::path scratch_dir() {
  auto d = std::filesystem::temp_directory_path() / "mian_test_train";
  std::filesystem::create_directories(d);
  return d;
}

std::string read_bytes(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  REQUIRE(f.good());
  return std::string(std::istreambuf_iterator<char>(f), {});
}

TrainConfig tiny_config(Arm arm, std::uint64_t seed) {
  TrainConfig tc;
  tc.arm = arm;
  tc.seed = seed;
  tc.m = 6;
  tc.steps = 30;
  tc.lr = 1e-3;
  tc.latent_dim = 4;
  tc.encoder_hidden = {8};
  tc.classifier_hidden = {8};
  tc.disc_hidden = {8};
  tc.metrics_every = 0;
  tc.entropy_row_cap = 64;
  return tc;
}

bool records_equal(const std::vector<MetricsRecord>& a, const std::vector<MetricsRecord>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].step != b[i].step || a[i].loss_cls != b[i].loss_cls ||
        a[i].loss_disc != b[i].loss_disc || a[i].beta != b[i].beta || a[i].gamma != b[i].gamma ||
        a[i].acc_source_avg != b[i].acc_source_avg || a[i].acc_target != b[i].acc_target ||
        a[i].svd_entropy_src != b[i].svd_entropy_src ||
        a[i].svd_entropy_tgt != b[i].svd_entropy_tgt) {
      return false;
    }
  }
  return true;
}

}  // namespace

TEST_CASE("training rejects degenerate setups") {
  auto domains = gen_rotated_moons(40, {0.0, 50.0}, 0.1, 0.25, 3);
  TrainConfig tc = tiny_config(Arm::mian, 1);

  std::vector<DomainDataset> one(domains.begin(), domains.begin() + 1);
  CHECK_THROWS_AS(train_arm(one, tc), std::invalid_argument);

  TrainConfig no_steps = tc;
  no_steps.steps = 0;
  CHECK_THROWS_AS(train_arm(domains, no_steps), std::invalid_argument);

  TrainConfig no_rows = tc;
  no_rows.m = 0;
  CHECK_THROWS_AS(train_arm(domains, no_rows), std::invalid_argument);

  auto flat = domains;
  for (auto& l : flat[0].labels) l = 0;  // single class on the only source
  CHECK_THROWS_AS(train_arm(flat, tc), std::invalid_argument);

  Rng rng(1);
  CHECK_THROWS_AS(build_bundle(tc, 2, 2, 1, rng), std::invalid_argument);
  CHECK_THROWS_AS(build_bundle(tc, 2, 1, 3, rng), std::invalid_argument);
}

TEST_CASE("target labels steer nothing but evaluation") {
  auto clean = gen_rotated_moons(60, {0.0, 30.0, 70.0}, 0.1, 0.25, 5);
  auto poisoned = clean;
  for (auto& l : poisoned.back().labels) l = 1 - l;

  TrainConfig tc = tiny_config(Arm::mian, 2);
  TrainResult a = train_arm(clean, tc);
  TrainResult b = train_arm(poisoned, tc);

  auto dir = scratch_dir();
  std::string pa = (dir / "clean.bin").string(), pb = (dir / "poisoned.bin").string();
  save_bundle(pa, a.bundle);
  save_bundle(pb, b.bundle);
  CHECK(read_bytes(pa) == read_bytes(pb));

  // The reported target accuracies are the two sides of the same coin.
  REQUIRE(!a.records.empty());
  CHECK(*a.records.back().acc_target + *b.records.back().acc_target ==
        doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("same config, same bytes") {
  auto domains = gen_rotated_moons(60, {0.0, 40.0, 80.0}, 0.12, 0.25, 7);
  for (Arm arm : {Arm::mian, Arm::multi_disc, Arm::source_only}) {
    CAPTURE(arm_name(arm));
    TrainConfig tc = tiny_config(arm, 11);
    tc.metrics_every = 10;
    TrainResult a = train_arm(domains, tc);
    TrainResult b = train_arm(domains, tc);

    auto dir = scratch_dir();
    std::string pa = (dir / "rerun_a.bin").string(), pb = (dir / "rerun_b.bin").string();
    save_bundle(pa, a.bundle);
    save_bundle(pb, b.bundle);
    CHECK(read_bytes(pa) == read_bytes(pb));
    CHECK(records_equal(a.records, b.records));

    TrainConfig other = tc;
    other.seed = 12;
    TrainResult c = train_arm(domains, other);
    std::string pc = (dir / "rerun_c.bin").string();
    save_bundle(pc, c.bundle);
    CHECK(read_bytes(pa) != read_bytes(pc));
  }
}

TEST_CASE("frozen-parameter auditing stays silent for both adversarial arms") {
  auto domains = gen_rotated_moons(40, {0.0, 25.0, 50.0}, 0.1, 0.25, 9);
  for (Arm arm : {Arm::mian, Arm::multi_disc}) {
    CAPTURE(arm_name(arm));
    TrainConfig tc = tiny_config(arm, 3);
    tc.steps = 200;
    tc.check_freeze = true;
    tc.bsp_enabled = true;
    tc.gamma0 = 1e-3;
    TrainResult r = train_arm(domains, tc);
    CHECK(r.bundle.arm == arm);
  }
}

TEST_CASE("one source domain collapses both adversarial arms onto each other") {
  auto domains = gen_rotated_moons(60, {0.0, 55.0}, 0.1, 0.25, 13);
  TrainConfig tc = tiny_config(Arm::mian, 5);
  tc.steps = 10;
  tc.disc_objective = DiscObjective::softmax;

  TrainResult a = train_arm(domains, tc);
  tc.arm = Arm::multi_disc;
  TrainResult b = train_arm(domains, tc);

  auto pa = a.bundle.named_params();
  auto pb = b.bundle.named_params();
  REQUIRE(pa.size() == pb.size());
  double max_diff = 0.0;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    REQUIRE(pa[i].second->data.size() == pb[i].second->data.size());
    for (std::size_t j = 0; j < pa[i].second->data.size(); ++j) {
      max_diff = std::max(max_diff, std::abs(pa[i].second->data[j] - pb[i].second->data[j]));
    }
  }
  CHECK(max_diff <= 1e-8);
}

TEST_CASE("a zero adversarial weight reduces to source-only behavior") {
  auto domains = gen_rotated_moons(400, {0.0, 30.0, 60.0}, 0.12, 0.2, 17);
  double acc_zero_beta = 0.0, acc_source = 0.0;
  for (std::uint64_t seed = 1; seed <= 4; ++seed) {
    TrainConfig tc = tiny_config(Arm::mian, seed);
    tc.steps = 500;
    tc.m = 8;
    tc.latent_dim = 8;
    tc.encoder_hidden = {16, 16};
    tc.classifier_hidden = {16};
    tc.disc_hidden = {16};
    tc.beta0 = 0.0;
    acc_zero_beta += *train_arm(domains, tc).records.back().acc_target;
    tc.arm = Arm::source_only;
    acc_source += *train_arm(domains, tc).records.back().acc_target;
  }
  CHECK(std::abs(acc_zero_beta - acc_source) / 4.0 <= 0.02);
}

TEST_CASE("pair routing copies one source block plus the target block") {
  auto domains = gen_rotated_moons(30, {0.0, 20.0, 40.0}, 0.1, 0.3, 19);
  Rng rng(4);
  MultiDomainBatch batch = make_batch(domains, 5, rng);

  PairBatch pb = pair_batch(batch, 1);
  REQUIRE(pb.x.rows() == 10);
  for (std::size_t i = 0; i < 5; ++i) {
    CHECK(pb.binary_domains[i] == 1);
    CHECK(pb.binary_domains[5 + i] == 2);
    for (std::size_t j = 0; j < 2; ++j) {
      CHECK(pb.x.at(i, j) == batch.x.at(5 + i, j));       // source block 1
      CHECK(pb.x.at(5 + i, j) == batch.x.at(10 + i, j));  // target block
    }
  }
  CHECK_THROWS_AS(pair_batch(batch, 2), DataError);
}

TEST_CASE("accuracy evaluation demands labels and breaks ties downward") {
  auto domains = gen_rotated_moons(40, {0.0, 35.0}, 0.1, 0.25, 21);
  TrainConfig tc = tiny_config(Arm::source_only, 6);
  Rng rng(8);
  ModelBundle bundle = build_bundle(tc, 2, 2, 2, rng);

  // Silence the classifier head: every row ties, argmax falls to class 0.
  auto& out_layer = bundle.classifier.layers.back();
  for (double& v : out_layer.w.data) v = 0.0;
  for (double& v : out_layer.b.data) v = 0.0;

  std::size_t zeros = 0, total = 0;
  for (std::size_t i = 0; i < domains[0].n(); ++i) {
    if (domains[0].split[i] != 1) continue;
    ++total;
    zeros += domains[0].labels[i] == 0;
  }
  REQUIRE(total > 0);
  CHECK(eval_accuracy(bundle, domains[0]) ==
        doctest::Approx(static_cast<double>(zeros) / static_cast<double>(total)).epsilon(1e-12));

  auto unlabeled = domains[0];
  for (std::size_t i = 0; i < unlabeled.n(); ++i) {
    if (unlabeled.split[i] == 1) {
      unlabeled.labels[i] = -1;
      break;
    }
  }
  CHECK_THROWS_AS(eval_accuracy(bundle, unlabeled), DataError);

  auto no_test = domains[0];
  no_test.split.assign(no_test.n(), 0);
  CHECK_THROWS_AS(eval_accuracy(bundle, no_test), DataError);
}

TEST_CASE("metrics csv round-trips records with gaps") {
  std::vector<MetricsRecord> records(3);
  records[0].step = 0;
  records[0].beta = 2.0;
  records[0].acc_source_avg = 0.5;
  records[0].acc_target = 1.0 / 3.0;
  records[1].step = 50;
  records[1].loss_cls = 0.6931471805599453;
  records[1].loss_disc = 1.0986122886681098;
  records[1].beta = 1.9998;
  records[1].gamma = 1e-300;
  records[1].acc_source_avg = 0.875;
  records[1].acc_target = 0.8125;
  records[1].svd_entropy_src = 2.0794415416798357;
  records[1].svd_entropy_tgt = 0.1;
  records[2].step = 100;
  records[2].loss_cls = 0.25;

  auto dir = scratch_dir();
  std::string path = (dir / "metrics.csv").string();
  write_metrics_csv(path, records);
  auto back = read_metrics_csv(path);
  CHECK(records_equal(records, back));

  std::string again = (dir / "metrics2.csv").string();
  write_metrics_csv(again, back);
  CHECK(read_bytes(path) == read_bytes(again));

  std::string bad_header = (dir / "bad_header.csv").string();
  {
    std::ofstream f(bad_header, std::ios::binary);
    f << "step,loss\n1,2\n";
  }
  CHECK_THROWS_AS(read_metrics_csv(bad_header), DataError);

  std::string bad_line = (dir / "bad_line.csv").string();
  {
    std::ofstream f(bad_line, std::ios::binary);
    f << "step,loss_cls,loss_disc,beta,gamma,acc_source_avg,acc_target,svd_entropy_src,"
         "svd_entropy_tgt\n";
    f << "5,1,2,3,4,5,6,7\n";
  }
  CHECK_THROWS_WITH_AS(read_metrics_csv(bad_line), doctest::Contains(":2:"), DataError);

  std::string bad_num = (dir / "bad_num.csv").string();
  {
    std::ofstream f(bad_num, std::ios::binary);
    f << "step,loss_cls,loss_disc,beta,gamma,acc_source_avg,acc_target,svd_entropy_src,"
         "svd_entropy_tgt\n";
    f << "5,x,,,,,,,\n";
  }
  CHECK_THROWS_AS(read_metrics_csv(bad_num), DataError);
}

TEST_CASE("metrics cadence always includes step zero and the final step") {
  auto domains = gen_rotated_moons(40, {0.0, 45.0}, 0.1, 0.25, 23);
  TrainConfig tc = tiny_config(Arm::mian, 7);
  tc.steps = 25;
  tc.metrics_every = 10;
  TrainResult r = train_arm(domains, tc);
  REQUIRE(r.records.size() == 4);
  CHECK(r.records[0].step == 0);
  CHECK(r.records[1].step == 10);
  CHECK(r.records[2].step == 20);
  CHECK(r.records[3].step == 25);
  CHECK(!r.records[0].loss_cls.has_value());
  CHECK(*r.records[0].beta == tc.beta0);
  CHECK(!r.records[0].gamma.has_value());  // penalty disabled
  CHECK(r.records[3].loss_disc.has_value());

  tc.metrics_every = 0;
  TrainResult sparse = train_arm(domains, tc);
  REQUIRE(sparse.records.size() == 2);
  CHECK(sparse.records[0].step == 0);
  CHECK(sparse.records[1].step == 25);
}

TEST_CASE("bundle files restore the exact models and reject tampering") {
  auto dir = scratch_dir();
  TrainConfig tc = tiny_config(Arm::multi_disc, 31);
  Rng rng(31);
  ModelBundle bundle = build_bundle(tc, 2, 2, 3, rng);
  std::string path = (dir / "bundle.bin").string();
  save_bundle(path, bundle);

  ModelBundle back = load_bundle(path);
  CHECK(back.arm == Arm::multi_disc);
  CHECK(back.n_domains == 3);
  REQUIRE(back.discriminators.size() == 2);
  auto pa = bundle.named_params();
  auto pb = back.named_params();
  REQUIRE(pa.size() == pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    CHECK(pa[i].first == pb[i].first);
    CHECK(pa[i].second->data == pb[i].second->data);
  }
  std::string again = (dir / "bundle2.bin").string();
  save_bundle(again, back);
  CHECK(read_bytes(path) == read_bytes(again));

  auto records = load_checkpoint(path);

  auto drop = records;
  drop.erase(drop.begin());  // meta.arm leads the file
  CHECK_THROWS_AS(bundle_from_checkpoint(drop), CheckpointError);

  auto rogue_arm = records;
  rogue_arm[0].second = Tensor::scalar(9.0);
  CHECK_THROWS_AS(bundle_from_checkpoint(rogue_arm), CheckpointError);

  auto extra = records;
  extra.emplace_back("imposter.0.w", Tensor::zeros({2, 2}));
  extra.emplace_back("imposter.0.b", Tensor::zeros({2}));
  CHECK_THROWS_AS(bundle_from_checkpoint(extra), CheckpointError);

  auto widowed = records;
  for (std::size_t i = 0; i < widowed.size(); ++i) {
    if (widowed[i].first == "disc_1.0.w") {
      widowed.erase(widowed.begin() + static_cast<std::ptrdiff_t>(i));
      break;
    }
  }
  CHECK_THROWS_AS(bundle_from_checkpoint(widowed), CheckpointError);

  auto odd_name = records;
  odd_name[2].first = "encoder.0.q";
  CHECK_THROWS_AS(bundle_from_checkpoint(odd_name), CheckpointError);
}

TEST_CASE("runaway optimization reports the diverging step") {
  auto domains = gen_rotated_moons(40, {0.0, 45.0}, 0.1, 0.25, 29);
  TrainConfig tc = tiny_config(Arm::source_only, 9);
  tc.steps = 60;
  tc.optimizer = TrainConfig::Opt::sgd_momentum;
  tc.lr = 1e100;
  bool threw = false;
  try {
    train_arm(domains, tc);
  } catch (const DivergedError& e) {
    threw = true;
    CHECK(e.step >= 1);
    CHECK(!e.which.empty());
  }
  CHECK(threw);
}
