#include <sys/wait.h>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <fmt/format.h>
#include <gtest/gtest.h>

#include "seqadv/bench.hpp"
#include "seqadv/data.hpp"
#include "seqadv/victims.hpp"
#include "temp_dir.hpp"

using namespace seqadv;
namespace fs = std::filesystem;

namespace {

struct Run {
  int status = -1;
  std::string out;
};

Run cli(const std::string& args, const fs::path& scratch) {
  const fs::path log = scratch / "cli.log";
  const std::string cmd = fmt::format("'{}' {} > '{}' 2>&1", SEQADV_CLI, args, log.string());
  const int raw = std::system(cmd.c_str());
  Run r;
  r.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  std::ifstream in(log);
  r.out.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void put_u32(std::string& s, std::uint32_t v) {
  for (int shift = 24; shift >= 0; shift -= 8) s.push_back(static_cast<char>((v >> shift) & 0xff));
}

void write_idx(const fs::path& dir, const std::string& prefix, const std::vector<std::string>& images,
               const std::vector<int>& labels) {
  std::string img, lab;
  put_u32(img, 2051);
  put_u32(img, static_cast<std::uint32_t>(images.size()));
  put_u32(img, 28);
  put_u32(img, 28);
  for (const auto& i : images) img += i;
  put_u32(lab, 2049);
  put_u32(lab, static_cast<std::uint32_t>(labels.size()));
  for (int l : labels) lab.push_back(static_cast<char>(l));
  std::ofstream(dir / (prefix + "-images-idx3-ubyte"), std::ios::binary) << img;
  std::ofstream(dir / (prefix + "-labels-idx1-ubyte"), std::ios::binary) << lab;
}

// Blobby random digits-like images: mostly background with a bright patch.
std::vector<std::string> fake_images(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<std::string> out;
  for (std::size_t k = 0; k < n; ++k) {
    std::string px(28 * 28, '\0');
    const int cy = 8 + static_cast<int>(rng() % 12), cx = 8 + static_cast<int>(rng() % 12);
    for (int y = 0; y < 28; ++y) {
      for (int x = 0; x < 28; ++x) {
        if (std::abs(y - cy) < 6 && std::abs(x - cx) < 4) px[y * 28 + x] = static_cast<char>(100 + rng() % 156);
      }
    }
    out.push_back(std::move(px));
  }
  return out;
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    mnist_ = tmp_ / "mnist";
    fs::create_directories(mnist_);
    write_idx(mnist_, "train", fake_images(40, 1), std::vector<int>(40, 0));
    const auto test_images = fake_images(30, 2);
    write_idx(mnist_, "t10k", test_images, std::vector<int>(30, 0));
    weights_ = tmp_ / "classifier.bin";
    ASSERT_EQ(cli(fmt::format("train --model classifier --mnist-dir '{}' --out '{}' --epochs 0 --seed 3",
                              mnist_.string(), weights_.string()),
                  tmp_.path())
                  .status,
              0);
    // Relabel the test split with the untrained model's predictions so every sample is recognised.
    const auto model = victims::load(weights_);
    const auto test = data::load_mnist(mnist_, data::Split::test);
    const auto predicted = victims::predict(model, test);
    write_idx(mnist_, "t10k", test_images, std::vector<int>(predicted.begin(), predicted.end()));
    predicted_ = predicted;
  }

  test_support::TempDir tmp_;
  fs::path mnist_;
  fs::path weights_;
  std::vector<int> predicted_;
};

}  // namespace

TEST_F(Cli, TrainRequiresMnistDir) {
  const auto r = cli(fmt::format("train --model classifier --out '{}'", (tmp_ / "w.bin").string()), tmp_.path());
  EXPECT_EQ(r.status, 2);
  EXPECT_FALSE(fs::exists(tmp_ / "w.bin"));
}

TEST_F(Cli, TrainZeroEpochsWritesInitialWeightsReproducibly) {
  for (const std::string kind : {"classifier", "seqnet"}) {
    const auto a = tmp_ / (kind + "_a.bin");
    const auto b = tmp_ / (kind + "_b.bin");
    for (const auto& out : {a, b}) {
      const auto r = cli(fmt::format("train --model {} --mnist-dir '{}' --out '{}' --epochs 0 --seed 9 --samples 4",
                                     kind, mnist_.string(), out.string()),
                         tmp_.path());
      ASSERT_EQ(r.status, 0) << r.out;
    }
    EXPECT_EQ(slurp(a), slurp(b));
    EXPECT_EQ(victims::load(a), victims::init_model(victims::parse_kind(kind), 9));
  }
}

TEST_F(Cli, AttackWithoutStepsDumpsNeutralPerturbation) {
  const std::string target = predicted_[0] == 4 ? "5" : "4";
  const auto dump = tmp_ / "dump";
  const auto trace = tmp_ / "trace.jsonl";
  const auto r = cli(fmt::format("attack --weights '{}' --input '{}' --index 0 --target {} --method fixed:1 "
                                 "--max-iters 0 --trace '{}' --dump-dir '{}'",
                                 weights_.string(), (mnist_ / "t10k-images-idx3-ubyte").string(), target,
                                 trace.string(), dump.string()),
                     tmp_.path());
  ASSERT_EQ(r.status, 0) << r.out;
  EXPECT_NE(r.out.find("success=0"), std::string::npos);
  EXPECT_NE(r.out.find("iterations=0"), std::string::npos);
  const auto pert = data::read_pgm(dump / "perturbation.pgm");
  for (double v : pert.data()) EXPECT_EQ(data::denormalize(v), 128);
  const auto original = data::read_pgm(dump / "original.pgm");
  const auto x = data::load_idx_images(mnist_ / "t10k-images-idx3-ubyte")[0];
  EXPECT_EQ(original, x);

  const auto t = cli(fmt::format("trace --trace '{}' --report '{}'", trace.string(), (tmp_ / "t.csv").string()),
                     tmp_.path());
  ASSERT_EQ(t.status, 0) << t.out;
  EXPECT_NE(t.out.find("records 1\n"), std::string::npos);
  EXPECT_NE(t.out.find("alignment lock none"), std::string::npos);
}

TEST_F(Cli, AttackTraceAndDumpsAreConsistent) {
  const std::string target = predicted_[1] == 4 ? "5" : "4";
  const auto dump = tmp_ / "dump";
  const auto trace = tmp_ / "trace.jsonl";
  const auto report = tmp_ / "trace.csv";
  const auto r = cli(fmt::format("attack --weights '{}' --input '{}' --index 1 --target {} --method binary:2 "
                                 "--max-iters 60 --trace '{}' --dump-dir '{}'",
                                 weights_.string(), (mnist_ / "t10k-images-idx3-ubyte").string(), target,
                                 trace.string(), dump.string()),
                     tmp_.path());
  ASSERT_EQ(r.status, 0) << r.out;
  const auto model = victims::load(weights_);
  const std::string reloaded = attacks::decode(model, data::read_pgm(dump / "adversarial.pgm"));
  EXPECT_NE(r.out.find("pgm_decoded=" + reloaded + " "), std::string::npos) << r.out;

  const auto t = cli(fmt::format("trace --trace '{}' --report '{}'", trace.string(), report.string()), tmp_.path());
  ASSERT_EQ(t.status, 0) << t.out;
  std::istringstream lines(slurp(report));
  std::string line;
  std::getline(lines, line);
  EXPECT_EQ(line, "iteration,objective,l2,task_loss,eta1,eta2,decoded,alignment");
  std::size_t rows = 0;
  long previous = -1;
  std::string lock = "none";
  while (std::getline(lines, line)) {
    ++rows;
    std::vector<std::string> f;
    std::istringstream fields(line);
    for (std::string cell; std::getline(fields, cell, ',');) f.push_back(cell);
    ASSERT_EQ(f.size(), 8u) << line;
    const long iter = std::stol(f[0]);
    EXPECT_GT(iter, previous);
    previous = iter;
    EXPECT_EQ(f[4], "na");  // basic attack: no eta
    EXPECT_EQ(f[5], "na");
    if (lock == "none" && f[6] == target) lock = f[0];
  }
  const std::string records = slurp(trace);
  EXPECT_EQ(rows, static_cast<std::size_t>(std::count(records.begin(), records.end(), '\n')));
  EXPECT_NE(t.out.find(fmt::format("records {}\n", rows)), std::string::npos);
  EXPECT_NE(t.out.find("alignment lock " + lock), std::string::npos) << t.out;
}

TEST_F(Cli, AttackRejectsInfeasibleTarget) {
  const auto seq = tmp_ / "seqnet.bin";
  victims::save(victims::init_model(victims::ModelKind::seqnet, 1), seq);
  data::write_pgm(tmp_ / "blank.pgm", grad::Tensor({32, 100}, -1.0));
  const auto dump = tmp_ / "dump";
  for (const std::string& target : {std::string(14, '1'), std::string("12a")}) {
    const auto r = cli(fmt::format("attack --weights '{}' --input '{}' --target {} --dump-dir '{}'", seq.string(),
                                   (tmp_ / "blank.pgm").string(), target, dump.string()),
                       tmp_.path());
    EXPECT_NE(r.status, 0) << target;
    EXPECT_NE(r.out.find("error:"), std::string::npos);
  }
  EXPECT_FALSE(fs::exists(dump / "adversarial.pgm"));
}

TEST_F(Cli, BenchSingleSampleReportMatchesCsv) {
  const auto csv = tmp_ / "bench.csv";
  const auto r = cli(fmt::format("bench --weights '{}' --dataset mnist --mnist-dir '{}' --count 1 --methods adaptive "
                                 "--seed 4 --max-iters 50 --out '{}'",
                                 weights_.string(), mnist_.string(), csv.string()),
                     tmp_.path());
  ASSERT_EQ(r.status, 0) << r.out;
  const auto rows = bench::parse_csv(slurp(csv));
  ASSERT_EQ(rows.size(), 1u);
  const auto rep = bench::report(rows);
  EXPECT_NE(r.out.find(fmt::format("{:.2f}%", 100.0 * rep[0].success_rate)), std::string::npos) << r.out;
}

TEST_F(Cli, BenchCsvIndependentOfJobs) {
  std::vector<std::string> bodies;
  for (int jobs : {1, 4}) {
    const auto csv = tmp_ / fmt::format("bench{}.csv", jobs);
    const auto r = cli(fmt::format("bench --weights '{}' --mnist-dir '{}' --count 5 --methods fixed:1,adaptive "
                                   "--seed 8 --max-iters 30 --jobs {} --out '{}'",
                                   weights_.string(), mnist_.string(), jobs, csv.string()),
                       tmp_.path());
    ASSERT_EQ(r.status, 0) << r.out;
    auto rows = bench::parse_csv(slurp(csv));
    for (auto& row : rows) row.wall_ms = 0.0;
    bodies.push_back(bench::to_csv(rows));
  }
  EXPECT_EQ(bodies[0], bodies[1]);
}

TEST_F(Cli, BenchRejectsMismatchedDatasetAndEdits) {
  const auto base = fmt::format("bench --weights '{}' --mnist-dir '{}' --count 1 ", weights_.string(), mnist_.string());
  EXPECT_EQ(cli(base + "--dataset seqmnist", tmp_.path()).status, 1);
  EXPECT_EQ(cli(base + "--edits insert", tmp_.path()).status, 1);
  EXPECT_EQ(cli(base + "--methods fixed:x", tmp_.path()).status, 1);
}

TEST_F(Cli, TraceRejectsMalformedJson) {
  std::ofstream(tmp_ / "bad.jsonl") << "{\"iter\": 0, \"obj\": 1}\nnot json\n";
  const auto r = cli(fmt::format("trace --trace '{}'", (tmp_ / "bad.jsonl").string()), tmp_.path());
  EXPECT_EQ(r.status, 1);
  EXPECT_NE(r.out.find("malformed"), std::string::npos);
}
