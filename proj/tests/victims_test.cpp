#include <array>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include <gtest/gtest.h>
#include <zlib.h>

#include "finite_difference.hpp"
#include "seqadv/victims.hpp"
#include "temp_dir.hpp"

using namespace seqadv;
using namespace seqadv::victims;
using grad::Tensor;

namespace {

Tensor random_image(grad::Shape shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return test_support::random_tensor(std::move(shape), rng, -0.95, 0.95);
}

// Reseals a modified weights body with a fresh trailing CRC32.
std::string reseal(std::string bytes) {
  bytes.resize(bytes.size() - 4);
  const auto crc = static_cast<std::uint32_t>(
      ::crc32(0L, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size())));
  for (int i = 0; i < 4; ++i) bytes.push_back(static_cast<char>((crc >> (8 * i)) & 0xff));
  return bytes;
}

std::vector<data::ImageSample> tiny_digits(std::size_t n) {
  std::vector<data::ImageSample> out;
  for (std::size_t i = 0; i < n; ++i) {
    Tensor t({28, 28}, -1.0);
    const int label = static_cast<int>(i % 2);
    for (std::size_t r = 6; r < 22; ++r) t[r * 28 + (label == 0 ? 8 : 20)] = 1.0;
    out.push_back({std::move(t), label, i});
  }
  return out;
}

}  // namespace

TEST(InitModel, DeterministicPerSeed) {
  for (auto kind : {ModelKind::classifier, ModelKind::seqnet}) {
    EXPECT_EQ(init_model(kind, 4), init_model(kind, 4));
    EXPECT_NE(init_model(kind, 4), init_model(kind, 5));
  }
}

TEST(InitModel, XavierBounds) {
  for (auto kind : {ModelKind::classifier, ModelKind::seqnet}) {
    const Model m = init_model(kind, 11);
    const auto& specs = param_specs(kind);
    ASSERT_EQ(m.params.size(), specs.size());
    for (std::size_t i = 0; i < specs.size(); ++i) {
      EXPECT_EQ(m.params[i].shape(), specs[i].shape);
      EXPECT_TRUE(m.params[i].all_finite());
      const double a = specs[i].fan_out == 0 ? 0.0 : std::sqrt(6.0 / double(specs[i].fan_in + specs[i].fan_out));
      for (double v : m.params[i].data()) EXPECT_LE(std::abs(v), a) << specs[i].name;
    }
  }
}

TEST(ForwardClass, ShapeAndPurity) {
  const Model m = init_model(ModelKind::classifier, 1);
  const Tensor x = random_image({28, 28}, 2);
  const Tensor a = forward_class(m, x);
  EXPECT_EQ(a.shape(), (grad::Shape{10}));
  EXPECT_EQ(a, forward_class(m, x));
  EXPECT_THROW(forward_class(m, Tensor({28, 27})), ShapeError);
  EXPECT_THROW(forward_seq(m, Tensor({32, 100})), KindError);
}

TEST(ForwardClass, PermutingHeadPermutesLogits) {
  Model m = init_model(ModelKind::classifier, 1);
  m.param("dense.b") = random_image({10}, 3);
  const Tensor x = random_image({28, 28}, 2);
  const Tensor before = forward_class(m, x);
  const std::array<std::size_t, 10> perm{3, 7, 0, 9, 1, 5, 2, 8, 6, 4};
  Model permuted = m;
  for (std::size_t r = 0; r < 784; ++r) {
    for (std::size_t c = 0; c < 10; ++c) permuted.param("dense.w")[r * 10 + c] = m.param("dense.w")[r * 10 + perm[c]];
  }
  for (std::size_t c = 0; c < 10; ++c) permuted.param("dense.b")[c] = m.param("dense.b")[perm[c]];
  const Tensor after = forward_class(permuted, x);
  for (std::size_t c = 0; c < 10; ++c) EXPECT_NEAR(after[c], before[perm[c]], 1e-12);
}

TEST(ForwardClass, InputGradientMatchesFiniteDifferences) {
  const Model m = init_model(ModelKind::classifier, 5);
  const Tensor x = random_image({28, 28}, 6);
  grad::Tape tape;
  const auto images = tape.input("images", {1, 1, 28, 28});
  const auto ce = tape.scale(tape.gather(tape.log_softmax(build_network(tape, ModelKind::classifier, images)), {3}), -1.0);
  const auto loss = tape.sum(ce);
  grad::Bindings b;
  bind_params(b, m);
  b.set("images", x.reshaped({1, 1, 28, 28}));
  const auto g = grad::grad(tape, loss, std::vector<std::string>{"images"}, b).at("images").reshaped({28, 28});
  auto f = [&](const Tensor& v) {
    const Tensor logits = forward_class(m, v);
    double hi = logits[0];
    for (double l : logits.data()) hi = std::max(hi, l);
    double total = 0.0;
    for (double l : logits.data()) total += std::exp(l - hi);
    return hi + std::log(total) - logits[3];
  };
  EXPECT_LE(test_support::max_fd_error(f, x, g, test_support::sample_coordinates(x.size(), 60, 1)), 1e-5);
}

TEST(ForwardSeq, ShapeAndPurity) {
  const Model m = init_model(ModelKind::seqnet, 1);
  const Tensor x = random_image({32, 100}, 2);
  const Tensor a = forward_seq(m, x);
  EXPECT_EQ(a.shape(), (grad::Shape{25, 11}));
  EXPECT_EQ(a, forward_seq(m, x));
  EXPECT_THROW(forward_seq(m, Tensor({32, 99})), ShapeError);
  EXPECT_THROW(forward_class(m, Tensor({28, 28})), KindError);
}

TEST(ForwardSeq, CtcGradientMatchesFiniteDifferences) {
  const Model m = init_model(ModelKind::seqnet, 7);
  const Tensor x = random_image({32, 100}, 8);
  const ctc::Label label = encode_digits("3141");
  grad::Tape tape;
  const auto images = tape.input("images", {1, 1, 32, 100});
  const auto lp = tape.log_softmax(build_network(tape, ModelKind::seqnet, images));
  const auto loss = ctc::loss_node(tape, lp, kFrames, label);
  grad::Bindings b;
  bind_params(b, m);
  b.set("images", x.reshaped({1, 1, 32, 100}));
  const auto g = grad::grad(tape, loss, std::vector<std::string>{"images"}, b).at("images").reshaped({32, 100});
  auto f = [&](const Tensor& v) { return ctc::ctc_loss(ctc::log_softmax_frames(forward_seq(m, v)), label); };
  EXPECT_LE(test_support::max_fd_error(f, x, g, test_support::sample_coordinates(x.size(), 60, 2)), 1e-4);
}

TEST(ForwardSeq, StackedBatchMatchesSingleForward) {
  const Model m = init_model(ModelKind::seqnet, 3);
  std::vector<data::SeqSample> samples;
  for (std::uint64_t i = 0; i < 3; ++i) samples.push_back({random_image({32, 100}, 20 + i), "123", {}});
  grad::Tape tape;
  const auto images = tape.input("images", {3, 1, 32, 100});
  const auto logits = build_network(tape, ModelKind::seqnet, images);
  Tensor packed({3, 1, 32, 100});
  for (std::size_t n = 0; n < 3; ++n) {
    for (std::size_t i = 0; i < 3200; ++i) packed[n * 3200 + i] = samples[n].pixels[i];
  }
  grad::Bindings b;
  bind_params(b, m);
  b.set("images", packed);
  const std::array<grad::NodeId, 1> outputs{logits};
  const Tensor stacked = grad::forward(tape, b, outputs).value(logits);
  for (std::size_t n = 0; n < 3; ++n) {
    const Tensor single = forward_seq(m, samples[n].pixels);
    for (std::size_t t = 0; t < kFrames; ++t) {
      for (std::size_t c = 0; c < kSeqClasses; ++c) {
        EXPECT_NEAR(stacked[(t * 3 + n) * kSeqClasses + c], single[t * kSeqClasses + c], 1e-12);
      }
    }
  }
}

TEST(Digits, EncodeDecode) {
  EXPECT_EQ(encode_digits("0912"), (ctc::Label{1, 10, 2, 3}));
  EXPECT_EQ(decode_label(ctc::Label{1, 10, 2, 3}), "0912");
  EXPECT_THROW(encode_digits("12a"), Error);
  EXPECT_THROW(decode_label(ctc::Label{0}), Error);
}

TEST(Train, ZeroEpochsLeavesModelUnchanged) {
  Model m = init_model(ModelKind::classifier, 1);
  const Model before = m;
  TrainConfig cfg;
  cfg.epochs = 0;
  train(m, tiny_digits(8), cfg);
  EXPECT_EQ(m, before);
}

TEST(Train, ClassifierLearnsToySetDeterministically) {
  const auto digits = tiny_digits(64);
  Model a = init_model(ModelKind::classifier, 1);
  Model b = a;
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch = 16;
  cfg.seed = 4;
  std::vector<EpochLog> logs;
  cfg.on_epoch = [&](const EpochLog& l) { logs.push_back(l); };
  train(a, digits, cfg);
  cfg.on_epoch = nullptr;
  train(b, digits, cfg);
  EXPECT_EQ(a, b);
  ASSERT_EQ(logs.size(), 3u);
  EXPECT_LT(logs.back().mean_loss, logs.front().mean_loss);
  EXPECT_EQ(accuracy(a, digits), 1.0);
}

TEST(Train, SeqNetLossDecreases) {
  std::vector<data::SeqSample> samples;
  for (std::uint64_t i = 0; i < 8; ++i) samples.push_back({random_image({32, 100}, 40 + i), i % 2 ? "12" : "345", {}});
  Model m = init_model(ModelKind::seqnet, 2);
  TrainConfig cfg;
  cfg.epochs = 4;
  cfg.batch = 4;
  std::vector<double> losses;
  cfg.on_epoch = [&](const EpochLog& l) { losses.push_back(l.mean_loss); };
  train(m, samples, cfg);
  ASSERT_EQ(losses.size(), 4u);
  EXPECT_LT(losses.back(), losses.front());
}

TEST(Train, NonFiniteWeightsReportDivergence) {
  Model m = init_model(ModelKind::classifier, 1);
  m.param("dense.w")[0] = std::nan("");
  TrainConfig cfg;
  EXPECT_THROW(train(m, tiny_digits(4), cfg), TrainingDiverged);
}

TEST(Train, WrongKindAndEmptyDataset) {
  Model m = init_model(ModelKind::seqnet, 1);
  EXPECT_THROW(train(m, tiny_digits(4), TrainConfig{}), KindError);
  Model c = init_model(ModelKind::classifier, 1);
  EXPECT_THROW(train(c, std::vector<data::ImageSample>{}, TrainConfig{}), Error);
}

TEST(Weights, SaveLoadSaveIsByteIdentical) {
  test_support::TempDir dir;
  for (auto kind : {ModelKind::classifier, ModelKind::seqnet}) {
    const Model m = init_model(kind, 9);
    save(m, dir / "w.bin");
    const Model back = load(dir / "w.bin", kind);
    EXPECT_EQ(back, m);
    EXPECT_EQ(serialize(back), serialize(m));
  }
}

TEST(Weights, TruncationIsChecksumError) {
  const std::string bytes = serialize(init_model(ModelKind::classifier, 1));
  for (std::size_t cut : {std::size_t{1}, std::size_t{100}, bytes.size() / 2, bytes.size() - 5}) {
    EXPECT_THROW(deserialize(std::string_view(bytes).substr(0, bytes.size() - cut)), ChecksumError) << cut;
  }
  std::string flipped = bytes;
  flipped[40] = static_cast<char>(flipped[40] ^ 1);
  EXPECT_THROW(deserialize(flipped), ChecksumError);
}

TEST(Weights, KindMismatch) {
  const std::string bytes = serialize(init_model(ModelKind::classifier, 1));
  EXPECT_THROW(deserialize(bytes, ModelKind::seqnet), KindError);
  EXPECT_NO_THROW(deserialize(bytes, ModelKind::classifier));
}

TEST(Weights, VersionMismatch) {
  std::string bytes = serialize(init_model(ModelKind::classifier, 1));
  bytes[8] = 2;  // version follows the 8-byte magic
  EXPECT_THROW(deserialize(reseal(bytes)), VersionError);
}

TEST(Weights, UnknownTensorName) {
  std::string bytes = serialize(init_model(ModelKind::classifier, 1));
  const auto at = bytes.find("conv1.w");
  ASSERT_NE(at, std::string::npos);
  bytes[at + 4] = 'X';
  EXPECT_THROW(deserialize(reseal(bytes)), WeightsError);
}

TEST(Weights, UnknownKindTag) {
  std::string bytes = serialize(init_model(ModelKind::classifier, 1));
  const auto at = bytes.find("classifier");
  bytes[at] = 'k';
  EXPECT_THROW(deserialize(reseal(bytes)), KindError);
}
