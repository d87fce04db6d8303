#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "seqadv/ctc.hpp"
#include "seqadv/data.hpp"
#include "seqadv/tape.hpp"

namespace seqadv {

class KindError : public Error {
 public:
  using Error::Error;
};

class WeightsError : public Error {
 public:
  using Error::Error;
};

class ChecksumError : public WeightsError {
 public:
  using WeightsError::WeightsError;
};

class VersionError : public WeightsError {
 public:
  using WeightsError::WeightsError;
};

class TrainingDiverged : public NumericError {
 public:
  using NumericError::NumericError;
};

namespace victims {

enum class ModelKind { classifier, seqnet };

std::string_view kind_name(ModelKind kind);
/// "classifier" or "seqnet"; throws KindError otherwise.
ModelKind parse_kind(std::string_view name);

inline constexpr std::size_t kClasses = 10;
inline constexpr std::size_t kFrames = 25;
inline constexpr std::size_t kSeqClasses = 11;  // blank + digits 0-9

struct ParamSpec {
  std::string name;
  grad::Shape shape;
  std::size_t fan_in = 0;
  std::size_t fan_out = 0;  // 0 marks a bias, initialised to zero
};

const std::vector<ParamSpec>& param_specs(ModelKind kind);

/// Named parameters in param_specs() order.
struct Model {
  ModelKind kind = ModelKind::classifier;
  std::vector<grad::Tensor> params;

  const grad::Tensor& param(std::string_view name) const;
  grad::Tensor& param(std::string_view name);
  bool operator==(const Model&) const = default;
};

/// Xavier-uniform weights, a = sqrt(6 / (fan_in + fan_out)); zero biases.
Model init_model(ModelKind kind, std::uint64_t seed);

/// Records the network on `tape`, with every parameter as a named input.
/// Classifier: images [N,1,28,28] -> logits [N,10].
/// SeqNet: images [N,1,32,100] -> frame logits [25*N, 11], row t*N + n.
grad::NodeId build_network(grad::Tape& tape, ModelKind kind, grad::NodeId images);

/// Binds every parameter of `model` under its tape input name.
void bind_params(grad::Bindings& bindings, const Model& model);

/// Logits [10] for one [28,28] image.
grad::Tensor forward_class(const Model& model, const grad::Tensor& image);
/// Frame logits [25,11] for one [32,100] image.
grad::Tensor forward_seq(const Model& model, const grad::Tensor& image);

/// Digit string <-> CTC label (digit d is class d + 1).
ctc::Label encode_digits(std::string_view digits);
std::string decode_label(std::span<const int> label);

struct EpochLog {
  std::size_t epoch = 0;
  double mean_loss = 0.0;
  double train_accuracy = 0.0;  // exact-sequence accuracy for SeqNet
  double seconds = 0.0;
};

struct TrainConfig {
  std::size_t epochs = 1;
  double learning_rate = 1e-3;
  std::size_t batch = 32;
  std::uint64_t seed = 0;
  std::function<void(const EpochLog&)> on_epoch;
};

/// Cross-entropy training with Adam; throws TrainingDiverged on a non-finite loss.
void train(Model& model, std::span<const data::ImageSample> dataset, const TrainConfig& config);
/// CTC training with Adam; throws TrainingDiverged on a non-finite loss.
void train(Model& model, std::span<const data::SeqSample> dataset, const TrainConfig& config);

double accuracy(const Model& model, std::span<const data::ImageSample> dataset);
/// Fraction whose best-path decode equals the full label.
double sequence_accuracy(const Model& model, std::span<const data::SeqSample> dataset);

/// Batched predictions: argmax class / best-path digit string.
std::vector<int> predict(const Model& model, std::span<const data::ImageSample> dataset);
std::vector<std::string> predict(const Model& model, std::span<const data::SeqSample> dataset);

inline constexpr std::uint32_t kWeightsVersion = 1;

std::string serialize(const Model& model);
/// Checks checksum, version and tensor names; `expected` adds a kind check.
Model deserialize(std::string_view bytes);
Model deserialize(std::string_view bytes, ModelKind expected);

void save(const Model& model, const std::filesystem::path& path);
Model load(const std::filesystem::path& path);
Model load(const std::filesystem::path& path, ModelKind expected);

}  // namespace victims
}  // namespace seqadv
