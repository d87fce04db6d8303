#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "seqadv/attacks.hpp"
#include "seqadv/victims.hpp"

namespace seqadv::bench {

/// "fixed:<lambda>", "binary:<steps>" or "adaptive".
struct MethodSpec {
  attacks::Method method = attacks::Method::adaptive;
  double lambda = 0.1;
  std::size_t steps = 3;
  std::string name;
};

MethodSpec parse_method(std::string_view text);
/// Comma-separated list.
std::vector<MethodSpec> parse_methods(std::string_view list);

/// "random" (same-length target) or one of the single edits.
struct EditSpec {
  bool random = true;
  attacks::EditOp op = attacks::EditOp::substitute;
  std::string name;
};

EditSpec parse_edit(std::string_view text);
std::vector<EditSpec> parse_edits(std::string_view list);

/// Target for one (sample, edit) pair; deterministic in (seed, id, edit).
std::string make_target(std::string_view label, const EditSpec& edit, std::uint64_t seed, std::size_t id);

struct Sample {
  std::size_t id = 0;
  grad::Tensor x;
  std::string label;
};

/// Synthesis seed of the held-out SeqMNIST set built from the MNIST test split.
inline constexpr std::uint64_t kHeldOutSeed = 2;
inline constexpr std::size_t kHeldOutSize = 1000;

std::vector<data::SeqSample> held_out_seqmnist(const std::filesystem::path& mnist_dir);

/// The first `count` test samples the model labels correctly, ids in dataset order.
std::vector<Sample> correct_samples(const victims::Model& model, const std::filesystem::path& mnist_dir,
                                    std::size_t count);

struct Row {
  std::size_t id = 0;
  std::string method;
  std::string edit;
  std::string target;
  bool success = false;
  double l2 = 0.0;
  std::size_t iterations = 0;
  double wall_ms = 0.0;
};

struct Options {
  std::vector<MethodSpec> methods;
  std::vector<EditSpec> edits;
  std::uint64_t seed = 0;
  std::size_t jobs = 1;
  /// Applied on top of each method's defaults when positive.
  double learning_rate = 0.0;
  std::size_t max_iters = 0;
};

/// One row per (sample, edit, method), in that nesting order regardless of `jobs`.
std::vector<Row> run(const victims::Model& model, std::span<const Sample> samples, const Options& options);

/// Runs one method against one sample and target.
attacks::AttackResult attack(const victims::Model& model, const Sample& sample, std::string_view target,
                             const MethodSpec& method, const attacks::AttackConfig& config);

/// Method defaults; positive learning_rate / max_iters override them.
attacks::AttackConfig config_for(victims::ModelKind kind, const MethodSpec& method, double learning_rate = 0.0,
                                 std::size_t max_iters = 0);

inline constexpr std::string_view kCsvHeader = "id,method,edit,target,success,l2,iterations,wall_ms";
std::string to_csv(std::span<const Row> rows);
std::vector<Row> parse_csv(std::string_view text);

struct MethodReport {
  std::string method;
  std::size_t samples = 0;
  std::size_t successes = 0;
  double success_rate = 0.0;
  double mean_l2 = 0.0;          // successes only
  double mean_iterations = 0.0;  // successes only
  std::size_t total_iterations = 0;
};

/// Aggregates per method in first-appearance order.
std::vector<MethodReport> report(std::span<const Row> rows);
std::string format_report(std::span<const MethodReport> reports);

}  // namespace seqadv::bench
