#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "seqadv/rng.hpp"
#include "seqadv/tape.hpp"
#include "seqadv/victims.hpp"

namespace seqadv {

class PreconditionError : public Error {
 public:
  using Error::Error;
};

namespace attacks {

enum class ObjectiveKind {
  basic,      // task + lambda * ||x - tanh(w)||^2
  adaptive,   // learned weights; the sequential form carries the bare e^-eta2 term
  general_n,  // sequential n-path form with floor c
};

struct AttackConfig {
  double learning_rate = 0.05;
  std::size_t max_iters = 2000;  // per lambda step
  std::size_t early_stop_k = 20;
  double lambda = 0.1;
  double lambda_lo = 0.01;
  double lambda_hi = 1000.0;
  std::size_t search_steps = 1;
  std::size_t n_paths = 2;
  double path_floor = 0.1;
  /// Starting (eta1, eta2). A large eta1 lets the task term act first; from
  /// eta1 = 0 the distance weight grows before the task loss moves and runs stall.
  double eta1_init = 6.0;
  double eta2_init = 0.0;
  double eta_min = -10.0;
  double eta_max = 10.0;
  /// |w| bound keeping tanh(w) strictly inside (-1, 1) in double precision.
  double w_clamp = 15.0;
  bool record_trace = false;

  void validate() const;
};

enum class Method { fixed, binary, adaptive };

/// Defaults per victim and method: early stop 20 for basic runs and 1 for
/// adaptive; 2000 iterations per step, 10000 for sequential fixed-lambda and
/// adaptive runs; 3 search steps for binary.
AttackConfig default_config(victims::ModelKind kind, Method method);

struct TraceRecord {
  std::size_t iter = 0;
  double obj = 0.0;
  double best_obj = 0.0;
  double l2 = 0.0;
  double task = 0.0;
  std::optional<double> eta1;
  std::optional<double> eta2;
  std::optional<double> lambda;
  std::string decoded;
  std::vector<int> align;
};

struct AttackResult {
  bool success = false;
  grad::Tensor x_adv;
  double l2 = 0.0;
  std::size_t iterations = 0;
  std::string decoded;  // decode of x_adv (or of the last iterate on failure)
  std::vector<TraceRecord> trace;
};

/// arctanh(clamp(x, -1 + 1e-6, 1 - 1e-6)).
grad::Tensor init_w(const grad::Tensor& x);

/// Argmax class as a one-character string, or the best-path digit string.
std::string decode(const victims::Model& model, const grad::Tensor& image);

/// Objective of one attack instance, recorded once and reusable across
/// lambda values, eta values and iterates.
class AttackProblem {
 public:
  AttackProblem(const victims::Model& model, const grad::Tensor& x, std::string_view target, ObjectiveKind kind,
                const AttackConfig& config = {});

  struct Point {
    double objective = 0.0;
    double task = 0.0;
    double distance = 0.0;  // squared l2
    grad::Tensor x_adv;
    grad::Tensor logits;
    grad::Tensor grad_w;
    grad::Tensor grad_eta;  // [2]; adaptive kinds only
    grad::Evaluation evaluation;
  };

  /// eta is [2] (eta1, eta2), ignored by the basic objective; lambda is ignored by adaptive ones.
  Point evaluate(const grad::Tensor& w, const grad::Tensor& eta, double lambda, bool gradients) const;
  /// Fills grad_w (and grad_eta) of a point returned by evaluate().
  void differentiate(Point& point) const;

  /// Decoded label and per-frame alignment (empty for classifiers) of logits.
  std::string decode(const grad::Tensor& logits) const;
  std::vector<int> alignment(const grad::Tensor& logits) const;

  ObjectiveKind kind() const { return kind_; }
  const grad::Tensor& x() const { return x_; }
  const std::string& target() const { return target_; }

 private:
  const victims::Model* model_;
  grad::Tensor x_;
  std::string target_;
  ObjectiveKind kind_;
  grad::Tape tape_;
  grad::Bindings params_;
  grad::NodeId objective_ = 0, task_ = 0, distance_ = 0, x_adv_ = 0, logits_ = 0;
};

/// Basic attack at a fixed lambda. `source` must be the current decode of x.
AttackResult attack_fixed(const victims::Model& model, const grad::Tensor& x, std::string_view source,
                          std::string_view target, double lambda, const AttackConfig& config);

/// Geometric binary search over lambda in [lambda_lo, lambda_hi] from `config.lambda`.
AttackResult attack_binary(const victims::Model& model, const grad::Tensor& x, std::string_view source,
                           std::string_view target, std::size_t steps, const AttackConfig& config);

/// Joint optimization of w and eta; `general_n` selects the n-path sequential form.
AttackResult attack_adaptive(const victims::Model& model, const grad::Tensor& x, std::string_view source,
                             std::string_view target, const AttackConfig& config, bool general_n = false);

enum class EditOp { insert, insert_repeat, substitute, remove };

std::string_view edit_name(EditOp op);
EditOp parse_edit(std::string_view name);

/// Single edit at a 0-based position. insert places `symbol` before `position`
/// (position == size appends); insert_repeat duplicates label[position].
std::string edit_target(std::string_view label, EditOp op, std::size_t position, char symbol = '\0');

/// Edit with position and symbol drawn uniformly from `alphabet`.
std::string random_edit(std::string_view label, EditOp op, std::string_view alphabet, Rng& rng);

struct Alphabet {
  std::string symbols;
  bool words = false;  // draw from the embedded common-word list first
};

const Alphabet& digit_alphabet();
const Alphabet& word_alphabet();

/// Same-length target different from `label`.
std::string sample_target(std::string_view label, const Alphabet& alphabet, Rng& rng);

}  // namespace attacks
}  // namespace seqadv
