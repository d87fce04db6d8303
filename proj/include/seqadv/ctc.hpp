#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "seqadv/tape.hpp"
#include "seqadv/tensor.hpp"

namespace seqadv {

class InfeasibleLabelError : public Error {
 public:
  using Error::Error;
};

namespace ctc {

inline constexpr int kBlank = 0;

/// Class ids in [1, C-1]; blank never appears.
using Label = std::vector<int>;
/// Frame-aligned class ids in [0, C-1].
using Path = std::vector<int>;

/// T x C log-probabilities, every row normalized.
class LogProbFrames {
 public:
  /// Validates shape [T, C] with T >= 1, C >= 2 and row log-sum-exp within 1e-9 of zero.
  explicit LogProbFrames(grad::Tensor values);

  std::size_t frames() const noexcept { return values_.shape()[0]; }
  std::size_t classes() const noexcept { return values_.shape()[1]; }
  double at(std::size_t t, std::size_t c) const { return values_[t * classes() + c]; }
  const grad::Tensor& tensor() const noexcept { return values_; }

 private:
  grad::Tensor values_;
};

/// Row-wise log-softmax of [T, C] frame scores.
LogProbFrames log_softmax_frames(const grad::Tensor& frame_logits);

/// Merge adjacent repeats, then drop blanks.
Label collapse(std::span<const int> path);

/// Fewest frames able to emit `label`: one per symbol plus a blank between equal neighbours.
std::size_t required_frames(std::span<const int> label);

/// Where frame t lives in a stacked [R, C] log-probability matrix: row = first + t * step.
struct FrameRows {
  std::size_t first = 0;
  std::size_t step = 1;
};

/// Records -log p(label | frames) on the tape as the log-space alpha recursion
/// over the blank-interleaved label. `log_probs` is a [R, C] node of
/// normalized rows. Throws InfeasibleLabelError when frames < required_frames(label).
grad::NodeId loss_node(grad::Tape& tape, grad::NodeId log_probs, std::size_t frames, const Label& label,
                       FrameRows rows = {});

double ctc_loss(const LogProbFrames& lp, const Label& label);

/// Enumerates all C^T paths; refuses instances with C^T > 1e6.
double ctc_loss_bruteforce(const LogProbFrames& lp, const Label& label);

/// Per-frame argmax (lowest class id on ties).
Path alignment(const LogProbFrames& lp);
Path alignment(const grad::Tensor& frame_scores);

Label best_path_decode(const LogProbFrames& lp);

}  // namespace ctc
}  // namespace seqadv
