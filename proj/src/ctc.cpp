#include "seqadv/ctc.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>

#include <fmt/format.h>

namespace seqadv::ctc {

LogProbFrames::LogProbFrames(grad::Tensor values) : values_(std::move(values)) {
  const auto& s = values_.shape();
  if (s.size() != 2 || s[0] < 1 || s[1] < 2) {
    throw ShapeError(fmt::format("log-prob frames must be [T>=1, C>=2], got {}", grad::shape_str(s)));
  }
  if (!values_.all_finite()) throw NumericError("log-prob frames contain non-finite values");
  for (std::size_t t = 0; t < s[0]; ++t) {
    double total = 0.0;
    for (std::size_t c = 0; c < s[1]; ++c) total += std::exp(values_[t * s[1] + c]);
    if (std::abs(std::log(total)) > 1e-9) {
      throw NumericError(fmt::format("frame {} is not normalized (log-sum-exp {})", t, std::log(total)));
    }
  }
}

LogProbFrames log_softmax_frames(const grad::Tensor& frame_logits) {
  if (frame_logits.rank() != 2) {
    throw ShapeError(fmt::format("frame logits must be [T, C], got {}", grad::shape_str(frame_logits.shape())));
  }
  grad::Tape tape;
  const auto x = tape.input("logits", frame_logits.shape());
  const auto y = tape.log_softmax(x);
  grad::Bindings bindings;
  bindings.set("logits", frame_logits);
  const std::array<grad::NodeId, 1> outputs{y};
  return LogProbFrames(grad::forward(tape, bindings, outputs).value(y));
}

Label collapse(std::span<const int> path) {
  Label out;
  int previous = -1;
  for (int c : path) {
    if (c != previous && c != kBlank) out.push_back(c);
    previous = c;
  }
  return out;
}

std::size_t required_frames(std::span<const int> label) {
  std::size_t needed = label.size();
  for (std::size_t i = 1; i < label.size(); ++i) {
    if (label[i] == label[i - 1]) ++needed;
  }
  return needed;
}

namespace {

void check_label(const Label& label, std::size_t classes) {
  for (int c : label) {
    if (c <= kBlank || static_cast<std::size_t>(c) >= classes) {
      throw Error(fmt::format("label symbol {} outside [1, {}]", c, classes - 1));
    }
  }
}

void check_feasible(const Label& label, std::size_t frames) {
  const std::size_t needed = required_frames(label);
  if (frames < needed) {
    throw InfeasibleLabelError(
        fmt::format("label of length {} needs at least {} frames, only {} available", label.size(), needed, frames));
  }
}

}  // namespace

grad::NodeId loss_node(grad::Tape& tape, grad::NodeId log_probs, std::size_t frames, const Label& label,
                       FrameRows rows) {
  const auto& shape = tape.shape(log_probs);
  if (shape.size() != 2 || frames == 0 || rows.first + (frames - 1) * rows.step >= shape[0]) {
    throw ShapeError(fmt::format("ctc: {} frames do not fit log-probs {}", frames, grad::shape_str(shape)));
  }
  const std::size_t classes = shape[1];
  check_label(label, classes);
  check_feasible(label, frames);

  // Blank-interleaved label: b l0 b l1 ... b.
  const std::size_t states = 2 * label.size() + 1;
  std::vector<int> ext(states, kBlank);
  for (std::size_t i = 0; i < label.size(); ++i) ext[2 * i + 1] = label[i];
  auto can_skip = [&](std::size_t s) { return s >= 2 && ext[s] != kBlank && ext[s] != ext[s - 2]; };

  // Cells reachable from the start and able to reach an accepting end state.
  std::vector<std::vector<char>> forward(frames, std::vector<char>(states, 0));
  std::vector<std::vector<char>> backward(frames, std::vector<char>(states, 0));
  forward[0][0] = 1;
  if (states > 1) forward[0][1] = 1;
  for (std::size_t t = 1; t < frames; ++t) {
    for (std::size_t s = 0; s < states; ++s) {
      forward[t][s] = forward[t - 1][s] || (s >= 1 && forward[t - 1][s - 1]) || (can_skip(s) && forward[t - 1][s - 2]);
    }
  }
  backward[frames - 1][states - 1] = 1;
  if (states > 1) backward[frames - 1][states - 2] = 1;
  for (std::size_t t = frames - 1; t-- > 0;) {
    for (std::size_t s = 0; s < states; ++s) {
      backward[t][s] = backward[t + 1][s] || (s + 1 < states && backward[t + 1][s + 1]) ||
                       (s + 2 < states && can_skip(s + 2) && backward[t + 1][s + 2]);
    }
  }

  auto emission_index = [&](std::size_t t, std::size_t s) {
    return (rows.first + t * rows.step) * classes + static_cast<std::size_t>(ext[s]);
  };

  std::vector<std::size_t> live;           // states alive at the previous frame, ascending
  std::vector<std::size_t> position(states);  // state -> index within the previous alpha vector
  grad::NodeId alpha = 0;
  for (std::size_t t = 0; t < frames; ++t) {
    std::vector<std::size_t> current;
    for (std::size_t s = 0; s < states; ++s) {
      if (forward[t][s] && backward[t][s]) current.push_back(s);
    }
    std::vector<std::size_t> emissions;
    for (std::size_t s : current) emissions.push_back(emission_index(t, s));
    const grad::NodeId emit = tape.gather(log_probs, std::move(emissions));
    if (t == 0) {
      alpha = emit;
    } else {
      std::vector<char> alive(states, 0);
      for (std::size_t k = 0; k < live.size(); ++k) {
        alive[live[k]] = 1;
        position[live[k]] = k;
      }
      std::vector<std::vector<std::size_t>> groups;
      for (std::size_t s : current) {
        std::vector<std::size_t> preds;
        if (alive[s]) preds.push_back(position[s]);
        if (s >= 1 && alive[s - 1]) preds.push_back(position[s - 1]);
        if (can_skip(s) && alive[s - 2]) preds.push_back(position[s - 2]);
        groups.push_back(std::move(preds));
      }
      alpha = tape.add(tape.segment_logsumexp(alpha, groups), emit);
    }
    live = std::move(current);
  }

  std::vector<std::size_t> ends;
  for (std::size_t k = 0; k < live.size(); ++k) {
    if (live[k] + 2 >= states) ends.push_back(k);
  }
  return tape.scale(tape.logsumexp(tape.gather(alpha, std::move(ends))), -1.0);
}

double ctc_loss(const LogProbFrames& lp, const Label& label) {
  grad::Tape tape;
  const auto x = tape.input("log_probs", lp.tensor().shape());
  const auto loss = loss_node(tape, x, lp.frames(), label);
  grad::Bindings bindings;
  bindings.set("log_probs", lp.tensor());
  const std::array<grad::NodeId, 1> outputs{loss};
  return grad::forward(tape, bindings, outputs).value(loss).item();
}

double ctc_loss_bruteforce(const LogProbFrames& lp, const Label& label) {
  const std::size_t frames = lp.frames();
  const std::size_t classes = lp.classes();
  check_label(label, classes);
  check_feasible(label, frames);
  double paths = 1.0;
  for (std::size_t t = 0; t < frames; ++t) paths *= static_cast<double>(classes);
  if (paths > 1e6) throw Error(fmt::format("brute-force CTC over {}^{} paths refused", classes, frames));

  double log_total = -std::numeric_limits<double>::infinity();
  Path path(frames, 0);
  while (true) {
    if (collapse(path) == label) {
      double log_p = 0.0;
      for (std::size_t t = 0; t < frames; ++t) log_p += lp.at(t, static_cast<std::size_t>(path[t]));
      const double hi = std::max(log_total, log_p);
      log_total = hi + std::log(std::exp(log_total - hi) + std::exp(log_p - hi));
    }
    std::size_t t = frames;
    while (t > 0) {
      --t;
      if (static_cast<std::size_t>(++path[t]) < classes) break;
      path[t] = 0;
      if (t == 0) return -log_total;
    }
  }
}

Path alignment(const grad::Tensor& frame_scores) {
  if (frame_scores.rank() != 2) {
    throw ShapeError(fmt::format("frame scores must be [T, C], got {}", grad::shape_str(frame_scores.shape())));
  }
  const std::size_t frames = frame_scores.shape()[0];
  const std::size_t classes = frame_scores.shape()[1];
  Path path(frames, 0);
  for (std::size_t t = 0; t < frames; ++t) {
    const auto row = frame_scores.data().subspan(t * classes, classes);
    path[t] = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  return path;
}

Path alignment(const LogProbFrames& lp) { return alignment(lp.tensor()); }

Label best_path_decode(const LogProbFrames& lp) { return collapse(alignment(lp)); }

}  // namespace seqadv::ctc
