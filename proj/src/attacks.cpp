#include "seqadv/attacks.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>

#include <fmt/format.h>

#include "seqadv/adam.hpp"

namespace seqadv::attacks {

using grad::NodeId;
using grad::Tensor;
using victims::ModelKind;

void AttackConfig::validate() const {
  if (!(learning_rate > 0.0)) throw Error("attack: learning_rate must be positive");
  if (early_stop_k < 1) throw Error("attack: early_stop_k must be >= 1");
  if (!(lambda_lo > 0.0 && lambda_lo <= lambda_hi)) throw Error("attack: lambda bounds must satisfy 0 < lo <= hi");
  if (!(lambda >= 0.0)) throw Error("attack: lambda must be non-negative");
  if (n_paths < 1) throw Error("attack: n_paths must be >= 1");
  if (!(path_floor > 0.0 && path_floor < 1.0)) throw Error("attack: path floor c must lie in (0, 1)");
  if (!(eta_min < eta_max)) throw Error("attack: bad eta clamp");
  for (double e : {eta1_init, eta2_init}) {
    if (!(e >= eta_min && e <= eta_max)) throw Error("attack: eta_init outside the eta clamp");
  }
  if (!(w_clamp > 0.0)) throw Error("attack: w_clamp must be positive");
}

AttackConfig default_config(ModelKind kind, Method method) {
  AttackConfig cfg;
  const bool sequential = kind == ModelKind::seqnet;
  switch (method) {
    case Method::fixed:
      cfg.max_iters = sequential ? 10000 : 2000;
      cfg.early_stop_k = 20;
      break;
    case Method::binary:
      cfg.max_iters = 2000;
      cfg.early_stop_k = 20;
      cfg.search_steps = 3;
      break;
    case Method::adaptive:
      cfg.max_iters = sequential ? 10000 : 2000;
      cfg.early_stop_k = 1;
      break;
  }
  return cfg;
}

Tensor init_w(const Tensor& x) {
  constexpr double eps = 1e-6;
  Tensor w(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) w[i] = std::atanh(std::clamp(x[i], -1.0 + eps, 1.0 - eps));
  return w;
}

namespace {

std::size_t argmax(std::span<const double> row) {
  return static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
}

grad::Shape image_shape(ModelKind kind) { return kind == ModelKind::classifier ? grad::Shape{28, 28} : grad::Shape{32, 100}; }

std::string decode_logits(ModelKind kind, const Tensor& logits) {
  if (kind == ModelKind::classifier) return std::string(1, static_cast<char>('0' + argmax(logits.data())));
  return victims::decode_label(ctc::collapse(ctc::alignment(logits)));
}

}  // namespace

std::string decode(const victims::Model& model, const Tensor& image) {
  if (model.kind == ModelKind::classifier) return decode_logits(model.kind, victims::forward_class(model, image));
  return decode_logits(model.kind, victims::forward_seq(model, image));
}

AttackProblem::AttackProblem(const victims::Model& model, const Tensor& x, std::string_view target,
                             ObjectiveKind kind, const AttackConfig& config)
    : model_(&model), x_(x), target_(target), kind_(kind) {
  config.validate();
  const grad::Shape shape = image_shape(model.kind);
  if (x.shape() != shape) {
    throw ShapeError(fmt::format("attack input must be {}, got {}", grad::shape_str(shape), grad::shape_str(x.shape())));
  }
  const bool sequential = model.kind == ModelKind::seqnet;
  if (kind == ObjectiveKind::general_n && !sequential) throw Error("the n-path objective needs a sequence model");

  auto& t = tape_;
  const NodeId w = t.input("w", shape);
  x_adv_ = t.tanh(w);
  distance_ = t.sum(t.square(t.sub(x_adv_, t.constant(x))));
  const NodeId images = t.reshape(x_adv_, {1, 1, shape[0], shape[1]});
  const NodeId raw = victims::build_network(t, model.kind, images);

  NodeId log_probs = 0;
  if (sequential) {
    logits_ = raw;  // [25, 11]
    log_probs = t.log_softmax(raw);
    task_ = ctc::loss_node(t, log_probs, victims::kFrames, victims::encode_digits(target_));
  } else {
    logits_ = t.reshape(raw, {victims::kClasses});
    if (target_.size() != 1 || target_[0] < '0' || target_[0] > '9') {
      throw Error(fmt::format("classifier target must be a single digit, got '{}'", target_));
    }
    log_probs = t.log_softmax(logits_);
    task_ = t.scale(t.sum(t.gather(log_probs, {static_cast<std::size_t>(target_[0] - '0')})), -1.0);
  }

  if (kind == ObjectiveKind::basic) {
    const NodeId lambda = t.input("lambda", {});
    objective_ = t.add(task_, t.mul(lambda, distance_));
  } else {
    const NodeId eta = t.input("eta", {2});
    const NodeId eta1 = t.sum(t.gather(eta, {0}));
    const NodeId eta2 = t.sum(t.gather(eta, {1}));
    const NodeId w1 = t.exp(t.scale(eta1, -1.0));  // 1 / lambda1^2
    const NodeId w2 = t.exp(t.scale(eta2, -1.0));  // 1 / lambda2^2
    const auto frames = static_cast<double>(victims::kFrames);
    if (!sequential) {
      objective_ = t.add(t.add(t.scale(t.mul(w1, distance_), 0.5), t.mul(w2, task_)), t.add(eta1, eta2));
    } else if (kind == ObjectiveKind::adaptive) {
      const NodeId weighted = t.add(t.mul(w1, distance_), t.mul(w2, task_));
      objective_ = t.add(t.add(weighted, t.add(eta1, t.scale(eta2, frames))), w2);
    } else {
      const auto n = static_cast<double>(config.n_paths);
      const double floor_term = (std::log(n) - (n - 1.0) * std::log(config.path_floor)) / n;
      const NodeId weighted = t.add(t.scale(t.mul(w1, distance_), 0.5), t.scale(t.mul(w2, task_), 1.0 / n));
      objective_ = t.add(t.add(weighted, t.add(eta1, t.scale(eta2, frames))), t.scale(w2, floor_term));
    }
  }
  victims::bind_params(params_, model);
}

AttackProblem::Point AttackProblem::evaluate(const Tensor& w, const Tensor& eta, double lambda, bool gradients) const {
  grad::Bindings b = params_;
  b.set("w", w);
  const bool adaptive = kind_ != ObjectiveKind::basic;
  if (adaptive) {
    b.set("eta", eta);
  } else {
    b.set("lambda", Tensor::scalar(lambda));
  }
  const std::array<NodeId, 5> outputs{objective_, task_, distance_, x_adv_, logits_};
  Point p;
  p.evaluation = grad::forward(tape_, b, outputs);
  const auto& ev = p.evaluation;
  p.objective = ev.value(objective_).item();
  p.task = ev.value(task_).item();
  p.distance = ev.value(distance_).item();
  p.x_adv = ev.value(x_adv_);
  p.logits = ev.value(logits_);
  if (gradients) differentiate(p);
  return p;
}

void AttackProblem::differentiate(Point& p) const {
  static const std::vector<std::string> w_only{"w"};
  static const std::vector<std::string> w_eta{"w", "eta"};
  const bool adaptive = kind_ != ObjectiveKind::basic;
  auto g = grad::backward(tape_, p.evaluation, objective_, adaptive ? w_eta : w_only);
  p.grad_w = std::move(g.at("w"));
  if (adaptive) p.grad_eta = std::move(g.at("eta"));
}

std::string AttackProblem::decode(const Tensor& logits) const { return decode_logits(model_->kind, logits); }

std::vector<int> AttackProblem::alignment(const Tensor& logits) const {
  if (model_->kind == ModelKind::classifier) return {};
  return ctc::alignment(logits);
}

namespace {

void check_preconditions(const victims::Model& model, const Tensor& x, std::string_view source,
                         std::string_view target) {
  if (source == target) throw PreconditionError(fmt::format("target '{}' equals the source label", target));
  const std::string current = decode(model, x);
  if (current != source) {
    throw PreconditionError(fmt::format("model decodes '{}', not the stated source '{}'", current, source));
  }
}

// One optimization run from init_w(x). Trace indices start at `trace_offset`.
AttackResult run(const AttackProblem& problem, const AttackConfig& cfg, double lambda, std::size_t trace_offset) {
  const bool adaptive = problem.kind() != ObjectiveKind::basic;
  std::vector<Tensor> params{init_w(problem.x())};
  if (adaptive) params.push_back(Tensor({2}, {cfg.eta1_init, cfg.eta2_init}));
  grad::AdamState adam(grad::AdamConfig{.learning_rate = cfg.learning_rate}, params);
  static const Tensor no_eta({2}, 0.0);

  AttackResult result;
  double best_obj = std::numeric_limits<double>::infinity();
  std::size_t stale = 0;
  for (std::size_t step = 0;; ++step) {
    const Tensor& eta = adaptive ? params[1] : no_eta;
    // Gradients are computed lazily: the final iterate only needs a forward pass.
    auto p = problem.evaluate(params[0], eta, lambda, false);
    const std::string decoded = problem.decode(p.logits);
    const double l2 = std::sqrt(p.distance);
    if (decoded == problem.target() && (!result.success || l2 < result.l2)) {
      result.success = true;
      result.l2 = l2;
      result.x_adv = p.x_adv;
      result.decoded = decoded;
    }
    if (p.objective < best_obj) {
      best_obj = p.objective;
      stale = 0;
    } else {
      ++stale;
    }
    if (cfg.record_trace) {
      TraceRecord r;
      r.iter = trace_offset + step;
      r.obj = p.objective;
      r.best_obj = best_obj;
      r.l2 = l2;
      r.task = p.task;
      if (adaptive) {
        r.eta1 = eta[0];
        r.eta2 = eta[1];
      } else {
        r.lambda = lambda;
      }
      r.decoded = decoded;
      r.align = problem.alignment(p.logits);
      result.trace.push_back(std::move(r));
    }
    const bool done = stale >= cfg.early_stop_k || step >= cfg.max_iters;
    if (done) {
      if (!result.success) {
        result.l2 = l2;
        result.x_adv = std::move(p.x_adv);
        result.decoded = decoded;
      }
      break;
    }
    problem.differentiate(p);
    std::vector<Tensor> grads{std::move(p.grad_w)};
    if (adaptive) grads.push_back(std::move(p.grad_eta));
    grad::adam_step(params, grads, adam);
    for (auto& v : params[0].data()) v = std::clamp(v, -cfg.w_clamp, cfg.w_clamp);
    if (adaptive) {
      for (auto& v : params[1].data()) v = std::clamp(v, cfg.eta_min, cfg.eta_max);
    }
    ++result.iterations;
  }
  return result;
}

}  // namespace

AttackResult attack_fixed(const victims::Model& model, const Tensor& x, std::string_view source,
                          std::string_view target, double lambda, const AttackConfig& config) {
  check_preconditions(model, x, source, target);
  const AttackProblem problem(model, x, target, ObjectiveKind::basic, config);
  return run(problem, config, lambda, 0);
}

AttackResult attack_binary(const victims::Model& model, const Tensor& x, std::string_view source,
                           std::string_view target, std::size_t steps, const AttackConfig& config) {
  if (steps < 1) throw Error("binary search needs at least one step");
  check_preconditions(model, x, source, target);
  const AttackProblem problem(model, x, target, ObjectiveKind::basic, config);
  double lambda = config.lambda;
  double lo = config.lambda_lo;
  double hi = config.lambda_hi;
  AttackResult best;
  std::size_t iterations = 0;
  std::size_t evaluations = 0;
  std::vector<TraceRecord> trace;
  for (std::size_t s = 0; s < steps; ++s) {
    AttackResult r = run(problem, config, lambda, evaluations);
    iterations += r.iterations;
    evaluations += r.iterations + 1;
    std::move(r.trace.begin(), r.trace.end(), std::back_inserter(trace));
    if (r.success) {
      if (!best.success || r.l2 < best.l2) best = std::move(r);
      lo = lambda;
      lambda = std::sqrt(lambda * hi);
    } else {
      if (!best.success) best = std::move(r);
      hi = lambda;
      lambda = std::sqrt(lo * lambda);
    }
  }
  best.iterations = iterations;
  best.trace = std::move(trace);
  return best;
}

AttackResult attack_adaptive(const victims::Model& model, const Tensor& x, std::string_view source,
                             std::string_view target, const AttackConfig& config, bool general_n) {
  check_preconditions(model, x, source, target);
  const AttackProblem problem(model, x, target, general_n ? ObjectiveKind::general_n : ObjectiveKind::adaptive,
                              config);
  return run(problem, config, 0.0, 0);
}

std::string_view edit_name(EditOp op) {
  switch (op) {
    case EditOp::insert:
      return "insert";
    case EditOp::insert_repeat:
      return "insert_repeat";
    case EditOp::substitute:
      return "substitute";
    case EditOp::remove:
      return "delete";
  }
  return "?";
}

EditOp parse_edit(std::string_view name) {
  for (auto op : {EditOp::insert, EditOp::insert_repeat, EditOp::substitute, EditOp::remove}) {
    if (edit_name(op) == name) return op;
  }
  throw Error(fmt::format("unknown edit '{}'", name));
}

std::string edit_target(std::string_view label, EditOp op, std::size_t position, char symbol) {
  if (label.empty()) throw Error("cannot edit an empty label");
  std::string out(label);
  const std::size_t limit = op == EditOp::insert ? label.size() : label.size() - 1;
  if (position > limit) {
    throw Error(fmt::format("{} position {} out of range for '{}'", edit_name(op), position, label));
  }
  switch (op) {
    case EditOp::insert:
      out.insert(out.begin() + static_cast<std::ptrdiff_t>(position), symbol);
      break;
    case EditOp::insert_repeat:
      out.insert(out.begin() + static_cast<std::ptrdiff_t>(position), label[position]);
      break;
    case EditOp::substitute:
      out[position] = symbol;
      break;
    case EditOp::remove:
      if (label.size() < 2) throw Error("delete would leave an empty label");
      out.erase(position, 1);
      break;
  }
  if (out == label) throw Error(fmt::format("{} at {} leaves '{}' unchanged", edit_name(op), position, label));
  return out;
}

std::string random_edit(std::string_view label, EditOp op, std::string_view alphabet, Rng& rng) {
  if (label.empty()) throw Error("cannot edit an empty label");
  if (alphabet.size() < 2) throw Error("alphabet needs at least two symbols");
  switch (op) {
    case EditOp::insert:
      return edit_target(label, op, rng.below(label.size() + 1), alphabet[rng.below(alphabet.size())]);
    case EditOp::insert_repeat:
    case EditOp::remove:
      return edit_target(label, op, rng.below(label.size()));
    case EditOp::substitute: {
      const std::size_t position = rng.below(label.size());
      std::string others;
      for (char c : alphabet) {
        if (c != label[position]) others.push_back(c);
      }
      return edit_target(label, op, position, others[rng.below(others.size())]);
    }
  }
  throw Error("unknown edit");
}

namespace {

constexpr std::string_view kCommonWords[] = {
    "a",      "i",      "an",     "as",     "at",     "be",     "by",     "do",     "go",     "he",     "if",
    "in",     "is",     "it",     "me",     "my",     "no",     "of",     "on",     "or",     "so",     "to",
    "up",     "us",     "we",     "all",    "and",    "any",    "are",    "bad",    "big",    "but",    "can",
    "car",    "day",    "did",    "end",    "eye",    "far",    "few",    "for",    "get",    "had",    "has",
    "her",    "him",    "his",    "how",    "its",    "let",    "man",    "may",    "new",    "not",    "now",
    "old",    "one",    "our",    "out",    "own",    "put",    "red",    "run",    "say",    "see",    "she",
    "sun",    "the",    "too",    "two",    "use",    "war",    "way",    "who",    "why",    "yes",    "yet",
    "you",    "also",   "back",   "been",   "best",   "body",   "book",   "both",   "call",   "came",   "city",
    "come",   "dark",   "door",   "down",   "each",   "even",   "face",   "fact",   "find",   "food",   "form",
    "four",   "free",   "from",   "full",   "gave",   "give",   "good",   "hand",   "have",   "head",   "hear",
    "help",   "here",   "high",   "home",   "hope",   "into",   "just",   "keep",   "kind",   "know",   "land",
    "last",   "left",   "life",   "like",   "line",   "live",   "long",   "look",   "made",   "make",   "many",
    "more",   "most",   "much",   "must",   "name",   "need",   "next",   "only",   "open",   "over",   "part",
    "play",   "read",   "real",   "room",   "said",   "same",   "seem",   "show",   "side",   "some",   "such",
    "sure",   "take",   "talk",   "tell",   "than",   "that",   "them",   "then",   "they",   "this",   "time",
    "turn",   "very",   "want",   "well",   "went",   "were",   "what",   "when",   "with",   "word",   "work",
    "year",   "your",   "about",  "after",  "again",  "being",  "black",  "bring",  "could",  "every",  "first",
    "found",  "great",  "group",  "house",  "large",  "later",  "light",  "might",  "money",  "never",  "night",
    "often",  "order",  "other",  "place",  "point",  "power",  "right",  "small",  "sound",  "still",  "study",
    "table",  "their",  "there",  "these",  "thing",  "think",  "three",  "under",  "until",  "water",  "where",
    "which",  "while",  "white",  "whole",  "woman",  "world",  "would",  "write",  "young",  "before", "better",
    "change", "family", "friend", "little", "mother", "number", "people", "public", "school", "should", "street",
};

}  // namespace

const Alphabet& digit_alphabet() {
  static const Alphabet a{"0123456789", false};
  return a;
}

const Alphabet& word_alphabet() {
  static const Alphabet a{"abcdefghijklmnopqrstuvwxyz", true};
  return a;
}

std::string sample_target(std::string_view label, const Alphabet& alphabet, Rng& rng) {
  if (alphabet.symbols.size() < 2) throw Error("alphabet needs at least two symbols");
  if (label.empty()) throw Error("no same-length target differs from an empty label");
  if (alphabet.words) {
    std::vector<std::string_view> candidates;
    for (auto w : kCommonWords) {
      if (w.size() == label.size() && w != label) candidates.push_back(w);
    }
    if (!candidates.empty()) return std::string(candidates[rng.below(candidates.size())]);
  }
  while (true) {
    std::string out(label.size(), ' ');
    for (auto& c : out) c = alphabet.symbols[rng.below(alphabet.symbols.size())];
    if (out != label) return out;
  }
}

}  // namespace seqadv::attacks
