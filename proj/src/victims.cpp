#include "seqadv/victims.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iterator>
#include <map>
#include <numeric>
#include <optional>

#include <fmt/format.h>
#include <zlib.h>

#include "seqadv/adam.hpp"
#include "seqadv/rng.hpp"

namespace seqadv::victims {

using grad::NodeId;
using grad::Shape;
using grad::Tape;
using grad::Tensor;

std::string_view kind_name(ModelKind kind) { return kind == ModelKind::classifier ? "classifier" : "seqnet"; }

ModelKind parse_kind(std::string_view name) {
  if (name == "classifier") return ModelKind::classifier;
  if (name == "seqnet") return ModelKind::seqnet;
  throw KindError(fmt::format("unknown model kind '{}'", name));
}

namespace {

ParamSpec conv(std::string name, std::size_t in, std::size_t out) {
  return {std::move(name), {out, in, 3, 3}, in * 9, out * 9};
}
ParamSpec dense(std::string name, std::size_t in, std::size_t out) { return {std::move(name), {in, out}, in, out}; }
ParamSpec bias(std::string name, std::size_t n) { return {std::move(name), {n}, 0, 0}; }

}  // namespace

const std::vector<ParamSpec>& param_specs(ModelKind kind) {
  static const std::vector<ParamSpec> classifier{
      conv("conv1.w", 1, 8),    bias("conv1.b", 8),  conv("conv2.w", 8, 16), bias("conv2.b", 16),
      dense("dense.w", 784, 10), bias("dense.b", 10),
  };
  static const std::vector<ParamSpec> seqnet{
      conv("conv1.w", 1, 16),       bias("conv1.b", 16),           conv("conv2.w", 16, 32),
      bias("conv2.b", 32),          conv("conv3.w", 32, 64),       bias("conv3.b", 64),
      dense("rnn.fw.in", 128, 64),  dense("rnn.fw.rec", 64, 64),   bias("rnn.fw.b", 64),
      dense("rnn.bw.in", 128, 64),  dense("rnn.bw.rec", 64, 64),   bias("rnn.bw.b", 64),
      dense("out.w", 64, kSeqClasses), bias("out.b", kSeqClasses),
  };
  return kind == ModelKind::classifier ? classifier : seqnet;
}

namespace {

std::size_t param_index(ModelKind kind, std::string_view name) {
  const auto& specs = param_specs(kind);
  for (std::size_t i = 0; i < specs.size(); ++i) {
    if (specs[i].name == name) return i;
  }
  throw WeightsError(fmt::format("{} has no tensor named '{}'", kind_name(kind), name));
}

std::vector<std::string> param_names(ModelKind kind) {
  std::vector<std::string> names;
  for (const auto& s : param_specs(kind)) names.push_back(s.name);
  return names;
}

}  // namespace

const Tensor& Model::param(std::string_view name) const { return params.at(param_index(kind, name)); }
Tensor& Model::param(std::string_view name) { return params.at(param_index(kind, name)); }

Model init_model(ModelKind kind, std::uint64_t seed) {
  Rng rng(seed);
  Model model{kind, {}};
  for (const auto& spec : param_specs(kind)) {
    Tensor t(spec.shape);
    if (spec.fan_out != 0) {
      const double a = std::sqrt(6.0 / static_cast<double>(spec.fan_in + spec.fan_out));
      for (auto& v : t.data()) v = (2.0 * rng.uniform() - 1.0) * a;
    }
    model.params.push_back(std::move(t));
  }
  return model;
}

namespace {

NodeId param_input(Tape& tape, ModelKind kind, std::string_view name) {
  const auto& spec = param_specs(kind)[param_index(kind, name)];
  if (auto existing = tape.find_input(spec.name)) return *existing;
  return tape.input(spec.name, spec.shape);
}

NodeId conv_block(Tape& tape, ModelKind kind, NodeId x, const std::string& layer) {
  const NodeId w = param_input(tape, kind, layer + ".w");
  const NodeId b = param_input(tape, kind, layer + ".b");
  return tape.relu(tape.bias_add(tape.conv2d(x, w), b));
}

NodeId classifier(Tape& tape, NodeId images) {
  const auto& s = tape.shape(images);
  if (s.size() != 4 || s[1] != 1 || s[2] != 28 || s[3] != 28) {
    throw ShapeError(fmt::format("classifier expects [N,1,28,28], got {}", grad::shape_str(s)));
  }
  const std::size_t n = s[0];
  constexpr auto k = ModelKind::classifier;
  NodeId h = tape.maxpool2d(conv_block(tape, k, images, "conv1"), 2, 2);
  h = tape.maxpool2d(conv_block(tape, k, h, "conv2"), 2, 2);
  h = tape.reshape(h, {n, 784});
  return tape.bias_add(tape.matmul(h, param_input(tape, k, "dense.w")), param_input(tape, k, "dense.b"));
}

// Plain tanh recurrence over frames given the [T*N, H] input projection (row t*N + n).
std::vector<NodeId> recurrence(Tape& tape, NodeId projected, std::size_t n, bool reverse, const std::string& prefix) {
  constexpr auto k = ModelKind::seqnet;
  const NodeId rec = param_input(tape, k, prefix + ".rec");
  const NodeId b = param_input(tape, k, prefix + ".b");
  std::vector<NodeId> states(kFrames);
  std::optional<NodeId> h;
  for (std::size_t step = 0; step < kFrames; ++step) {
    const std::size_t t = reverse ? kFrames - 1 - step : step;
    std::vector<std::size_t> rows(n);
    std::iota(rows.begin(), rows.end(), t * n);
    NodeId pre = tape.gather_rows(projected, std::move(rows));
    if (h) pre = tape.add(pre, tape.matmul(*h, rec));
    h = tape.tanh(tape.bias_add(pre, b));
    states[t] = *h;
  }
  return states;
}

NodeId seqnet(Tape& tape, NodeId images) {
  const auto& s = tape.shape(images);
  if (s.size() != 4 || s[1] != 1 || s[2] != 32 || s[3] != 100) {
    throw ShapeError(fmt::format("seqnet expects [N,1,32,100], got {}", grad::shape_str(s)));
  }
  const std::size_t n = s[0];
  constexpr auto k = ModelKind::seqnet;
  NodeId h = tape.maxpool2d(conv_block(tape, k, images, "conv1"), 2, 2);  // [N,16,16,50]
  h = tape.maxpool2d(conv_block(tape, k, h, "conv2"), 2, 2);              // [N,32,8,25]
  h = conv_block(tape, k, h, "conv3");                                    // [N,64,8,25]
  h = tape.maxpool2d(tape.maxpool2d(h, 2, 1), 2, 1);                     // [N,64,2,25]
  h = tape.reshape(tape.permute(h, {3, 0, 1, 2}), {kFrames * n, 128});    // row t*N + n

  const NodeId fw_in = tape.matmul(h, param_input(tape, k, "rnn.fw.in"));
  const NodeId bw_in = tape.matmul(h, param_input(tape, k, "rnn.bw.in"));
  const auto fw = recurrence(tape, fw_in, n, false, "rnn.fw");
  const auto bw = recurrence(tape, bw_in, n, true, "rnn.bw");
  std::vector<NodeId> frames(kFrames);
  for (std::size_t t = 0; t < kFrames; ++t) frames[t] = tape.add(fw[t], bw[t]);
  const NodeId stacked = tape.concat(frames);
  return tape.bias_add(tape.matmul(stacked, param_input(tape, k, "out.w")), param_input(tape, k, "out.b"));
}

}  // namespace

NodeId build_network(Tape& tape, ModelKind kind, NodeId images) {
  return kind == ModelKind::classifier ? classifier(tape, images) : seqnet(tape, images);
}

void bind_params(grad::Bindings& bindings, const Model& model) {
  const auto& specs = param_specs(model.kind);
  if (model.params.size() != specs.size()) {
    throw WeightsError(fmt::format("{} model has {} tensors, expected {}", kind_name(model.kind),
                                   model.params.size(), specs.size()));
  }
  for (std::size_t i = 0; i < specs.size(); ++i) bindings.set(specs[i].name, model.params[i]);
}

namespace {

struct BatchGraph {
  Tape tape;
  NodeId images = 0;
  NodeId logits = 0;
};

BatchGraph network_graph(ModelKind kind, std::size_t n) {
  BatchGraph g;
  g.images = kind == ModelKind::classifier ? g.tape.input("images", {n, 1, 28, 28})
                                           : g.tape.input("images", {n, 1, 32, 100});
  g.logits = build_network(g.tape, kind, g.images);
  return g;
}

Tensor logits_for(const Model& model, const Tensor& image, Shape expected) {
  if (image.shape() != expected) {
    throw ShapeError(fmt::format("{} input must be {}, got {}", kind_name(model.kind), grad::shape_str(expected),
                                 grad::shape_str(image.shape())));
  }
  const auto g = network_graph(model.kind, 1);
  grad::Bindings b;
  bind_params(b, model);
  b.set("images", image.reshaped(g.tape.shape(g.images)));
  const std::array<NodeId, 1> outputs{g.logits};
  return grad::forward(g.tape, b, outputs).value(g.logits);
}

void require_kind(const Model& model, ModelKind kind) {
  if (model.kind != kind) {
    throw KindError(fmt::format("expected a {} model, got {}", kind_name(kind), kind_name(model.kind)));
  }
}

// Pixels of samples[order[first..first+n)] packed as [n,1,H,W].
template <typename Sample>
Tensor pack(std::span<const Sample> samples, std::span<const std::size_t> order) {
  const auto& s = samples[order[0]].pixels.shape();
  Tensor out({order.size(), 1, s[0], s[1]});
  const std::size_t stride = s[0] * s[1];
  for (std::size_t i = 0; i < order.size(); ++i) {
    const auto src = samples[order[i]].pixels.data();
    std::copy(src.begin(), src.end(), out.data().begin() + static_cast<std::ptrdiff_t>(i * stride));
  }
  return out;
}

std::size_t argmax(std::span<const double> row) {
  return static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
}

// Best-path label of sample n within stacked [T*N, C] frame logits.
ctc::Label decode_stacked(const Tensor& logits, std::size_t n, std::size_t batch) {
  ctc::Path path(kFrames);
  for (std::size_t t = 0; t < kFrames; ++t) {
    path[t] = static_cast<int>(argmax(logits.data().subspan((t * batch + n) * kSeqClasses, kSeqClasses)));
  }
  return ctc::collapse(path);
}

std::vector<std::size_t> shuffled(std::size_t n, std::uint64_t seed, std::size_t epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(Rng::derive(seed, epoch));
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  return order;
}

// Shared epoch loop. `step` runs one batch and returns (loss, correct count).
template <typename Sample, typename Step>
void run_epochs(Model& model, std::span<const Sample> dataset, const TrainConfig& config, Step step) {
  if (dataset.empty()) throw Error("train: empty dataset");
  if (config.batch == 0) throw Error("train: batch size must be positive");
  grad::AdamState adam(grad::AdamConfig{.learning_rate = config.learning_rate}, model.params);
  const auto names = param_names(model.kind);
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    const auto order = shuffled(dataset.size(), config.seed, epoch);
    double loss_total = 0.0;
    std::size_t correct = 0;
    for (std::size_t first = 0, batch = 0; first < order.size(); first += config.batch, ++batch) {
      const std::span<const std::size_t> idx(order.data() + first, std::min(config.batch, order.size() - first));
      try {
        auto [loss, hits, grads] = step(idx, names);
        if (!std::isfinite(loss)) throw NumericError("non-finite loss");
        grad::adam_step(model.params, grads, adam);
        loss_total += loss * static_cast<double>(idx.size());
        correct += hits;
      } catch (const NumericError& e) {
        throw TrainingDiverged(fmt::format("training diverged at epoch {} batch {}: {}", epoch + 1, batch, e.what()));
      }
    }
    const std::chrono::duration<double> elapsed = std::chrono::steady_clock::now() - start;
    if (config.on_epoch) {
      const auto n = static_cast<double>(dataset.size());
      config.on_epoch({epoch + 1, loss_total / n, static_cast<double>(correct) / n, elapsed.count()});
    }
  }
}

struct StepResult {
  double loss;
  std::size_t hits;
  std::vector<Tensor> grads;
};

std::vector<Tensor> ordered(grad::Gradients&& g, const std::vector<std::string>& names) {
  std::vector<Tensor> out;
  out.reserve(names.size());
  for (const auto& name : names) out.push_back(std::move(g.at(name)));
  return out;
}

}  // namespace

Tensor forward_class(const Model& model, const Tensor& image) {
  require_kind(model, ModelKind::classifier);
  return logits_for(model, image, {28, 28}).reshaped({kClasses});
}

Tensor forward_seq(const Model& model, const Tensor& image) {
  require_kind(model, ModelKind::seqnet);
  return logits_for(model, image, {32, 100});
}

ctc::Label encode_digits(std::string_view digits) {
  ctc::Label label;
  for (char c : digits) {
    if (c < '0' || c > '9') throw Error(fmt::format("'{}' is not a digit string", digits));
    label.push_back(c - '0' + 1);
  }
  return label;
}

std::string decode_label(std::span<const int> label) {
  std::string out;
  for (int c : label) {
    if (c < 1 || c > 10) throw Error(fmt::format("class {} is not a digit", c));
    out.push_back(static_cast<char>('0' + c - 1));
  }
  return out;
}

void train(Model& model, std::span<const data::ImageSample> dataset, const TrainConfig& config) {
  require_kind(model, ModelKind::classifier);
  struct Graph {
    BatchGraph net;
    NodeId loss = 0;
  };
  std::map<std::size_t, Graph> graphs;
  auto graph_for = [&](std::size_t n) -> const Graph& {
    auto it = graphs.find(n);
    if (it != graphs.end()) return it->second;
    Graph g{network_graph(ModelKind::classifier, n)};
    auto& tape = g.net.tape;
    const NodeId targets = tape.input("targets", {n, kClasses});
    const NodeId picked = tape.sum(tape.mul(tape.log_softmax(g.net.logits), targets));
    g.loss = tape.scale(picked, -1.0 / static_cast<double>(n));
    return graphs.emplace(n, std::move(g)).first->second;
  };
  run_epochs(model, dataset, config, [&](std::span<const std::size_t> idx, const std::vector<std::string>& names) {
    const Graph& g = graph_for(idx.size());
    Tensor targets({idx.size(), kClasses});
    for (std::size_t i = 0; i < idx.size(); ++i) targets[i * kClasses + static_cast<std::size_t>(dataset[idx[i]].label)] = 1.0;
    grad::Bindings b;
    bind_params(b, model);
    b.set("images", pack(dataset, idx));
    b.set("targets", std::move(targets));
    const std::array<NodeId, 2> outputs{g.loss, g.net.logits};
    const auto ev = grad::forward(g.net.tape, b, outputs);
    const Tensor& logits = ev.value(g.net.logits);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < idx.size(); ++i) {
      if (static_cast<int>(argmax(logits.data().subspan(i * kClasses, kClasses))) == dataset[idx[i]].label) ++hits;
    }
    return StepResult{ev.value(g.loss).item(), hits, ordered(grad::backward(g.net.tape, ev, g.loss, names), names)};
  });
}

void train(Model& model, std::span<const data::SeqSample> dataset, const TrainConfig& config) {
  require_kind(model, ModelKind::seqnet);
  run_epochs(model, dataset, config, [&](std::span<const std::size_t> idx, const std::vector<std::string>& names) {
    const std::size_t n = idx.size();
    // The CTC part depends on the labels, so the tape is rebuilt per batch.
    BatchGraph g = network_graph(ModelKind::seqnet, n);
    const NodeId lp = g.tape.log_softmax(g.logits);
    std::vector<NodeId> losses;
    std::vector<ctc::Label> labels;
    for (std::size_t i = 0; i < n; ++i) {
      labels.push_back(encode_digits(dataset[idx[i]].digits));
      losses.push_back(ctc::loss_node(g.tape, lp, kFrames, labels.back(), ctc::FrameRows{i, n}));
    }
    const NodeId loss = g.tape.scale(g.tape.sum(g.tape.concat(losses)), 1.0 / static_cast<double>(n));
    grad::Bindings b;
    bind_params(b, model);
    b.set("images", pack(dataset, idx));
    const std::array<NodeId, 2> outputs{loss, g.logits};
    const auto ev = grad::forward(g.tape, b, outputs);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (decode_stacked(ev.value(g.logits), i, n) == labels[i]) ++hits;
    }
    return StepResult{ev.value(loss).item(), hits, ordered(grad::backward(g.tape, ev, loss, names), names)};
  });
}

namespace {

constexpr std::size_t kEvalBatch = 64;

template <typename Sample, typename Collect>
void batched_logits(const Model& model, std::span<const Sample> dataset, Collect collect) {
  std::map<std::size_t, BatchGraph> graphs;
  grad::Bindings b;
  bind_params(b, model);
  std::vector<std::size_t> idx;
  for (std::size_t first = 0; first < dataset.size(); first += kEvalBatch) {
    const std::size_t n = std::min(kEvalBatch, dataset.size() - first);
    idx.resize(n);
    std::iota(idx.begin(), idx.end(), first);
    auto it = graphs.find(n);
    if (it == graphs.end()) it = graphs.emplace(n, network_graph(model.kind, n)).first;
    const BatchGraph& g = it->second;
    b.set("images", pack(dataset, std::span<const std::size_t>(idx)));
    const std::array<NodeId, 1> outputs{g.logits};
    collect(first, n, grad::forward(g.tape, b, outputs).value(g.logits));
  }
}

}  // namespace

std::vector<int> predict(const Model& model, std::span<const data::ImageSample> dataset) {
  require_kind(model, ModelKind::classifier);
  std::vector<int> out;
  batched_logits(model, dataset, [&](std::size_t, std::size_t n, const Tensor& logits) {
    for (std::size_t i = 0; i < n; ++i) out.push_back(static_cast<int>(argmax(logits.data().subspan(i * kClasses, kClasses))));
  });
  return out;
}

std::vector<std::string> predict(const Model& model, std::span<const data::SeqSample> dataset) {
  require_kind(model, ModelKind::seqnet);
  std::vector<std::string> out;
  batched_logits(model, dataset, [&](std::size_t, std::size_t n, const Tensor& logits) {
    for (std::size_t i = 0; i < n; ++i) out.push_back(decode_label(decode_stacked(logits, i, n)));
  });
  return out;
}

double accuracy(const Model& model, std::span<const data::ImageSample> dataset) {
  if (dataset.empty()) return 0.0;
  const auto predicted = predict(model, dataset);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < dataset.size(); ++i) hits += predicted[i] == dataset[i].label;
  return static_cast<double>(hits) / static_cast<double>(dataset.size());
}

double sequence_accuracy(const Model& model, std::span<const data::SeqSample> dataset) {
  if (dataset.empty()) return 0.0;
  const auto predicted = predict(model, dataset);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < dataset.size(); ++i) hits += predicted[i] == dataset[i].digits;
  return static_cast<double>(hits) / static_cast<double>(dataset.size());
}

// Weights file, all integers little-endian:
//   "SEQADVW1" | version u32 | kind len u64, kind bytes | count u64 |
//   per tensor: name len u64, name bytes, rank u64, dims u64..., f64 data | crc32 u32 of everything before.
namespace {

constexpr std::string_view kMagic = "SEQADVW1";

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_string(std::string& out, std::string_view s) {
  put_u64(out, s.size());
  out.append(s);
}

std::uint32_t checksum(std::string_view bytes) {
  return static_cast<std::uint32_t>(
      ::crc32(0L, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size())));
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  std::uint64_t u(std::size_t width) {
    need(width);
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < width; ++i) v |= std::uint64_t{static_cast<unsigned char>(bytes_[pos_ + i])} << (8 * i);
    pos_ += width;
    return v;
  }

  std::string_view str() {
    const std::uint64_t n = u(8);
    need(n);
    const auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::uint64_t n) const {
    if (n > bytes_.size() - pos_) throw WeightsError("weights file ends inside a record");
  }
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string serialize(const Model& model) {
  const auto& specs = param_specs(model.kind);
  std::string out(kMagic);
  put_u32(out, kWeightsVersion);
  put_string(out, kind_name(model.kind));
  put_u64(out, model.params.size());
  for (std::size_t i = 0; i < model.params.size(); ++i) {
    const Tensor& t = model.params[i];
    put_string(out, specs.at(i).name);
    put_u64(out, t.rank());
    for (std::size_t d : t.shape()) put_u64(out, d);
    for (double v : t.data()) put_u64(out, std::bit_cast<std::uint64_t>(v));
  }
  put_u32(out, checksum(out));
  return out;
}

Model deserialize(std::string_view bytes) {
  if (bytes.size() < kMagic.size() + 4) throw ChecksumError("weights file too short for a checksum");
  const auto body = bytes.substr(0, bytes.size() - 4);
  Reader tail(bytes.substr(bytes.size() - 4));
  if (tail.u(4) != checksum(body)) throw ChecksumError("weights checksum mismatch (corrupt or truncated file)");
  if (body.substr(0, kMagic.size()) != kMagic) throw WeightsError("not a weights file (bad magic)");

  Reader r(body.substr(kMagic.size()));
  const auto version = static_cast<std::uint32_t>(r.u(4));
  if (version != kWeightsVersion) {
    throw VersionError(fmt::format("weights version {} unsupported (expected {})", version, kWeightsVersion));
  }
  Model model{parse_kind(r.str()), {}};
  const auto& specs = param_specs(model.kind);
  std::vector<std::optional<Tensor>> found(specs.size());
  const std::uint64_t count = r.u(8);
  for (std::uint64_t k = 0; k < count; ++k) {
    const std::string name(r.str());
    const std::size_t i = param_index(model.kind, name);
    if (found[i]) throw WeightsError(fmt::format("tensor '{}' appears twice", name));
    Shape shape(r.u(8));
    for (auto& d : shape) d = r.u(8);
    if (shape != specs[i].shape) {
      throw WeightsError(fmt::format("tensor '{}' has shape {}, expected {}", name, grad::shape_str(shape),
                                     grad::shape_str(specs[i].shape)));
    }
    Tensor t(shape);
    for (auto& v : t.data()) v = std::bit_cast<double>(r.u(8));
    found[i] = std::move(t);
  }
  if (!r.done()) throw WeightsError("trailing bytes after the last tensor");
  for (std::size_t i = 0; i < specs.size(); ++i) {
    if (!found[i]) throw WeightsError(fmt::format("tensor '{}' missing", specs[i].name));
    model.params.push_back(std::move(*found[i]));
  }
  return model;
}

Model deserialize(std::string_view bytes, ModelKind expected) {
  Model model = deserialize(bytes);
  if (model.kind != expected) {
    throw KindError(fmt::format("weights hold a {} model, expected {}", kind_name(model.kind), kind_name(expected)));
  }
  return model;
}

void save(const Model& model, const std::filesystem::path& path) {
  const std::string bytes = serialize(model);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(fmt::format("cannot write {}", path.string()));
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(fmt::format("write failed: {}", path.string()));
}

namespace {

std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(fmt::format("cannot open {}", path.string()));
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

Model load(const std::filesystem::path& path) { return deserialize(slurp(path)); }
Model load(const std::filesystem::path& path, ModelKind expected) { return deserialize(slurp(path), expected); }

}  // namespace seqadv::victims
