#include "seqadv/tape.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>

#include <fmt/format.h>

#include "kernels.hpp"

namespace seqadv::grad {

std::string_view op_name(Op op) {
  switch (op) {
    case Op::input: return "input";
    case Op::constant: return "constant";
    case Op::add: return "add";
    case Op::sub: return "sub";
    case Op::mul: return "mul";
    case Op::scale: return "scale";
    case Op::matmul: return "matmul";
    case Op::bias_add: return "bias_add";
    case Op::conv2d: return "conv2d";
    case Op::maxpool2d: return "maxpool2d";
    case Op::tanh: return "tanh";
    case Op::relu: return "relu";
    case Op::exp: return "exp";
    case Op::log: return "log";
    case Op::square: return "square";
    case Op::sum: return "sum";
    case Op::sum_axis: return "sum_axis";
    case Op::log_softmax: return "log_softmax";
    case Op::logsumexp: return "logsumexp";
    case Op::segment_logsumexp: return "segment_logsumexp";
    case Op::gather: return "gather";
    case Op::gather_rows: return "gather_rows";
    case Op::concat: return "concat";
    case Op::reshape: return "reshape";
    case Op::permute: return "permute";
  }
  return "unknown";
}

// ---------------------------------------------------------------------------
// Recording

namespace {

[[noreturn]] void shape_fail(NodeId id, Op op, const std::string& what) {
  throw ShapeError(fmt::format("node {} ({}): {}", id, op_name(op), what));
}

}  // namespace

NodeId Tape::push(Node node) {
  nodes_.push_back(std::move(node));
  return nodes_.size() - 1;
}

void Tape::check_arg(NodeId id) const {
  if (id >= nodes_.size()) {
    throw ShapeError(fmt::format("node {}: argument {} does not exist", nodes_.size(), id));
  }
}

const Node& Tape::node(NodeId id) const {
  if (id >= nodes_.size()) throw ShapeError(fmt::format("unknown node {}", id));
  return nodes_[id];
}

std::optional<NodeId> Tape::find_input(std::string_view name) const {
  const auto it = inputs_.find(name);
  if (it == inputs_.end()) return std::nullopt;
  return it->second;
}

NodeId Tape::input(std::string name, Shape shape) {
  if (inputs_.contains(name)) shape_fail(nodes_.size(), Op::input, fmt::format("duplicate input '{}'", name));
  Node n;
  n.op = Op::input;
  n.shape = std::move(shape);
  n.name = name;
  const NodeId id = push(std::move(n));
  inputs_.emplace(std::move(name), id);
  return id;
}

NodeId Tape::constant(Tensor value) {
  if (!value.all_finite()) throw NumericError(fmt::format("node {} (constant): non-finite value", nodes_.size()));
  Node n;
  n.op = Op::constant;
  n.shape = value.shape();
  n.value = std::make_shared<const Tensor>(std::move(value));
  return push(std::move(n));
}

NodeId Tape::unary(Op op, NodeId a) {
  check_arg(a);
  Node n;
  n.op = op;
  n.args = {a};
  n.shape = nodes_[a].shape;
  return push(std::move(n));
}

NodeId Tape::elementwise(Op op, NodeId a, NodeId b) {
  check_arg(a);
  check_arg(b);
  if (nodes_[a].shape != nodes_[b].shape) {
    shape_fail(nodes_.size(), op,
               fmt::format("operand shapes {} and {} differ", shape_str(nodes_[a].shape), shape_str(nodes_[b].shape)));
  }
  Node n;
  n.op = op;
  n.args = {a, b};
  n.shape = nodes_[a].shape;
  return push(std::move(n));
}

NodeId Tape::add(NodeId a, NodeId b) { return elementwise(Op::add, a, b); }
NodeId Tape::sub(NodeId a, NodeId b) { return elementwise(Op::sub, a, b); }
NodeId Tape::mul(NodeId a, NodeId b) { return elementwise(Op::mul, a, b); }

NodeId Tape::scale(NodeId a, double factor) {
  const NodeId id = unary(Op::scale, a);
  nodes_[id].factor = factor;
  return id;
}

NodeId Tape::matmul(NodeId a, NodeId b) {
  check_arg(a);
  check_arg(b);
  const auto& sa = nodes_[a].shape;
  const auto& sb = nodes_[b].shape;
  if (sa.size() != 2 || sb.size() != 2 || sa[1] != sb[0]) {
    shape_fail(nodes_.size(), Op::matmul, fmt::format("cannot multiply {} by {}", shape_str(sa), shape_str(sb)));
  }
  Node n;
  n.op = Op::matmul;
  n.args = {a, b};
  n.shape = {sa[0], sb[1]};
  return push(std::move(n));
}

NodeId Tape::bias_add(NodeId x, NodeId bias) {
  check_arg(x);
  check_arg(bias);
  const auto& sx = nodes_[x].shape;
  const auto& sb = nodes_[bias].shape;
  if ((sx.size() != 2 && sx.size() != 4) || sb.size() != 1 || sb[0] != sx[1]) {
    shape_fail(nodes_.size(), Op::bias_add, fmt::format("bias {} does not match {}", shape_str(sb), shape_str(sx)));
  }
  Node n;
  n.op = Op::bias_add;
  n.args = {x, bias};
  n.shape = sx;
  return push(std::move(n));
}

NodeId Tape::conv2d(NodeId x, NodeId weights, std::size_t stride) {
  check_arg(x);
  check_arg(weights);
  const auto& sx = nodes_[x].shape;
  const auto& sw = nodes_[weights].shape;
  if (sx.size() != 4 || sw.size() != 4 || sw[1] != sx[1] || sw[2] % 2 == 0 || sw[3] % 2 == 0 || stride == 0) {
    shape_fail(nodes_.size(), Op::conv2d,
               fmt::format("input {} incompatible with kernel {} at stride {}", shape_str(sx), shape_str(sw), stride));
  }
  Node n;
  n.op = Op::conv2d;
  n.args = {x, weights};
  n.stride = stride;
  n.shape = {sx[0], sw[0], kernels::conv_out_extent(sx[2], stride), kernels::conv_out_extent(sx[3], stride)};
  return push(std::move(n));
}

NodeId Tape::maxpool2d(NodeId x, std::size_t window_h, std::size_t window_w) {
  check_arg(x);
  const auto& sx = nodes_[x].shape;
  if (sx.size() != 4 || window_h == 0 || window_w == 0 || sx[2] < window_h || sx[3] < window_w) {
    shape_fail(nodes_.size(), Op::maxpool2d,
               fmt::format("window {}x{} does not fit {}", window_h, window_w, shape_str(sx)));
  }
  Node n;
  n.op = Op::maxpool2d;
  n.args = {x};
  n.window_h = window_h;
  n.window_w = window_w;
  n.shape = {sx[0], sx[1], sx[2] / window_h, sx[3] / window_w};
  return push(std::move(n));
}

NodeId Tape::tanh(NodeId a) { return unary(Op::tanh, a); }
NodeId Tape::relu(NodeId a) { return unary(Op::relu, a); }
NodeId Tape::exp(NodeId a) { return unary(Op::exp, a); }
NodeId Tape::log(NodeId a) { return unary(Op::log, a); }
NodeId Tape::square(NodeId a) { return unary(Op::square, a); }

NodeId Tape::sum(NodeId a) {
  const NodeId id = unary(Op::sum, a);
  nodes_[id].shape = {};
  return id;
}

NodeId Tape::sum_axis(NodeId a, std::size_t axis) {
  check_arg(a);
  const auto& sa = nodes_[a].shape;
  if (axis >= sa.size()) shape_fail(nodes_.size(), Op::sum_axis, fmt::format("axis {} of {}", axis, shape_str(sa)));
  Node n;
  n.op = Op::sum_axis;
  n.args = {a};
  n.axis = axis;
  n.shape = sa;
  n.shape.erase(n.shape.begin() + static_cast<std::ptrdiff_t>(axis));
  return push(std::move(n));
}

NodeId Tape::log_softmax(NodeId a) {
  check_arg(a);
  const auto& sa = nodes_[a].shape;
  if ((sa.size() != 1 && sa.size() != 2) || sa.back() == 0) {
    shape_fail(nodes_.size(), Op::log_softmax, fmt::format("expects rank 1 or 2, got {}", shape_str(sa)));
  }
  return unary(Op::log_softmax, a);
}

NodeId Tape::logsumexp(NodeId a) {
  check_arg(a);
  if (shape_size(nodes_[a].shape) == 0) shape_fail(nodes_.size(), Op::logsumexp, "empty operand");
  const NodeId id = unary(Op::logsumexp, a);
  nodes_[id].shape = {};
  return id;
}

NodeId Tape::segment_logsumexp(NodeId a, const std::vector<std::vector<std::size_t>>& groups) {
  check_arg(a);
  const std::size_t limit = shape_size(nodes_[a].shape);
  Node n;
  n.op = Op::segment_logsumexp;
  n.args = {a};
  n.offsets.push_back(0);
  for (const auto& group : groups) {
    if (group.empty()) shape_fail(nodes_.size(), Op::segment_logsumexp, "empty group");
    for (std::size_t idx : group) {
      if (idx >= limit) {
        shape_fail(nodes_.size(), Op::segment_logsumexp, fmt::format("index {} out of range {}", idx, limit));
      }
      n.indices.push_back(idx);
    }
    n.offsets.push_back(n.indices.size());
  }
  n.shape = {groups.size()};
  return push(std::move(n));
}

NodeId Tape::gather(NodeId a, std::vector<std::size_t> indices) {
  check_arg(a);
  const std::size_t limit = shape_size(nodes_[a].shape);
  for (std::size_t idx : indices) {
    if (idx >= limit) shape_fail(nodes_.size(), Op::gather, fmt::format("index {} out of range {}", idx, limit));
  }
  Node n;
  n.op = Op::gather;
  n.args = {a};
  n.shape = {indices.size()};
  n.indices = std::move(indices);
  return push(std::move(n));
}

NodeId Tape::gather_rows(NodeId a, std::vector<std::size_t> rows) {
  check_arg(a);
  const auto& sa = nodes_[a].shape;
  if (sa.size() != 2) shape_fail(nodes_.size(), Op::gather_rows, fmt::format("expects rank 2, got {}", shape_str(sa)));
  for (std::size_t r : rows) {
    if (r >= sa[0]) shape_fail(nodes_.size(), Op::gather_rows, fmt::format("row {} out of range {}", r, sa[0]));
  }
  Node n;
  n.op = Op::gather_rows;
  n.args = {a};
  n.shape = {rows.size(), sa[1]};
  n.indices = std::move(rows);
  return push(std::move(n));
}

NodeId Tape::concat(std::span<const NodeId> parts) {
  if (parts.empty()) shape_fail(nodes_.size(), Op::concat, "no operands");
  Node n;
  n.op = Op::concat;
  Shape trailing;
  std::size_t leading = 0;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    check_arg(parts[i]);
    Shape s = nodes_[parts[i]].shape;
    if (s.empty()) s = {1};
    Shape tail(s.begin() + 1, s.end());
    if (i == 0) {
      trailing = tail;
    } else if (tail != trailing) {
      shape_fail(nodes_.size(), Op::concat, fmt::format("operand {} has shape {}", i, shape_str(s)));
    }
    leading += s[0];
    n.args.push_back(parts[i]);
  }
  n.shape = {leading};
  n.shape.insert(n.shape.end(), trailing.begin(), trailing.end());
  return push(std::move(n));
}

NodeId Tape::reshape(NodeId a, Shape shape) {
  check_arg(a);
  if (shape_size(shape) != shape_size(nodes_[a].shape)) {
    shape_fail(nodes_.size(), Op::reshape,
               fmt::format("cannot reshape {} to {}", shape_str(nodes_[a].shape), shape_str(shape)));
  }
  Node n;
  n.op = Op::reshape;
  n.args = {a};
  n.shape = std::move(shape);
  return push(std::move(n));
}

NodeId Tape::permute(NodeId a, std::vector<std::size_t> axes) {
  check_arg(a);
  const auto& sa = nodes_[a].shape;
  std::vector<std::size_t> sorted = axes;
  std::sort(sorted.begin(), sorted.end());
  std::vector<std::size_t> identity(sa.size());
  std::iota(identity.begin(), identity.end(), std::size_t{0});
  if (sorted != identity) {
    shape_fail(nodes_.size(), Op::permute, fmt::format("invalid axis order for {}", shape_str(sa)));
  }
  Node n;
  n.op = Op::permute;
  n.args = {a};
  for (std::size_t ax : axes) n.shape.push_back(sa[ax]);
  n.indices = std::move(axes);
  return push(std::move(n));
}

void Tape::mark_output(std::string name, NodeId id) {
  check_arg(id);
  outputs_[std::move(name)] = id;
}

// ---------------------------------------------------------------------------
// Bindings / Evaluation

Bindings& Bindings::set(std::string name, Tensor value) {
  values_[std::move(name)] = std::make_shared<const Tensor>(std::move(value));
  return *this;
}

Bindings& Bindings::share(std::string name, std::shared_ptr<const Tensor> value) {
  values_[std::move(name)] = std::move(value);
  return *this;
}

std::shared_ptr<const Tensor> Bindings::find(std::string_view name) const {
  const auto it = values_.find(std::string(name));
  return it == values_.end() ? nullptr : it->second;
}

const Tensor& Evaluation::value(NodeId id) const {
  if (!has_value(id)) throw Error(fmt::format("node {} was not evaluated", id));
  return *values_[id];
}

// ---------------------------------------------------------------------------
// Forward kernels

namespace {

double row_logsumexp(const double* row, std::size_t n) {
  const double m = *std::max_element(row, row + n);
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += std::exp(row[i] - m);
  return m + std::log(s);
}

template <typename F>
Tensor map_unary(const Tensor& a, F&& f) {
  Tensor out(a.shape());
  const auto src = a.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = f(src[i]);
  return out;
}

template <typename F>
Tensor map_binary(const Tensor& a, const Tensor& b, F&& f) {
  Tensor out(a.shape());
  const auto x = a.data();
  const auto y = b.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < x.size(); ++i) dst[i] = f(x[i], y[i]);
  return out;
}

struct Strides {
  std::vector<std::size_t> of;
  explicit Strides(const Shape& s) : of(s.size(), 1) {
    for (std::size_t i = s.size(); i-- > 1;) of[i - 1] = of[i] * s[i];
  }
};

// out[j] = in[source(j)] for the permutation; inverse scatters back.
std::vector<std::size_t> permute_sources(const Shape& in_shape, const std::vector<std::size_t>& axes) {
  const Strides in_strides(in_shape);
  Shape out_shape;
  for (std::size_t ax : axes) out_shape.push_back(in_shape[ax]);
  const std::size_t total = shape_size(out_shape);
  std::vector<std::size_t> sources(total);
  std::vector<std::size_t> counter(out_shape.size(), 0);
  for (std::size_t j = 0; j < total; ++j) {
    std::size_t src = 0;
    for (std::size_t d = 0; d < counter.size(); ++d) src += counter[d] * in_strides.of[axes[d]];
    sources[j] = src;
    for (std::size_t d = counter.size(); d-- > 0;) {
      if (++counter[d] < out_shape[d]) break;
      counter[d] = 0;
    }
  }
  return sources;
}

Tensor bias_add_forward(const Tensor& x, const Tensor& b) {
  Tensor out = x;
  const auto& s = x.shape();
  const std::size_t channels = s[1];
  const std::size_t inner = s.size() == 4 ? s[2] * s[3] : 1;
  auto dst = out.data();
  for (std::size_t n = 0; n < s[0]; ++n) {
    for (std::size_t c = 0; c < channels; ++c) {
      double* p = dst.data() + (n * channels + c) * inner;
      for (std::size_t i = 0; i < inner; ++i) p[i] += b[c];
    }
  }
  return out;
}

Tensor sum_axis_forward(const Tensor& a, std::size_t axis, const Shape& out_shape) {
  const auto& s = a.shape();
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  Tensor out(out_shape);
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t k = 0; k < s[axis]; ++k) {
      const double* src = a.data().data() + (o * s[axis] + k) * inner;
      double* dst = out.data().data() + o * inner;
      for (std::size_t i = 0; i < inner; ++i) dst[i] += src[i];
    }
  }
  return out;
}

Tensor log_softmax_forward(const Tensor& a) {
  const std::size_t cols = a.shape().back();
  const std::size_t rows = a.size() / cols;
  Tensor out(a.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* src = a.data().data() + r * cols;
    double* dst = out.data().data() + r * cols;
    const double lse = row_logsumexp(src, cols);
    for (std::size_t c = 0; c < cols; ++c) dst[c] = src[c] - lse;
  }
  return out;
}

Tensor segment_lse_forward(const Tensor& a, const Node& node) {
  Tensor out(node.shape);
  std::vector<double> buffer;
  for (std::size_t g = 0; g + 1 < node.offsets.size(); ++g) {
    buffer.clear();
    for (std::size_t k = node.offsets[g]; k < node.offsets[g + 1]; ++k) buffer.push_back(a[node.indices[k]]);
    out[g] = row_logsumexp(buffer.data(), buffer.size());
  }
  return out;
}

Tensor concat_forward(const std::vector<const Tensor*>& parts, const Shape& out_shape) {
  Tensor out(out_shape);
  std::size_t offset = 0;
  for (const Tensor* p : parts) {
    std::copy(p->data().begin(), p->data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(offset));
    offset += p->size();
  }
  return out;
}

Tensor compute(const Node& node, const std::vector<const Tensor*>& args) {
  switch (node.op) {
    case Op::add: return map_binary(*args[0], *args[1], [](double x, double y) { return x + y; });
    case Op::sub: return map_binary(*args[0], *args[1], [](double x, double y) { return x - y; });
    case Op::mul: return map_binary(*args[0], *args[1], [](double x, double y) { return x * y; });
    case Op::scale: return map_unary(*args[0], [f = node.factor](double x) { return f * x; });
    case Op::matmul: return kernels::matmul(*args[0], *args[1]);
    case Op::bias_add: return bias_add_forward(*args[0], *args[1]);
    case Op::conv2d: return kernels::conv2d(*args[0], *args[1], node.stride);
    case Op::maxpool2d: return kernels::maxpool2d(*args[0], node.window_h, node.window_w);
    case Op::tanh: return map_unary(*args[0], [](double x) { return std::tanh(x); });
    case Op::relu: return map_unary(*args[0], [](double x) { return x > 0.0 ? x : 0.0; });
    case Op::exp: return map_unary(*args[0], [](double x) { return std::exp(x); });
    case Op::log: return map_unary(*args[0], [](double x) { return std::log(x); });
    case Op::square: return map_unary(*args[0], [](double x) { return x * x; });
    case Op::sum: {
      const auto d = args[0]->data();
      return Tensor::scalar(std::accumulate(d.begin(), d.end(), 0.0));
    }
    case Op::sum_axis: return sum_axis_forward(*args[0], node.axis, node.shape);
    case Op::log_softmax: return log_softmax_forward(*args[0]);
    case Op::logsumexp: return Tensor::scalar(row_logsumexp(args[0]->data().data(), args[0]->size()));
    case Op::segment_logsumexp: return segment_lse_forward(*args[0], node);
    case Op::gather: {
      Tensor out(node.shape);
      for (std::size_t i = 0; i < node.indices.size(); ++i) out[i] = (*args[0])[node.indices[i]];
      return out;
    }
    case Op::gather_rows: {
      Tensor out(node.shape);
      const std::size_t cols = node.shape[1];
      for (std::size_t i = 0; i < node.indices.size(); ++i) {
        std::copy_n(args[0]->data().data() + node.indices[i] * cols, cols, out.data().data() + i * cols);
      }
      return out;
    }
    case Op::concat: return concat_forward(args, node.shape);
    case Op::reshape: return args[0]->reshaped(node.shape);
    case Op::permute: {
      const auto sources = permute_sources(args[0]->shape(), node.indices);
      Tensor out(node.shape);
      for (std::size_t j = 0; j < sources.size(); ++j) out[j] = (*args[0])[sources[j]];
      return out;
    }
    case Op::input:
    case Op::constant: break;
  }
  throw Error(fmt::format("op {} has no forward kernel", op_name(node.op)));
}

std::vector<bool> ancestors(const Tape& tape, std::span<const NodeId> roots) {
  std::vector<bool> needed(tape.size(), false);
  for (NodeId r : roots) needed.at(r) = true;
  for (std::size_t i = tape.size(); i-- > 0;) {
    if (!needed[i]) continue;
    for (NodeId a : tape.node(i).args) needed[a] = true;
  }
  return needed;
}

}  // namespace

Evaluation forward(const Tape& tape, const Bindings& bindings, std::span<const NodeId> outputs) {
  for (NodeId id : outputs) tape.node(id);
  const auto needed = ancestors(tape, outputs);
  Evaluation ev;
  ev.values_.resize(tape.size());
  std::vector<const Tensor*> args;
  for (NodeId id = 0; id < tape.size(); ++id) {
    if (!needed[id]) continue;
    const Node& node = tape.node(id);
    if (node.op == Op::input) {
      auto bound = bindings.find(node.name);
      if (!bound) throw UnboundInputError(fmt::format("node {}: input '{}' is not bound", id, node.name));
      if (bound->shape() != node.shape) {
        throw ShapeError(fmt::format("node {}: input '{}' bound with shape {}, expected {}", id, node.name,
                                     shape_str(bound->shape()), shape_str(node.shape)));
      }
      if (!bound->all_finite()) throw NumericError(fmt::format("node {}: input '{}' is not finite", id, node.name));
      ev.values_[id] = std::move(bound);
      continue;
    }
    if (node.op == Op::constant) {
      ev.values_[id] = node.value;
      continue;
    }
    args.clear();
    for (NodeId a : node.args) args.push_back(ev.values_[a].get());
    Tensor out = compute(node, args);
    if (!out.all_finite()) throw NumericError(fmt::format("node {} ({}): non-finite result", id, op_name(node.op)));
    ev.values_[id] = std::make_shared<const Tensor>(std::move(out));
  }
  return ev;
}

std::map<std::string, Tensor, std::less<>> eval(const Tape& tape, const Bindings& bindings) {
  std::vector<NodeId> ids;
  for (const auto& [name, id] : tape.outputs()) ids.push_back(id);
  const Evaluation ev = forward(tape, bindings, ids);
  std::map<std::string, Tensor, std::less<>> out;
  for (const auto& [name, id] : tape.outputs()) out.emplace(name, ev.value(id));
  return out;
}

// ---------------------------------------------------------------------------
// Reverse pass

namespace {

void accumulate(std::vector<Tensor>& adjoints, std::vector<bool>& present, NodeId id, Tensor g) {
  if (!present[id]) {
    adjoints[id] = std::move(g);
    present[id] = true;
    return;
  }
  auto dst = adjoints[id].data();
  const auto src = g.data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

Tensor softmax_weighted(const double* x, std::size_t n, double dy) {
  const double lse = row_logsumexp(x, n);
  Tensor out(Shape{n});
  for (std::size_t i = 0; i < n; ++i) out[i] = dy * std::exp(x[i] - lse);
  return out;
}

}  // namespace

Gradients backward(const Tape& tape, const Evaluation& ev, NodeId output, std::span<const std::string> wrt) {
  const Node& out_node = tape.node(output);
  if (shape_size(out_node.shape) != 1) {
    throw ShapeError(fmt::format("node {}: gradient output must be scalar, has shape {}", output,
                                 shape_str(out_node.shape)));
  }
  std::vector<bool> depends(tape.size(), false);
  for (const auto& name : wrt) {
    const auto id = tape.find_input(name);
    if (!id) throw UnboundInputError(fmt::format("unknown input '{}'", name));
    depends[*id] = true;
  }
  for (NodeId id = 0; id < tape.size(); ++id) {
    for (NodeId a : tape.node(id).args) depends[id] = depends[id] || depends[a];
  }
  const std::array<NodeId, 1> roots{output};
  const auto on_path = ancestors(tape, roots);

  std::vector<Tensor> adj(tape.size());
  std::vector<bool> present(tape.size(), false);
  if (depends[output]) accumulate(adj, present, output, Tensor(out_node.shape, 1.0));

  auto wants = [&](NodeId a) { return depends[a] && on_path[a]; };

  for (NodeId id = output + 1; id-- > 0;) {
    if (!present[id] || !on_path[id]) continue;
    const Node& node = tape.node(id);
    if (node.op == Op::input || node.op == Op::constant) continue;
    const Tensor& dy = adj[id];
    const Tensor& y = ev.value(id);
    auto arg = [&](std::size_t k) -> const Tensor& { return ev.value(node.args[k]); };
    auto give = [&](std::size_t k, Tensor g) {
      if (wants(node.args[k])) accumulate(adj, present, node.args[k], std::move(g));
    };

    switch (node.op) {
      case Op::add:
        give(0, dy);
        give(1, dy);
        break;
      case Op::sub:
        give(0, dy);
        give(1, map_unary(dy, [](double g) { return -g; }));
        break;
      case Op::mul:
        if (wants(node.args[0])) give(0, map_binary(dy, arg(1), [](double g, double b) { return g * b; }));
        if (wants(node.args[1])) give(1, map_binary(dy, arg(0), [](double g, double a) { return g * a; }));
        break;
      case Op::scale: give(0, map_unary(dy, [f = node.factor](double g) { return f * g; })); break;
      case Op::matmul:
        if (wants(node.args[0])) give(0, kernels::matmul(dy, arg(1), false, true));
        if (wants(node.args[1])) give(1, kernels::matmul(arg(0), dy, true, false));
        break;
      case Op::bias_add: {
        give(0, dy);
        if (wants(node.args[1])) {
          const auto& s = dy.shape();
          const std::size_t inner = s.size() == 4 ? s[2] * s[3] : 1;
          Tensor db(Shape{s[1]});
          for (std::size_t n = 0; n < s[0]; ++n) {
            for (std::size_t c = 0; c < s[1]; ++c) {
              const double* p = dy.data().data() + (n * s[1] + c) * inner;
              for (std::size_t i = 0; i < inner; ++i) db[c] += p[i];
            }
          }
          give(1, std::move(db));
        }
        break;
      }
      case Op::conv2d: {
        Tensor dx, dw;
        const bool need_x = wants(node.args[0]);
        const bool need_w = wants(node.args[1]);
        kernels::conv2d_backward(arg(0), arg(1), node.stride, dy, need_x ? &dx : nullptr, need_w ? &dw : nullptr);
        if (need_x) give(0, std::move(dx));
        if (need_w) give(1, std::move(dw));
        break;
      }
      case Op::maxpool2d: give(0, kernels::maxpool2d_backward(arg(0), node.window_h, node.window_w, dy)); break;
      case Op::tanh: give(0, map_binary(dy, y, [](double g, double t) { return g * (1.0 - t * t); })); break;
      case Op::relu: give(0, map_binary(dy, arg(0), [](double g, double x) { return x > 0.0 ? g : 0.0; })); break;
      case Op::exp: give(0, map_binary(dy, y, [](double g, double e) { return g * e; })); break;
      case Op::log: give(0, map_binary(dy, arg(0), [](double g, double x) { return g / x; })); break;
      case Op::square: give(0, map_binary(dy, arg(0), [](double g, double x) { return 2.0 * g * x; })); break;
      case Op::sum: give(0, Tensor(arg(0).shape(), dy.item())); break;
      case Op::sum_axis: {
        const auto& s = arg(0).shape();
        std::size_t outer = 1, inner = 1;
        for (std::size_t i = 0; i < node.axis; ++i) outer *= s[i];
        for (std::size_t i = node.axis + 1; i < s.size(); ++i) inner *= s[i];
        Tensor g(s);
        for (std::size_t o = 0; o < outer; ++o) {
          for (std::size_t k = 0; k < s[node.axis]; ++k) {
            std::copy_n(dy.data().data() + o * inner, inner, g.data().data() + (o * s[node.axis] + k) * inner);
          }
        }
        give(0, std::move(g));
        break;
      }
      case Op::log_softmax: {
        const std::size_t cols = y.shape().back();
        const std::size_t rows = y.size() / cols;
        Tensor g(y.shape());
        for (std::size_t r = 0; r < rows; ++r) {
          const double* gy = dy.data().data() + r * cols;
          const double* ly = y.data().data() + r * cols;
          const double total = std::accumulate(gy, gy + cols, 0.0);
          for (std::size_t c = 0; c < cols; ++c) g[r * cols + c] = gy[c] - std::exp(ly[c]) * total;
        }
        give(0, std::move(g));
        break;
      }
      case Op::logsumexp:
        give(0, softmax_weighted(arg(0).data().data(), arg(0).size(), dy.item()).reshaped(arg(0).shape()));
        break;
      case Op::segment_logsumexp: {
        const Tensor& x = arg(0);
        Tensor g(x.shape());
        for (std::size_t k = 0; k + 1 < node.offsets.size(); ++k) {
          for (std::size_t j = node.offsets[k]; j < node.offsets[k + 1]; ++j) {
            const std::size_t idx = node.indices[j];
            g[idx] += dy[k] * std::exp(x[idx] - y[k]);
          }
        }
        give(0, std::move(g));
        break;
      }
      case Op::gather: {
        Tensor g(arg(0).shape());
        for (std::size_t i = 0; i < node.indices.size(); ++i) g[node.indices[i]] += dy[i];
        give(0, std::move(g));
        break;
      }
      case Op::gather_rows: {
        Tensor g(arg(0).shape());
        const std::size_t cols = node.shape[1];
        for (std::size_t i = 0; i < node.indices.size(); ++i) {
          double* dst = g.data().data() + node.indices[i] * cols;
          const double* src = dy.data().data() + i * cols;
          for (std::size_t c = 0; c < cols; ++c) dst[c] += src[c];
        }
        give(0, std::move(g));
        break;
      }
      case Op::concat: {
        std::size_t offset = 0;
        for (std::size_t k = 0; k < node.args.size(); ++k) {
          const Tensor& part = arg(k);
          if (wants(node.args[k])) {
            Tensor g(part.shape());
            std::copy_n(dy.data().data() + offset, part.size(), g.data().data());
            give(k, std::move(g));
          }
          offset += part.size();
        }
        break;
      }
      case Op::reshape: give(0, dy.reshaped(arg(0).shape())); break;
      case Op::permute: {
        const auto sources = permute_sources(arg(0).shape(), node.indices);
        Tensor g(arg(0).shape());
        for (std::size_t j = 0; j < sources.size(); ++j) g[sources[j]] = dy[j];
        give(0, std::move(g));
        break;
      }
      case Op::input:
      case Op::constant: break;
    }
  }

  Gradients result;
  for (const auto& name : wrt) {
    const NodeId id = *tape.find_input(name);
    result.insert_or_assign(name, present[id] ? adj[id] : Tensor(tape.node(id).shape));
  }
  return result;
}

Gradients grad(const Tape& tape, NodeId output, std::span<const std::string> wrt, const Bindings& bindings) {
  const std::array<NodeId, 1> roots{output};
  const Evaluation ev = forward(tape, bindings, roots);
  return backward(tape, ev, output, wrt);
}

}  // namespace seqadv::grad
