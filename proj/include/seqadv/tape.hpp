#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "seqadv/tensor.hpp"

namespace seqadv {

class UnboundInputError : public Error {
 public:
  using Error::Error;
};

namespace grad {

using NodeId = std::size_t;

enum class Op : std::uint8_t {
  input,
  constant,
  add,
  sub,
  mul,
  scale,
  matmul,
  bias_add,
  conv2d,
  maxpool2d,
  tanh,
  relu,
  exp,
  log,
  square,
  sum,
  sum_axis,
  log_softmax,
  logsumexp,
  segment_logsumexp,
  gather,
  gather_rows,
  concat,
  reshape,
  permute,
};

std::string_view op_name(Op op);

/// One primitive application. Attributes not used by an op stay defaulted.
struct Node {
  Op op = Op::input;
  std::vector<NodeId> args;
  Shape shape;

  std::string name;                        // input
  std::shared_ptr<const Tensor> value;     // constant
  double factor = 1.0;                     // scale
  std::size_t axis = 0;                    // sum_axis
  std::size_t stride = 1;                  // conv2d
  std::size_t window_h = 1, window_w = 1;  // maxpool2d
  std::vector<std::size_t> indices;        // gather, gather_rows, permute, segment_logsumexp
  std::vector<std::size_t> offsets;        // segment_logsumexp group boundaries
};

/// Recorded computation over named inputs. Nodes are appended in topological
/// order; shapes are static and checked when a node is recorded.
class Tape {
 public:
  NodeId input(std::string name, Shape shape);
  NodeId constant(Tensor value);

  NodeId add(NodeId a, NodeId b);
  NodeId sub(NodeId a, NodeId b);
  NodeId mul(NodeId a, NodeId b);
  NodeId scale(NodeId a, double factor);
  NodeId matmul(NodeId a, NodeId b);
  /// x[N,C] + b[C] or x[N,C,H,W] + b[C].
  NodeId bias_add(NodeId x, NodeId bias);
  /// x[N,Cin,H,W] * w[Cout,Cin,k,k]; odd k, zero "same" padding.
  NodeId conv2d(NodeId x, NodeId weights, std::size_t stride = 1);
  /// Non-overlapping window max over the two trailing axes of x[N,C,H,W].
  NodeId maxpool2d(NodeId x, std::size_t window_h, std::size_t window_w);
  NodeId tanh(NodeId a);
  NodeId relu(NodeId a);
  NodeId exp(NodeId a);
  NodeId log(NodeId a);
  NodeId square(NodeId a);
  NodeId sum(NodeId a);
  NodeId sum_axis(NodeId a, std::size_t axis);
  /// Row-wise over the last axis of a rank-1 or rank-2 tensor.
  NodeId log_softmax(NodeId a);
  /// Stable log of the sum of exponentials of every element; rank-0 result.
  NodeId logsumexp(NodeId a);
  /// result[g] = logsumexp of a.flat[groups[g]]. Every group must be nonempty.
  NodeId segment_logsumexp(NodeId a, const std::vector<std::vector<std::size_t>>& groups);
  /// result[i] = a.flat[indices[i]], rank 1.
  NodeId gather(NodeId a, std::vector<std::size_t> indices);
  /// result[i,:] = a[rows[i],:] for rank-2 a.
  NodeId gather_rows(NodeId a, std::vector<std::size_t> rows);
  /// Concatenation along axis 0; trailing dims must agree. Rank-0 parts count as length 1.
  NodeId concat(std::span<const NodeId> parts);
  NodeId reshape(NodeId a, Shape shape);
  NodeId permute(NodeId a, std::vector<std::size_t> axes);

  /// Names a node so eval() reports it.
  void mark_output(std::string name, NodeId id);

  std::size_t size() const noexcept { return nodes_.size(); }
  const Node& node(NodeId id) const;
  const Shape& shape(NodeId id) const { return node(id).shape; }
  std::optional<NodeId> find_input(std::string_view name) const;
  const std::map<std::string, NodeId, std::less<>>& inputs() const noexcept { return inputs_; }
  const std::map<std::string, NodeId, std::less<>>& outputs() const noexcept { return outputs_; }

 private:
  NodeId push(Node node);
  void check_arg(NodeId id) const;
  NodeId unary(Op op, NodeId a);
  NodeId elementwise(Op op, NodeId a, NodeId b);

  std::vector<Node> nodes_;
  std::map<std::string, NodeId, std::less<>> inputs_;
  std::map<std::string, NodeId, std::less<>> outputs_;
};

/// Named input tensors for one evaluation. Bound tensors are shared, never copied.
class Bindings {
 public:
  Bindings& set(std::string name, Tensor value);
  Bindings& share(std::string name, std::shared_ptr<const Tensor> value);
  std::shared_ptr<const Tensor> find(std::string_view name) const;

 private:
  std::unordered_map<std::string, std::shared_ptr<const Tensor>> values_;
};

/// Forward values of one evaluation. Owns its workspace; the tape is untouched.
class Evaluation {
 public:
  const Tensor& value(NodeId id) const;
  bool has_value(NodeId id) const { return id < values_.size() && values_[id] != nullptr; }

 private:
  friend Evaluation forward(const Tape&, const Bindings&, std::span<const NodeId>);
  std::vector<std::shared_ptr<const Tensor>> values_;
};

using Gradients = std::map<std::string, Tensor, std::less<>>;

/// Evaluates every node needed by `outputs`.
Evaluation forward(const Tape& tape, const Bindings& bindings, std::span<const NodeId> outputs);

/// All outputs registered with mark_output().
std::map<std::string, Tensor, std::less<>> eval(const Tape& tape, const Bindings& bindings);

/// Reverse pass over an existing evaluation. Inputs off every path to `output`
/// receive zero gradients.
Gradients backward(const Tape& tape, const Evaluation& evaluation, NodeId output,
                   std::span<const std::string> wrt);

Gradients grad(const Tape& tape, NodeId output, std::span<const std::string> wrt,
               const Bindings& bindings);

}  // namespace grad
}  // namespace seqadv
