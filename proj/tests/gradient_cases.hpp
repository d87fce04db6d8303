#pragma once

// Finite-difference cases covering every tape primitive.

#include <array>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "finite_difference.hpp"
#include "seqadv/tape.hpp"

namespace seqadv::test_support {

using namespace seqadv::grad;

inline double scalar_of(const Tape& tape, NodeId out, const Bindings& b) {
  const std::array<NodeId, 1> ids{out};
  return forward(tape, b, ids).value(out).item();
}

// Reduces a primitive's output to a scalar through fixed random weights so
// every output element contributes to the gradient check.
struct PrimitiveCase {
  std::string name;
  std::vector<std::pair<std::string, Shape>> inputs;
  std::function<NodeId(Tape&, const std::vector<NodeId>&)> build;
  double lo = -2.0;
  double hi = 2.0;
};

/// Largest finite-difference relative error for each input of the case.
inline std::vector<double> primitive_fd_errors(const PrimitiveCase& c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Tape tape;
  std::vector<NodeId> ids;
  Bindings bindings;
  std::vector<Tensor> values;
  for (const auto& [name, shape] : c.inputs) {
    ids.push_back(tape.input(name, shape));
    values.push_back(random_tensor(shape, rng, c.lo, c.hi));
    bindings.set(name, values.back());
  }
  const NodeId y = c.build(tape, ids);
  const NodeId w = tape.constant(random_tensor(tape.shape(y), rng, -1.0, 1.0));
  const NodeId out = tape.sum(tape.mul(y, w));

  std::vector<std::string> names;
  for (const auto& in : c.inputs) names.push_back(in.first);
  const Gradients g = grad::grad(tape, out, names, bindings);

  std::vector<double> errors;
  for (std::size_t k = 0; k < c.inputs.size(); ++k) {
    const auto& name = c.inputs[k].first;
    auto f = [&](const Tensor& x) {
      Bindings b = bindings;
      b.set(name, x);
      return scalar_of(tape, out, b);
    };
    const auto coords = sample_coordinates(values[k].size(), 24, seed + k);
    errors.push_back(max_fd_error(f, values[k], g.at(name), coords));
  }
  return errors;
}

inline std::vector<PrimitiveCase> primitive_cases() {
  using Ids = std::vector<NodeId>;
  return {
      {"add", {{"a", {3, 4}}, {"b", {3, 4}}}, [](Tape& t, const Ids& i) { return t.add(i[0], i[1]); }},
      {"sub", {{"a", {3, 4}}, {"b", {3, 4}}}, [](Tape& t, const Ids& i) { return t.sub(i[0], i[1]); }},
      {"mul", {{"a", {3, 4}}, {"b", {3, 4}}}, [](Tape& t, const Ids& i) { return t.mul(i[0], i[1]); }},
      {"scale", {{"a", {5}}}, [](Tape& t, const Ids& i) { return t.scale(i[0], -1.7); }},
      {"matmul", {{"a", {3, 5}}, {"b", {5, 2}}}, [](Tape& t, const Ids& i) { return t.matmul(i[0], i[1]); }},
      {"bias_add2", {{"x", {3, 4}}, {"b", {4}}}, [](Tape& t, const Ids& i) { return t.bias_add(i[0], i[1]); }},
      {"bias_add4", {{"x", {2, 3, 2, 2}}, {"b", {3}}}, [](Tape& t, const Ids& i) { return t.bias_add(i[0], i[1]); }},
      {"conv2d_s1",
       {{"x", {2, 2, 5, 6}}, {"w", {3, 2, 3, 3}}},
       [](Tape& t, const Ids& i) { return t.conv2d(i[0], i[1], 1); }},
      {"conv2d_s2",
       {{"x", {1, 2, 7, 6}}, {"w", {2, 2, 3, 3}}},
       [](Tape& t, const Ids& i) { return t.conv2d(i[0], i[1], 2); }},
      {"maxpool2x2", {{"x", {2, 2, 4, 6}}}, [](Tape& t, const Ids& i) { return t.maxpool2d(i[0], 2, 2); }},
      {"maxpool2x1", {{"x", {1, 3, 4, 3}}}, [](Tape& t, const Ids& i) { return t.maxpool2d(i[0], 2, 1); }},
      {"tanh", {{"a", {7}}}, [](Tape& t, const Ids& i) { return t.tanh(i[0]); }},
      {"relu", {{"a", {9}}}, [](Tape& t, const Ids& i) { return t.relu(i[0]); }},
      {"exp", {{"a", {6}}}, [](Tape& t, const Ids& i) { return t.exp(i[0]); }},
      {"log", {{"a", {6}}}, [](Tape& t, const Ids& i) { return t.log(i[0]); }, 0.2, 2.0},
      {"square", {{"a", {6}}}, [](Tape& t, const Ids& i) { return t.square(i[0]); }},
      {"sum", {{"a", {2, 3}}}, [](Tape& t, const Ids& i) { return t.sum(i[0]); }},
      {"sum_axis0", {{"a", {3, 4, 2}}}, [](Tape& t, const Ids& i) { return t.sum_axis(i[0], 0); }},
      {"sum_axis1", {{"a", {3, 4, 2}}}, [](Tape& t, const Ids& i) { return t.sum_axis(i[0], 1); }},
      {"log_softmax", {{"a", {3, 5}}}, [](Tape& t, const Ids& i) { return t.log_softmax(i[0]); }},
      {"logsumexp", {{"a", {2, 5}}}, [](Tape& t, const Ids& i) { return t.logsumexp(i[0]); }},
      {"segment_logsumexp",
       {{"a", {6}}},
       [](Tape& t, const Ids& i) { return t.segment_logsumexp(i[0], {{0}, {0, 1}, {1, 2, 5}, {4, 4}}); }},
      {"gather", {{"a", {3, 3}}}, [](Tape& t, const Ids& i) { return t.gather(i[0], {8, 0, 4, 4}); }},
      {"gather_rows", {{"a", {4, 3}}}, [](Tape& t, const Ids& i) { return t.gather_rows(i[0], {3, 1, 1}); }},
      {"concat",
       {{"a", {2, 3}}, {"b", {1, 3}}},
       [](Tape& t, const Ids& i) {
         const std::array<NodeId, 2> parts{i[0], i[1]};
         return t.concat(parts);
       }},
      {"reshape", {{"a", {2, 6}}}, [](Tape& t, const Ids& i) { return t.reshape(i[0], {3, 4}); }},
      {"permute", {{"a", {2, 3, 4}}}, [](Tape& t, const Ids& i) { return t.permute(i[0], {2, 0, 1}); }},
  };
}

}  // namespace seqadv::test_support
