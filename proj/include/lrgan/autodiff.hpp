#pragma once

// Reverse-mode differentiation over dense 2-D tensors.
//
// A Graph is an append-only expression DAG. Gradients are built symbolically
// (Graph::gradients appends the adjoint nodes to the same graph), so a
// gradient is itself differentiable and second-order quantities such as a
// gradient penalty's parameter gradient come out exactly. Evaluation never
// mutates the graph: all per-call state lives in the returned values.

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "lrgan/tensor.hpp"

namespace lrgan::ad {

enum class Op : std::uint8_t {
  kInput,
  kConstant,
  kMatMul,
  kTranspose,
  kAddBias,     // (r x c) + (1 x c) broadcast over rows
  kAdd,
  kSub,
  kMul,         // elementwise
  kDiv,         // elementwise, 0 where the denominator is 0
  kAffine,      // a * x + b
  kRelu,
  kLeakyRelu,
  kTanh,
  kSigmoid,
  kSoftplus,
  kSquare,
  kMask,        // x >= 0 ? 1 : slope; piecewise constant
  kSum,         // all entries -> 1 x 1
  kMean,        // all entries -> 1 x 1
  kMin,         // all entries -> 1 x 1
  kArgminMask,  // one-hot at the first minimum; piecewise constant
  kSumRows,     // (r x c) -> (1 x c)
  kSumCols,     // (r x c) -> (r x 1)
  kTileRows,    // (1 x c) repeated to ref.rows()
  kTileCols,    // (r x 1) repeated to ref.cols()
  kFill,        // 1 x 1 value spread to ref's shape
  kSpreadMean,  // 1 x 1 value / ref.size() spread to ref's shape
  kRowNorm,     // Euclidean norm of each row -> (r x 1)
  kZerosLike,
  kSeed,        // ones(1 x 1); checks that ref is scalar
};

std::string_view op_name(Op op);

struct NodeId {
  std::uint32_t index = 0;
  friend bool operator==(NodeId, NodeId) = default;
};

struct Node {
  Op op = Op::kInput;
  std::vector<NodeId> inputs;
  double a = 0.0;  // op parameter: slope / scale
  double b = 0.0;  // op parameter: shift
  std::string name;
  Tensor constant;
};

using Bindings = std::map<std::string, Tensor, std::less<>>;

/// Topologically ordered subset of nodes required for a set of outputs.
class Plan {
 public:
  Plan() = default;
  const std::vector<NodeId>& outputs() const { return outputs_; }
  const std::vector<std::uint32_t>& order() const { return order_; }

 private:
  friend class Graph;
  std::vector<NodeId> outputs_;
  std::vector<std::uint32_t> order_;
};

/// Reusable per-caller storage for node values. Keeping one alive across
/// repeated runs of the same plan avoids reallocating every intermediate.
class Workspace {
 public:
  const Tensor& value(NodeId id) const { return values_.at(id.index); }

 private:
  friend class Graph;
  std::vector<Tensor> values_;
};

class Graph {
 public:
  /// Named placeholder bound at evaluation time. Declaring the same name
  /// twice yields the same node, so shared parameters share gradients.
  NodeId input(std::string name);
  NodeId constant(Tensor value, std::string name = {});

  NodeId matmul(NodeId a, NodeId b);
  NodeId transpose(NodeId x);
  NodeId add_bias(NodeId x, NodeId bias);
  NodeId add(NodeId a, NodeId b);
  NodeId sub(NodeId a, NodeId b);
  NodeId mul(NodeId a, NodeId b);
  NodeId div(NodeId a, NodeId b);
  NodeId affine(NodeId x, double scale, double shift);
  NodeId neg(NodeId x) { return affine(x, -1.0, 0.0); }
  NodeId relu(NodeId x);
  NodeId leaky_relu(NodeId x, double slope);
  NodeId tanh(NodeId x);
  NodeId sigmoid(NodeId x);
  NodeId softplus(NodeId x);
  NodeId square(NodeId x);
  NodeId mask(NodeId x, double slope);
  NodeId sum(NodeId x);
  NodeId mean(NodeId x);
  NodeId min(NodeId x);
  NodeId argmin_mask(NodeId x);
  NodeId sum_rows(NodeId x);
  NodeId sum_cols(NodeId x);
  NodeId tile_rows(NodeId row, NodeId ref);
  NodeId tile_cols(NodeId col, NodeId ref);
  NodeId fill(NodeId scalar, NodeId ref);
  NodeId spread_mean(NodeId scalar, NodeId ref);
  NodeId row_norm(NodeId x);
  NodeId zeros_like(NodeId ref);

  /// Appends the adjoint graph of `output` and returns one gradient node per
  /// entry of `wrt`. The output must evaluate to a 1 x 1 tensor; this is
  /// checked when the gradient nodes are evaluated.
  std::vector<NodeId> gradients(NodeId output, std::span<const NodeId> wrt);

  Plan plan(std::span<const NodeId> outputs) const;

  /// Evaluates the plan's outputs. Throws ConfigError on missing bindings or
  /// shape mismatch and NumericError on the first non-finite node value.
  std::vector<Tensor> run(const Plan& plan, const Bindings& inputs) const;

  /// Same as above, leaving every computed value in `workspace`.
  void run(const Plan& plan, const Bindings& inputs, Workspace& workspace) const;

  Tensor eval(NodeId output, const Bindings& inputs) const;

  const Node& node(NodeId id) const { return nodes_.at(id.index); }
  std::size_t size() const { return nodes_.size(); }

 private:
  NodeId push(Node node);
  NodeId unary(Op op, NodeId x, double a = 0.0, double b = 0.0);
  NodeId binary(Op op, NodeId x, NodeId y, double a = 0.0);
  void check(NodeId id) const;
  std::optional<NodeId> accumulate(std::optional<NodeId> acc, NodeId contribution);
  // Appends the vector-Jacobian products of node `id` given its adjoint.
  void backprop(NodeId id, NodeId adjoint, std::vector<std::optional<NodeId>>& adjoints,
                const std::vector<char>& wanted);

  void compute(std::uint32_t index, const std::vector<Tensor>& values, const Bindings& inputs,
               Tensor& result) const;

  std::vector<Node> nodes_;
  std::map<std::string, NodeId, std::less<>> inputs_;
};

/// One-shot reverse-mode gradient of a scalar node. Works on a copy of the
/// graph, so the caller's graph is left untouched.
std::vector<Tensor> grad(const Graph& graph, const Bindings& inputs, NodeId output,
                         std::span<const NodeId> wrt);

}  // namespace lrgan::ad
