#include "lrgan/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "lrgan/errors.hpp"

namespace lrgan::ad {
namespace {

std::string shape_str(const Tensor& t) {
  std::ostringstream os;
  os << t.rows() << "x" << t.cols();
  return os.str();
}

}  // namespace

std::string_view op_name(Op op) {
  switch (op) {
    case Op::kInput: return "input";
    case Op::kConstant: return "constant";
    case Op::kMatMul: return "matmul";
    case Op::kTranspose: return "transpose";
    case Op::kAddBias: return "add_bias";
    case Op::kAdd: return "add";
    case Op::kSub: return "sub";
    case Op::kMul: return "mul";
    case Op::kDiv: return "div";
    case Op::kAffine: return "affine";
    case Op::kRelu: return "relu";
    case Op::kLeakyRelu: return "leaky_relu";
    case Op::kTanh: return "tanh";
    case Op::kSigmoid: return "sigmoid";
    case Op::kSoftplus: return "softplus";
    case Op::kSquare: return "square";
    case Op::kMask: return "mask";
    case Op::kSum: return "sum";
    case Op::kMean: return "mean";
    case Op::kMin: return "min";
    case Op::kArgminMask: return "argmin_mask";
    case Op::kSumRows: return "sum_rows";
    case Op::kSumCols: return "sum_cols";
    case Op::kTileRows: return "tile_rows";
    case Op::kTileCols: return "tile_cols";
    case Op::kFill: return "fill";
    case Op::kSpreadMean: return "spread_mean";
    case Op::kRowNorm: return "row_norm";
    case Op::kZerosLike: return "zeros_like";
    case Op::kSeed: return "seed";
  }
  return "unknown";
}

void Graph::check(NodeId id) const {
  if (id.index >= nodes_.size()) throw ContractError("autodiff: node id out of range");
}

NodeId Graph::push(Node node) {
  for (NodeId in : node.inputs) check(in);
  nodes_.push_back(std::move(node));
  return NodeId{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

NodeId Graph::unary(Op op, NodeId x, double a, double b) {
  Node n;
  n.op = op;
  n.inputs = {x};
  n.a = a;
  n.b = b;
  return push(std::move(n));
}

NodeId Graph::binary(Op op, NodeId x, NodeId y, double a) {
  Node n;
  n.op = op;
  n.inputs = {x, y};
  n.a = a;
  return push(std::move(n));
}

NodeId Graph::input(std::string name) {
  if (auto it = inputs_.find(name); it != inputs_.end()) return it->second;
  Node n;
  n.op = Op::kInput;
  n.name = name;
  const NodeId id = push(std::move(n));
  inputs_.emplace(std::move(name), id);
  return id;
}

NodeId Graph::constant(Tensor value, std::string name) {
  Node n;
  n.op = Op::kConstant;
  n.constant = std::move(value);
  n.name = std::move(name);
  return push(std::move(n));
}

NodeId Graph::matmul(NodeId a, NodeId b) { return binary(Op::kMatMul, a, b); }
NodeId Graph::transpose(NodeId x) { return unary(Op::kTranspose, x); }
NodeId Graph::add_bias(NodeId x, NodeId bias) { return binary(Op::kAddBias, x, bias); }
NodeId Graph::add(NodeId a, NodeId b) { return binary(Op::kAdd, a, b); }
NodeId Graph::sub(NodeId a, NodeId b) { return binary(Op::kSub, a, b); }
NodeId Graph::mul(NodeId a, NodeId b) { return binary(Op::kMul, a, b); }
NodeId Graph::div(NodeId a, NodeId b) { return binary(Op::kDiv, a, b); }
NodeId Graph::affine(NodeId x, double scale, double shift) {
  return unary(Op::kAffine, x, scale, shift);
}
NodeId Graph::relu(NodeId x) { return unary(Op::kRelu, x); }
NodeId Graph::leaky_relu(NodeId x, double slope) { return unary(Op::kLeakyRelu, x, slope); }
NodeId Graph::tanh(NodeId x) { return unary(Op::kTanh, x); }
NodeId Graph::sigmoid(NodeId x) { return unary(Op::kSigmoid, x); }
NodeId Graph::softplus(NodeId x) { return unary(Op::kSoftplus, x); }
NodeId Graph::square(NodeId x) { return unary(Op::kSquare, x); }
NodeId Graph::mask(NodeId x, double slope) { return unary(Op::kMask, x, slope); }
NodeId Graph::sum(NodeId x) { return unary(Op::kSum, x); }
NodeId Graph::mean(NodeId x) { return unary(Op::kMean, x); }
NodeId Graph::min(NodeId x) { return unary(Op::kMin, x); }
NodeId Graph::argmin_mask(NodeId x) { return unary(Op::kArgminMask, x); }
NodeId Graph::sum_rows(NodeId x) { return unary(Op::kSumRows, x); }
NodeId Graph::sum_cols(NodeId x) { return unary(Op::kSumCols, x); }
NodeId Graph::tile_rows(NodeId row, NodeId ref) { return binary(Op::kTileRows, row, ref); }
NodeId Graph::tile_cols(NodeId col, NodeId ref) { return binary(Op::kTileCols, col, ref); }
NodeId Graph::fill(NodeId scalar, NodeId ref) { return binary(Op::kFill, scalar, ref); }
NodeId Graph::spread_mean(NodeId scalar, NodeId ref) {
  return binary(Op::kSpreadMean, scalar, ref);
}
NodeId Graph::row_norm(NodeId x) { return unary(Op::kRowNorm, x); }
NodeId Graph::zeros_like(NodeId ref) { return unary(Op::kZerosLike, ref); }

std::optional<NodeId> Graph::accumulate(std::optional<NodeId> acc, NodeId contribution) {
  if (!acc) return contribution;
  return add(*acc, contribution);
}

void Graph::backprop(NodeId id, NodeId g, std::vector<std::optional<NodeId>>& adj,
                     const std::vector<char>& wanted) {
  // Copy: push() may reallocate nodes_.
  const Node n = nodes_[id.index];
  auto give = [&](std::size_t slot, auto make) {
    const auto target = n.inputs[slot].index;
    if (!wanted[target]) return;
    adj[target] = accumulate(adj[target], make());
  };
  switch (n.op) {
    case Op::kInput:
    case Op::kConstant:
    case Op::kMask:
    case Op::kArgminMask:
    case Op::kZerosLike:
    case Op::kSeed:
      return;  // leaves or piecewise-constant
    case Op::kMatMul:
      give(0, [&] { return matmul(g, transpose(n.inputs[1])); });
      give(1, [&] { return matmul(transpose(n.inputs[0]), g); });
      return;
    case Op::kTranspose:
      give(0, [&] { return transpose(g); });
      return;
    case Op::kAddBias:
      give(0, [&] { return g; });
      give(1, [&] { return sum_rows(g); });
      return;
    case Op::kAdd:
      give(0, [&] { return g; });
      give(1, [&] { return g; });
      return;
    case Op::kSub:
      give(0, [&] { return g; });
      give(1, [&] { return neg(g); });
      return;
    case Op::kMul:
      give(0, [&] { return mul(g, n.inputs[1]); });
      give(1, [&] { return mul(g, n.inputs[0]); });
      return;
    case Op::kDiv:
      give(0, [&] { return div(g, n.inputs[1]); });
      give(1, [&] { return neg(div(mul(g, id), n.inputs[1])); });
      return;
    case Op::kAffine:
      give(0, [&] { return affine(g, n.a, 0.0); });
      return;
    case Op::kRelu:
      give(0, [&] { return mul(g, mask(n.inputs[0], 0.0)); });
      return;
    case Op::kLeakyRelu:
      give(0, [&] { return mul(g, mask(n.inputs[0], n.a)); });
      return;
    case Op::kTanh:
      give(0, [&] { return mul(g, affine(square(id), -1.0, 1.0)); });
      return;
    case Op::kSigmoid:
      give(0, [&] { return mul(g, mul(id, affine(id, -1.0, 1.0))); });
      return;
    case Op::kSoftplus:
      give(0, [&] { return mul(g, sigmoid(n.inputs[0])); });
      return;
    case Op::kSquare:
      give(0, [&] { return mul(g, affine(n.inputs[0], 2.0, 0.0)); });
      return;
    case Op::kSum:
      give(0, [&] { return fill(g, n.inputs[0]); });
      return;
    case Op::kMean:
      give(0, [&] { return spread_mean(g, n.inputs[0]); });
      return;
    case Op::kMin:
      give(0, [&] { return mul(fill(g, n.inputs[0]), argmin_mask(n.inputs[0])); });
      return;
    case Op::kSumRows:
      give(0, [&] { return tile_rows(g, n.inputs[0]); });
      return;
    case Op::kSumCols:
      give(0, [&] { return tile_cols(g, n.inputs[0]); });
      return;
    case Op::kTileRows:
      give(0, [&] { return sum_rows(g); });
      return;
    case Op::kTileCols:
      give(0, [&] { return sum_cols(g); });
      return;
    case Op::kFill:
      give(0, [&] { return sum(g); });
      return;
    case Op::kSpreadMean:
      give(0, [&] { return mean(g); });
      return;
    case Op::kRowNorm:
      give(0, [&] { return mul(tile_cols(div(g, id), n.inputs[0]), n.inputs[0]); });
      return;
  }
  throw ContractError("autodiff: no reverse rule for op '" + std::string(op_name(n.op)) + "'");
}

std::vector<NodeId> Graph::gradients(NodeId output, std::span<const NodeId> wrt) {
  check(output);
  for (NodeId w : wrt) check(w);
  const std::size_t count = output.index + 1;
  std::vector<std::optional<NodeId>> adj(count);

  // Only nodes on a path from some wrt node to the output need adjoints.
  std::vector<char> from_wrt(count, 0);
  for (NodeId w : wrt) {
    if (w.index < count) from_wrt[w.index] = 1;
  }
  for (std::uint32_t i = 0; i < count; ++i) {
    if (from_wrt[i]) continue;
    for (NodeId in : nodes_[i].inputs) {
      if (from_wrt[in.index]) {
        from_wrt[i] = 1;
        break;
      }
    }
  }

  Node seed;
  seed.op = Op::kSeed;
  seed.inputs = {output};
  adj[output.index] = push(std::move(seed));

  for (std::uint32_t i = output.index + 1; i-- > 0;) {
    if (!adj[i] || !from_wrt[i]) continue;
    backprop(NodeId{i}, *adj[i], adj, from_wrt);
  }

  std::vector<NodeId> out;
  out.reserve(wrt.size());
  for (NodeId w : wrt) {
    if (w.index < count && adj[w.index]) {
      out.push_back(*adj[w.index]);
    } else {
      out.push_back(zeros_like(w));
    }
  }
  return out;
}

Plan Graph::plan(std::span<const NodeId> outputs) const {
  Plan p;
  std::vector<char> needed(nodes_.size(), 0);
  for (NodeId o : outputs) {
    check(o);
    needed[o.index] = 1;
    p.outputs_.push_back(o);
  }
  for (std::size_t i = nodes_.size(); i-- > 0;) {
    if (!needed[i]) continue;
    for (NodeId in : nodes_[i].inputs) needed[in.index] = 1;
  }
  for (std::uint32_t i = 0; i < nodes_.size(); ++i) {
    if (needed[i]) p.order_.push_back(i);
  }
  return p;
}

void Graph::compute(std::uint32_t index, const std::vector<Tensor>& values,
                    const Bindings& inputs, Tensor& result) const {
  const Node& n = nodes_[index];
  auto in = [&](std::size_t slot) -> const Tensor& { return values[n.inputs[slot].index]; };
  auto x = [&](std::size_t slot) -> const Matrix& { return in(slot).matrix(); };
  auto mismatch = [&](const Tensor& a, const Tensor& b) {
    return ConfigError("autodiff: shape mismatch in " + std::string(op_name(n.op)) + " node #" +
                       std::to_string(index) + ": " + shape_str(a) + " vs " + shape_str(b));
  };
  auto same = [&]() {
    if (!in(0).same_shape(in(1))) throw mismatch(in(0), in(1));
  };
  auto set_scalar = [&](double v) {
    result.matrix().resize(1, 1);
    result.matrix()(0, 0) = v;
  };
  Matrix& out = result.matrix();

  switch (n.op) {
    case Op::kInput: {
      auto it = inputs.find(n.name);
      if (it == inputs.end()) throw ConfigError("autodiff: unbound input '" + n.name + "'");
      out = it->second.matrix();
      return;
    }
    case Op::kConstant:
      out = n.constant.matrix();
      return;
    case Op::kMatMul:
      if (in(0).cols() != in(1).rows()) throw mismatch(in(0), in(1));
      out.noalias() = x(0) * x(1);
      return;
    case Op::kTranspose:
      out = x(0).transpose();
      return;
    case Op::kAddBias:
      if (in(1).rows() != 1 || in(1).cols() != in(0).cols()) throw mismatch(in(0), in(1));
      out = x(0);
      out.rowwise() += x(1).row(0);
      return;
    case Op::kAdd:
      same();
      out = x(0) + x(1);
      return;
    case Op::kSub:
      same();
      out = x(0) - x(1);
      return;
    case Op::kMul:
      same();
      out = x(0).cwiseProduct(x(1));
      return;
    case Op::kDiv:
      same();
      out = x(0).binaryExpr(x(1), [](double a, double b) { return b == 0.0 ? 0.0 : a / b; });
      return;
    case Op::kAffine:
      out = (n.a * x(0).array() + n.b).matrix();
      return;
    case Op::kRelu:
      out = x(0).cwiseMax(0.0);
      return;
    case Op::kLeakyRelu: {
      const double s = n.a;
      out = x(0).unaryExpr([s](double v) { return v >= 0 ? v : s * v; });
      return;
    }
    case Op::kTanh:
      out = x(0).array().tanh().matrix();
      return;
    case Op::kSigmoid:
      out = x(0).unaryExpr([](double v) {
        return v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
      });
      return;
    case Op::kSoftplus:
      out = x(0).unaryExpr([](double v) {
        return v > 0 ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v));
      });
      return;
    case Op::kSquare:
      out = x(0).array().square().matrix();
      return;
    case Op::kMask: {
      const double s = n.a;
      out = x(0).unaryExpr([s](double v) { return v >= 0 ? 1.0 : s; });
      return;
    }
    case Op::kSum:
      set_scalar(x(0).sum());
      return;
    case Op::kMean:
      if (in(0).size() == 0) throw ConfigError("autodiff: mean of empty tensor");
      set_scalar(x(0).mean());
      return;
    case Op::kMin:
      if (in(0).size() == 0) throw ConfigError("autodiff: min of empty tensor");
      set_scalar(x(0).minCoeff());
      return;
    case Op::kArgminMask:
      out.setZero(in(0).rows(), in(0).cols());
      if (in(0).size() > 0) {
        Eigen::Index r = 0;
        Eigen::Index c = 0;
        x(0).minCoeff(&r, &c);
        out(r, c) = 1.0;
      }
      return;
    case Op::kSumRows:
      out = x(0).colwise().sum();
      return;
    case Op::kSumCols:
      out = x(0).rowwise().sum();
      return;
    case Op::kTileRows:
      if (in(0).rows() != 1) throw mismatch(in(0), in(1));
      out = x(0).replicate(in(1).rows(), 1);
      return;
    case Op::kTileCols:
      if (in(0).cols() != 1) throw mismatch(in(0), in(1));
      out = x(0).replicate(1, in(1).cols());
      return;
    case Op::kFill:
      if (!in(0).is_scalar()) throw mismatch(in(0), in(1));
      out.setConstant(in(1).rows(), in(1).cols(), in(0).item());
      return;
    case Op::kSpreadMean: {
      if (!in(0).is_scalar()) throw mismatch(in(0), in(1));
      const auto count = static_cast<double>(in(1).size());
      out.setConstant(in(1).rows(), in(1).cols(), count > 0 ? in(0).item() / count : 0.0);
      return;
    }
    case Op::kRowNorm:
      out = x(0).rowwise().norm();
      return;
    case Op::kZerosLike:
      out.setZero(in(0).rows(), in(0).cols());
      return;
    case Op::kSeed:
      if (!in(0).is_scalar()) {
        throw ContractError("autodiff: gradient requested of non-scalar node #" +
                            std::to_string(n.inputs[0].index) + " with shape " +
                            shape_str(in(0)));
      }
      set_scalar(1.0);
      return;
  }
  throw ContractError("autodiff: cannot evaluate op '" + std::string(op_name(n.op)) + "'");
}

void Graph::run(const Plan& plan, const Bindings& inputs, Workspace& workspace) const {
  auto& values = workspace.values_;
  if (values.size() < nodes_.size()) values.resize(nodes_.size());
  for (std::uint32_t i : plan.order()) {
    compute(i, values, inputs, values[i]);
    if (!values[i].all_finite()) {
      const Node& n = nodes_[i];
      std::string label = n.name.empty() ? "" : " '" + n.name + "'";
      throw NumericError("autodiff: non-finite value at " + std::string(op_name(n.op)) +
                         " node #" + std::to_string(i) + label);
    }
  }
}

std::vector<Tensor> Graph::run(const Plan& plan, const Bindings& inputs) const {
  Workspace workspace;
  run(plan, inputs, workspace);
  std::vector<Tensor> out;
  out.reserve(plan.outputs().size());
  for (NodeId o : plan.outputs()) out.push_back(workspace.values_[o.index]);
  return out;
}

Tensor Graph::eval(NodeId output, const Bindings& inputs) const {
  const NodeId outs[] = {output};
  return std::move(run(plan(outs), inputs).front());
}

std::vector<Tensor> grad(const Graph& graph, const Bindings& inputs, NodeId output,
                         std::span<const NodeId> wrt) {
  Graph g = graph;
  const std::vector<NodeId> grads = g.gradients(output, wrt);
  return g.run(g.plan(grads), inputs);
}

}  // namespace lrgan::ad
