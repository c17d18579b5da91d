#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "vqalab/autodiff/tensor.hpp"
#include "vqalab/error.hpp"

namespace vqalab::ad {

using NodeId = std::uint32_t;

enum class Op : std::uint8_t {
  constant,
  parameter,
  input,
  add,
  sub,
  mul,
  affine,  // scale * x + shift
  matmul,
  transpose,
  reshape,
  sum,
  broadcast,
  sigmoid,
  softplus,
  relu,
  step,  // relu'(x); not differentiable
  log,
  sqrt,
  reciprocal,
  clamp,
  in_range,  // clamp'(x); not differentiable
  softmax,
  index,
  scatter,
};

struct Node {
  Op op = Op::constant;
  std::array<NodeId, 2> parents{};
  std::uint8_t arity = 0;
  Shape shape;
  Tensor value;
  bool has_value = false;
  bool requires_grad = false;
  double attr_a = 0.0;
  double attr_b = 0.0;
  std::size_t attr_index = 0;
};

struct Gradient {
  NodeId wrt = 0;
  Tensor tensor;
  bool graph_attached = false;
  /// Node holding the gradient when graph_attached is true.
  NodeId node = 0;
};

using Bindings = std::map<NodeId, Tensor>;

/// Append-only computation graph. Node ids are assigned in creation order,
/// which is also a valid topological order. Values are computed eagerly when
/// every parent already has one, and recomputed wholesale by evaluate().
class Graph {
 public:
  Graph() { nodes_.reserve(256); }

  // ---- leaves ---------------------------------------------------------
  NodeId constant(Tensor value) { return leaf(Op::constant, std::move(value), false); }
  NodeId parameter(Tensor value) { return leaf(Op::parameter, std::move(value), true); }
  NodeId input(Tensor value, bool requires_grad = false) {
    return leaf(Op::input, std::move(value), requires_grad);
  }
  /// Unbound input; its value is supplied through evaluate().
  NodeId input(Shape shape, bool requires_grad = false) {
    Node n;
    n.op = Op::input;
    n.shape = shape;
    n.requires_grad = requires_grad;
    return push(std::move(n));
  }

  // ---- operators ------------------------------------------------------
  NodeId add(NodeId a, NodeId b) { return binary_same(Op::add, a, b, "add"); }
  NodeId sub(NodeId a, NodeId b) { return binary_same(Op::sub, a, b, "sub"); }
  NodeId mul(NodeId a, NodeId b) { return binary_same(Op::mul, a, b, "mul"); }

  NodeId affine(NodeId a, double scale, double shift) {
    Node n = unary(Op::affine, a, shape_of(a));
    n.attr_a = scale;
    n.attr_b = shift;
    return push(std::move(n));
  }
  NodeId scale(NodeId a, double factor) { return affine(a, factor, 0.0); }

  NodeId matmul(NodeId a, NodeId b) {
    const Shape sa = shape_of(a), sb = shape_of(b);
    require(sa.rank() == 2 && sb.rank() == 2, ErrorKind::shape,
            "matmul expects rank-2 operands, got " + sa.str() + " and " + sb.str());
    require(sa[1] == sb[0], ErrorKind::shape,
            "matmul inner dimension mismatch " + sa.str() + " x " + sb.str());
    Node n = binary(Op::matmul, a, b, Shape(sa[0], sb[1]));
    return push(std::move(n));
  }

  NodeId transpose(NodeId a) {
    const Shape s = shape_of(a);
    require(s.rank() == 2, ErrorKind::shape, "transpose expects rank 2, got " + s.str());
    return push(unary(Op::transpose, a, Shape(s[1], s[0])));
  }

  NodeId reshape(NodeId a, Shape shape) {
    require(shape_of(a).size() == shape.size(), ErrorKind::shape,
            "reshape " + shape_of(a).str() + " -> " + shape.str() + " changes element count");
    return push(unary(Op::reshape, a, shape));
  }

  NodeId sum(NodeId a) { return push(unary(Op::sum, a, Shape::scalar())); }

  NodeId broadcast(NodeId scalar, Shape shape) {
    require(shape_of(scalar).rank() == 0, ErrorKind::shape,
            "broadcast expects a scalar, got " + shape_of(scalar).str());
    return push(unary(Op::broadcast, scalar, shape));
  }

  NodeId sigmoid(NodeId a) { return push(unary(Op::sigmoid, a, shape_of(a))); }
  NodeId softplus(NodeId a) { return push(unary(Op::softplus, a, shape_of(a))); }
  NodeId relu(NodeId a) { return push(unary(Op::relu, a, shape_of(a))); }
  /// max(0, x); derivative at exactly 0 is 0.
  NodeId hinge(NodeId a) { return relu(a); }
  NodeId step(NodeId a) { return push(unary(Op::step, a, shape_of(a))); }
  NodeId log(NodeId a) { return push(unary(Op::log, a, shape_of(a))); }
  NodeId sqrt(NodeId a) { return push(unary(Op::sqrt, a, shape_of(a))); }
  NodeId reciprocal(NodeId a) { return push(unary(Op::reciprocal, a, shape_of(a))); }

  NodeId clamp(NodeId a, double lo, double hi) {
    Node n = unary(Op::clamp, a, shape_of(a));
    n.attr_a = lo;
    n.attr_b = hi;
    return push(std::move(n));
  }
  NodeId in_range(NodeId a, double lo, double hi) {
    Node n = unary(Op::in_range, a, shape_of(a));
    n.attr_a = lo;
    n.attr_b = hi;
    return push(std::move(n));
  }

  NodeId softmax(NodeId a) {
    require(shape_of(a).rank() == 1, ErrorKind::shape,
            "softmax expects rank 1, got " + shape_of(a).str());
    return push(unary(Op::softmax, a, shape_of(a)));
  }

  NodeId index(NodeId a, std::size_t i) {
    const Shape s = shape_of(a);
    require(s.rank() == 1, ErrorKind::shape, "index expects rank 1, got " + s.str());
    require(i < s[0], ErrorKind::shape,
            "index " + std::to_string(i) + " out of range for " + s.str());
    Node n = unary(Op::index, a, Shape::scalar());
    n.attr_index = i;
    return push(std::move(n));
  }

  NodeId scatter(NodeId scalar, std::size_t i, std::size_t n_out) {
    require(shape_of(scalar).rank() == 0, ErrorKind::shape,
            "scatter expects a scalar, got " + shape_of(scalar).str());
    require(i < n_out, ErrorKind::shape, "scatter index out of range");
    Node n = unary(Op::scatter, scalar, Shape(n_out));
    n.attr_index = i;
    return push(std::move(n));
  }

  // ---- inspection -----------------------------------------------------
  std::size_t size() const { return nodes_.size(); }
  const Node& node(NodeId id) const { return nodes_.at(id); }
  const Shape& shape_of(NodeId id) const { return nodes_.at(id).shape; }
  bool requires_grad(NodeId id) const { return nodes_.at(id).requires_grad; }

  const Tensor& value(NodeId id) const {
    const Node& n = nodes_.at(id);
    require(n.has_value, ErrorKind::unbound_input,
            "node " + std::to_string(id) + " has no value; an upstream input is unbound");
    return n.value;
  }

  /// Rebinds every input node and recomputes all node values, including any
  /// gradient subgraphs previously appended by gradient(create_graph=true).
  std::vector<Tensor> evaluate(const Bindings& bindings, std::span<const NodeId> requested) {
    for (NodeId id = 0; id < nodes_.size(); ++id) {
      Node& n = nodes_[id];
      if (n.op != Op::input) continue;
      auto it = bindings.find(id);
      require(it != bindings.end(), ErrorKind::unbound_input,
              "input node " + std::to_string(id) + " has no binding");
      require(it->second.shape() == n.shape, ErrorKind::shape,
              "binding for input " + std::to_string(id) + " has shape " +
                  it->second.shape().str() + ", declared " + n.shape.str());
    }
    for (NodeId id = 0; id < nodes_.size(); ++id) {
      Node& n = nodes_[id];
      if (n.op == Op::input) {
        n.value = bindings.at(id);
        n.has_value = true;
      } else if (n.arity > 0) {
        n.value = compute(n);
        n.has_value = true;
      }
    }
    std::vector<Tensor> out;
    out.reserve(requested.size());
    for (NodeId id : requested) out.push_back(value(id));
    return out;
  }

  /// Reverse-mode derivative of a rank-0 node with respect to each of `wrt`.
  /// With create_graph the returned gradients are themselves graph nodes and
  /// may be differentiated again.
  std::vector<Gradient> gradient(NodeId target, std::span<const NodeId> wrt, bool create_graph);

 private:
  NodeId leaf(Op op, Tensor value, bool requires_grad) {
    Node n;
    n.op = op;
    n.shape = value.shape();
    n.value = std::move(value);
    n.has_value = true;
    n.requires_grad = requires_grad;
    return push(std::move(n));
  }

  Node unary(Op op, NodeId a, Shape shape) const {
    Node n;
    n.op = op;
    n.parents = {a, 0};
    n.arity = 1;
    n.shape = shape;
    return n;
  }

  Node binary(Op op, NodeId a, NodeId b, Shape shape) const {
    Node n;
    n.op = op;
    n.parents = {a, b};
    n.arity = 2;
    n.shape = shape;
    return n;
  }

  NodeId binary_same(Op op, NodeId a, NodeId b, const char* name) {
    require(shape_of(a) == shape_of(b), ErrorKind::shape,
            std::string(name) + ": shape mismatch " + shape_of(a).str() + " vs " +
                shape_of(b).str());
    return push(binary(op, a, b, shape_of(a)));
  }

  NodeId push(Node n) {
    for (std::size_t k = 0; k < n.arity; ++k)
      require(n.parents[k] < nodes_.size(), ErrorKind::shape, "parent node does not exist");
    if (n.arity > 0) {
      bool ready = true;
      bool grad = false;
      for (std::size_t k = 0; k < n.arity; ++k) {
        const Node& p = nodes_[n.parents[k]];
        ready = ready && p.has_value;
        grad = grad || p.requires_grad;
      }
      n.requires_grad = grad && n.op != Op::step && n.op != Op::in_range;
      if (ready) {
        n.value = compute(n);
        n.has_value = true;
      }
    }
    nodes_.push_back(std::move(n));
    return static_cast<NodeId>(nodes_.size() - 1);
  }

  Tensor compute(const Node& n) const {
    const Tensor& a = nodes_[n.parents[0]].value;
    switch (n.op) {
      case Op::add: return kernels::add(a, nodes_[n.parents[1]].value);
      case Op::sub: return kernels::sub(a, nodes_[n.parents[1]].value);
      case Op::mul: return kernels::mul(a, nodes_[n.parents[1]].value);
      case Op::affine: return kernels::affine(a, n.attr_a, n.attr_b);
      case Op::matmul: return kernels::matmul(a, nodes_[n.parents[1]].value);
      case Op::transpose: return kernels::transpose(a);
      case Op::reshape: return kernels::reshape(a, n.shape);
      case Op::sum: return kernels::sum(a);
      case Op::broadcast: return kernels::broadcast(a, n.shape);
      case Op::sigmoid: return kernels::sigmoid(a);
      case Op::softplus: return kernels::softplus(a);
      case Op::relu: return kernels::relu(a);
      case Op::step: return kernels::step(a);
      case Op::log: return kernels::log(a);
      case Op::sqrt: return kernels::sqrt(a);
      case Op::reciprocal: return kernels::reciprocal(a);
      case Op::clamp: return kernels::clamp(a, n.attr_a, n.attr_b);
      case Op::in_range: return kernels::in_range(a, n.attr_a, n.attr_b);
      case Op::softmax: return kernels::softmax(a);
      case Op::index: return kernels::index(a, n.attr_index);
      case Op::scatter: return kernels::scatter(a, n.attr_index, n.shape.size());
      case Op::constant:
      case Op::parameter:
      case Op::input: break;
    }
    return n.value;
  }

  std::vector<Node> nodes_;

  friend struct TensorBackend;
  friend struct NodeBackend;
};

// ---------------------------------------------------------------------------
// Backward pass. The vector-Jacobian rules are written once against a backend
// that either evaluates them immediately on tensors (detached) or records them
// as new graph nodes (attached, differentiable again).

struct TensorBackend {
  using Value = Tensor;
  const Graph& g;

  const Tensor& ref(NodeId id) const { return g.nodes_[id].value; }
  Tensor constant(Tensor t) const { return t; }
  Tensor add(const Tensor& a, const Tensor& b) const { return kernels::add(a, b); }
  Tensor sub(const Tensor& a, const Tensor& b) const { return kernels::sub(a, b); }
  Tensor mul(const Tensor& a, const Tensor& b) const { return kernels::mul(a, b); }
  Tensor affine(const Tensor& a, double s, double t) const { return kernels::affine(a, s, t); }
  Tensor matmul(const Tensor& a, const Tensor& b) const { return kernels::matmul(a, b); }
  Tensor transpose(const Tensor& a) const { return kernels::transpose(a); }
  Tensor reshape(const Tensor& a, Shape s) const { return kernels::reshape(a, s); }
  Tensor sum(const Tensor& a) const { return kernels::sum(a); }
  Tensor broadcast(const Tensor& a, Shape s) const { return kernels::broadcast(a, s); }
  Tensor sigmoid(const Tensor& a) const { return kernels::sigmoid(a); }
  Tensor step(const Tensor& a) const { return kernels::step(a); }
  Tensor reciprocal(const Tensor& a) const { return kernels::reciprocal(a); }
  Tensor in_range(const Tensor& a, double lo, double hi) const {
    return kernels::in_range(a, lo, hi);
  }
  Tensor index(const Tensor& a, std::size_t i) const { return kernels::index(a, i); }
  Tensor scatter(const Tensor& a, std::size_t i, std::size_t n) const {
    return kernels::scatter(a, i, n);
  }
  const Tensor& value(const Tensor& v) const { return v; }
};

struct NodeBackend {
  using Value = NodeId;
  Graph& g;

  NodeId ref(NodeId id) const { return id; }
  NodeId constant(Tensor t) const { return g.constant(std::move(t)); }
  NodeId add(NodeId a, NodeId b) const { return g.add(a, b); }
  NodeId sub(NodeId a, NodeId b) const { return g.sub(a, b); }
  NodeId mul(NodeId a, NodeId b) const { return g.mul(a, b); }
  NodeId affine(NodeId a, double s, double t) const { return g.affine(a, s, t); }
  NodeId matmul(NodeId a, NodeId b) const { return g.matmul(a, b); }
  NodeId transpose(NodeId a) const { return g.transpose(a); }
  NodeId reshape(NodeId a, Shape s) const { return g.reshape(a, s); }
  NodeId sum(NodeId a) const { return g.sum(a); }
  NodeId broadcast(NodeId a, Shape s) const { return g.broadcast(a, s); }
  NodeId sigmoid(NodeId a) const { return g.sigmoid(a); }
  NodeId step(NodeId a) const { return g.step(a); }
  NodeId reciprocal(NodeId a) const { return g.reciprocal(a); }
  NodeId in_range(NodeId a, double lo, double hi) const { return g.in_range(a, lo, hi); }
  NodeId index(NodeId a, std::size_t i) const { return g.index(a, i); }
  NodeId scatter(NodeId a, std::size_t i, std::size_t n) const { return g.scatter(a, i, n); }
  const Tensor& value(NodeId v) const { return g.value(v); }
};

namespace detail {

struct NodeSummary {
  Op op;
  std::array<NodeId, 2> parents;
  std::uint8_t arity;
  std::array<Shape, 2> parent_shapes;
  double attr_a, attr_b;
  std::size_t attr_index;
};

/// Calls emit(slot, grad) for each parent slot of `self`.
template <class B, class Emit>
void vector_jacobian(B& b, NodeId self, const NodeSummary& n, const typename B::Value& g,
                     Emit&& emit) {
  const NodeId p0 = n.parents[0];
  const NodeId p1 = n.parents[1];
  switch (n.op) {
    case Op::add:
      emit(0, g);
      emit(1, g);
      break;
    case Op::sub:
      emit(0, g);
      emit(1, b.affine(g, -1.0, 0.0));
      break;
    case Op::mul:
      emit(0, b.mul(g, b.ref(p1)));
      emit(1, b.mul(g, b.ref(p0)));
      break;
    case Op::affine:
      emit(0, b.affine(g, n.attr_a, 0.0));
      break;
    case Op::matmul:
      emit(0, b.matmul(g, b.transpose(b.ref(p1))));
      emit(1, b.matmul(b.transpose(b.ref(p0)), g));
      break;
    case Op::transpose:
      emit(0, b.transpose(g));
      break;
    case Op::reshape:
      emit(0, b.reshape(g, n.parent_shapes[0]));
      break;
    case Op::sum:
      emit(0, b.broadcast(g, n.parent_shapes[0]));
      break;
    case Op::broadcast:
      emit(0, b.sum(g));
      break;
    case Op::sigmoid: {
      const auto y = b.ref(self);
      emit(0, b.mul(g, b.mul(y, b.affine(y, -1.0, 1.0))));
      break;
    }
    case Op::softplus:
      emit(0, b.mul(g, b.sigmoid(b.ref(p0))));
      break;
    case Op::relu:
      emit(0, b.mul(g, b.step(b.ref(p0))));
      break;
    case Op::log:
      emit(0, b.mul(g, b.reciprocal(b.ref(p0))));
      break;
    case Op::sqrt:
      emit(0, b.mul(g, b.affine(b.reciprocal(b.ref(self)), 0.5, 0.0)));
      break;
    case Op::reciprocal: {
      const auto r = b.ref(self);
      emit(0, b.affine(b.mul(g, b.mul(r, r)), -1.0, 0.0));
      break;
    }
    case Op::clamp:
      emit(0, b.mul(g, b.in_range(b.ref(p0), n.attr_a, n.attr_b)));
      break;
    case Op::softmax: {
      const auto y = b.ref(self);
      const auto inner = b.sum(b.mul(g, y));
      emit(0, b.mul(y, b.sub(g, b.broadcast(inner, n.parent_shapes[0]))));
      break;
    }
    case Op::index:
      emit(0, b.scatter(g, n.attr_index, n.parent_shapes[0].size()));
      break;
    case Op::scatter:
      emit(0, b.index(g, n.attr_index));
      break;
    case Op::step:
    case Op::in_range:
    case Op::constant:
    case Op::parameter:
    case Op::input:
      break;
  }
}

template <class B>
std::vector<typename B::Value> backprop(const Graph& graph, B& b, NodeId target,
                                        std::span<const NodeId> wrt) {
  using Value = typename B::Value;
  const std::size_t n_nodes = static_cast<std::size_t>(target) + 1;

  // Only nodes that both depend on some wrt node and feed the target carry
  // a gradient.
  std::vector<char> is_wrt(n_nodes, 0), reach(n_nodes, 0), feeds(n_nodes, 0);
  for (NodeId w : wrt)
    if (w < n_nodes) is_wrt[w] = 1;
  for (NodeId id = 0; id < n_nodes; ++id) {
    const Node& n = graph.node(id);
    if (!n.requires_grad) continue;
    bool r = is_wrt[id] != 0;
    for (std::size_t k = 0; k < n.arity && !r; ++k) r = reach[n.parents[k]] != 0;
    reach[id] = r;
  }
  feeds[target] = 1;
  for (NodeId id = target + 1; id-- > 0;) {
    if (!feeds[id]) continue;
    const Node& n = graph.node(id);
    for (std::size_t k = 0; k < n.arity; ++k) feeds[n.parents[k]] = 1;
  }

  std::vector<std::optional<Value>> grads(n_nodes);
  if (reach[target]) grads[target] = b.constant(Tensor::scalar(1.0));

  for (NodeId id = target + 1; id-- > 0;) {
    if (!grads[id] || !reach[id] || !feeds[id]) continue;
    const Node& node = graph.node(id);
    if (node.arity == 0) continue;
    detail::NodeSummary s{node.op,
                          node.parents,
                          node.arity,
                          {graph.shape_of(node.parents[0]),
                           node.arity > 1 ? graph.shape_of(node.parents[1]) : Shape()},
                          node.attr_a,
                          node.attr_b,
                          node.attr_index};
    const Value g = *grads[id];
    vector_jacobian(b, id, s, g, [&](std::size_t slot, Value contribution) {
      const NodeId p = s.parents[slot];
      if (!reach[p]) return;
      if (grads[p])
        grads[p] = b.add(*grads[p], contribution);
      else
        grads[p] = std::move(contribution);
    });
  }

  std::vector<Value> out;
  out.reserve(wrt.size());
  for (NodeId w : wrt) {
    if (w < n_nodes && grads[w])
      out.push_back(*grads[w]);
    else
      out.push_back(b.constant(Tensor(graph.shape_of(w))));
  }
  return out;
}

}  // namespace detail

inline std::vector<Gradient> Graph::gradient(NodeId target, std::span<const NodeId> wrt,
                                             bool create_graph) {
  require(target < nodes_.size(), ErrorKind::shape, "gradient target does not exist");
  require(shape_of(target).rank() == 0, ErrorKind::rank,
          "gradient target must be rank 0, got " + shape_of(target).str());
  for (NodeId w : wrt) {
    require(w < nodes_.size(), ErrorKind::shape, "gradient wrt node does not exist");
    require(nodes_[w].requires_grad, ErrorKind::config,
            "gradient wrt node " + std::to_string(w) + " does not require grad");
  }
  (void)value(target);

  std::vector<Gradient> out;
  out.reserve(wrt.size());
  if (create_graph) {
    NodeBackend b{*this};
    const auto ids = detail::backprop(*this, b, target, wrt);
    for (std::size_t k = 0; k < wrt.size(); ++k)
      out.push_back(Gradient{wrt[k], value(ids[k]), true, ids[k]});
  } else {
    TensorBackend b{*this};
    auto tensors = detail::backprop(*this, b, target, wrt);
    for (std::size_t k = 0; k < wrt.size(); ++k)
      out.push_back(Gradient{wrt[k], std::move(tensors[k]), false, 0});
  }
  return out;
}

}  // namespace vqalab::ad
