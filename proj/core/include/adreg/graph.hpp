#pragma once

#include <functional>
#include <memory>

#include "adreg/tensor.hpp"

namespace adreg {

class Graph;

/// Handle to a node in a Graph. Cheap to copy; valid for the graph's life.
struct Var {
  Graph* g = nullptr;
  int id = -1;

  bool valid() const { return g != nullptr && id >= 0; }
  const Tensor& val() const;
  const Tensor& grad() const;
};

/// Reverse-mode tape. Nodes are appended in topological order; backward()
/// walks the tape once in reverse. Graphs are built per evaluation and
/// discarded; all op kernels are deterministic (fixed reduction order).
class Graph {
 public:
  struct Node {
    Tensor value;
    Tensor grad;  // allocated lazily during backward
    bool requires_grad = false;
    bool reachable = false;
    std::vector<int> parents;
    std::function<void(Graph&, int)> backward;  // accumulates into parents
  };

  Var leaf(Tensor value, bool requires_grad = false);
  Var constant(Tensor value) { return leaf(std::move(value), false); }
  Var scalar(double x) { return constant(Tensor::scalar(x)); }

  /// Appends an op node. `backward(g, id)` must add d(out)/d(parent) * grad
  /// into each parent's grad buffer (only for parents with requires_grad).
  Var op(Tensor value, std::vector<int> parents, std::function<void(Graph&, int)> backward);

  /// Reverse pass from a scalar root; seeds d(root)/d(root) = 1.
  /// Grads of all reachable requires_grad nodes are populated.
  void backward(Var root);

  Node& node(int id) { return nodes_[std::size_t(id)]; }
  const Node& node(int id) const { return nodes_[std::size_t(id)]; }
  Tensor& value(int id) { return nodes_[std::size_t(id)].value; }
  Tensor& grad_buf(int id);
  std::size_t size() const { return nodes_.size(); }

  /// Releases value/grad storage of intermediate nodes (keeps leaves).
  void release_intermediates();

 private:
  std::vector<Node> nodes_;
};

// ---- primitive ops (elementwise, reductions, shape) ---------------------

Var add(Var a, Var b);          // same shape
Var sub(Var a, Var b);          // same shape
Var mul(Var a, Var b);          // same shape
Var divide(Var a, Var b);       // same shape
Var neg(Var a);
Var scale(Var a, double c);
Var add_scalar(Var a, double c);
Var square(Var a);
Var sqrt_op(Var a);
Var relu(Var a);
Var lrelu(Var a, double slope);
Var sigmoid(Var a);
Var softplus(Var a);            // log(1 + exp(x)), overflow-safe

Var sum_all(Var a);             // -> [1]
Var mean_all(Var a);            // -> [1]
Var sum_samplewise(Var a);      // [N, ...] -> [N]
Var mean_channels(Var a);       // [N, C, ...] -> [C], mean over N and spatial
Var bcast_channels(Var c, std::vector<std::int64_t> like_shape);  // [C] -> like

Var concat_channels(Var a, Var b);  // along axis 1
Var flatten2(Var a);                // [N, ...] -> [N, rest]
Var reshape(Var a, std::vector<std::int64_t> shape);  // same numel
Var detach(Var a);                  // constant copy of a's value

/// Dual number for forward-tangent evaluation: primal and tangent are both
/// graph nodes, so reverse AD through a tangent expression yields exact
/// mixed second derivatives (used by the gradient-penalty term).
struct DualVar {
  Var p;  // primal
  Var t;  // tangent
};

}  // namespace adreg
