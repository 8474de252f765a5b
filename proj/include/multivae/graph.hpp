#pragma once

#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "multivae/tensor.hpp"

namespace multivae::ad {

class Graph;

/// Lightweight handle to a node owned by a Graph. Valid until Graph::clear().
class Var {
 public:
  Var() = default;
  Var(Graph* g, Index id) : g_(g), id_(id) {}

  bool valid() const { return g_ != nullptr; }
  Index id() const { return id_; }
  Graph* graph() const { return g_; }

  const Tensor& value() const;
  const Tensor& grad() const;
  const std::vector<Index>& shape() const { return value().shape(); }
  double item() const { return value().item(); }

 private:
  Graph* g_ = nullptr;
  Index id_ = -1;
};

/// Reverse-mode tape. Nodes are appended in topological order; backward()
/// sweeps them in reverse. One Graph per training step; clear() recycles
/// node storage.
class Graph {
 public:
  struct Node {
    Tensor value;
    Tensor grad;  // allocated lazily, same shape as value
    bool requires_grad = false;
    std::function<void(Graph&, Node&)> backward;  // empty for leaves
  };

  // ---- leaves ----
  Var input(Tensor value, bool requires_grad = false);
  Var constant(Tensor value) { return input(std::move(value), false); }
  Var constant_scalar(double v) { return input(Tensor::scalar(v), false); }

  // ---- elementwise (same shape) ----
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var div(Var a, Var b);
  Var add_scalar(Var a, double c);
  Var scale(Var a, double c);
  Var neg(Var a) { return scale(a, -1.0); }
  Var exp(Var a);
  Var log(Var a);
  Var tanh(Var a);
  Var sigmoid(Var a);
  Var relu(Var a);
  Var clamp(Var a, double lo, double hi);

  // ---- gradient plumbing ----
  /// Identity forward; blocks gradient flow into `a`.
  Var stop_gradient(Var a);
  /// Identity forward; backward multiplies the incoming gradient elementwise
  /// by the constant `factor` (same shape as `a`, or a scalar).
  Var scale_gradient(Var a, Tensor factor);
  /// As scale_gradient, but the factor is read at backward time, so it may be
  /// filled in after the forward pass (importance weights).
  Var scale_gradient_deferred(Var a, std::shared_ptr<Tensor> factor);

  // ---- reductions / combinations ----
  Var sum(Var a);
  Var mean(Var a);
  Var add_n(std::span<const Var> xs);
  /// Scalar dot of vector `a` with a constant weight vector.
  Var weighted_sum(Var a, Tensor weights);
  Var stack_scalars(std::span<const Var> xs);
  Var logsumexp_vec(Var a);

  // ---- shape ----
  Var reshape(Var a, std::vector<Index> shape);
  Var slice_rows(Var a, Index r0, Index nrows);
  Var slice_cols(Var a, Index c0, Index ncols);
  Var concat_rows(std::span<const Var> xs);
  Var concat_cols(std::span<const Var> xs);

  // ---- linear algebra ----
  Var matmul(Var a, Var b);     // [m,k] x [k,n]
  Var matmul_nt(Var a, Var b);  // [m,k] x [n,k]^T -> [m,n]
  Var add_row(Var a, Var row);  // broadcast row vector over rows of a

  // ---- neural-net fused ops ----
  Var softmax_rows(Var a);
  Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-5);
  /// x: [B,H,W,C], w: [kh,kw,C,OC], b: [OC]; stride s, zero padding p.
  Var conv2d(Var x, Var w, Var b, Index stride, Index pad);
  Var upsample2x(Var x);  // nearest neighbour, [B,H,W,C] -> [B,2H,2W,C]
  /// table: [V,d]; returns [n,d] rows gathered by index.
  Var embedding(Var table, const std::vector<Index>& indices);
  /// Mean (or sum) of -log softmax(logits)[t, target_t] over rows with mask true.
  Var cross_entropy_rows(Var logits, const std::vector<Index>& targets,
                         const std::vector<bool>& mask, bool mean_reduce = true);

  // ---- engine ----
  void backward(Var root);
  void clear();
  std::size_t size() const { return nodes_.size(); }
  Node& node(Index id) { return nodes_[static_cast<std::size_t>(id)]; }
  const Node& node(Index id) const { return nodes_[static_cast<std::size_t>(id)]; }

  Tensor& grad_buffer(Index id);  // lazily allocated, zero-filled

 private:
  Var emplace(Tensor value, bool requires_grad, std::function<void(Graph&, Node&)> bw);
  bool any_grad(std::span<const Var> xs) const;
  bool any_grad(Var a, Var b) const {
    return node(a.id()).requires_grad || node(b.id()).requires_grad;
  }
  bool any_grad(Var a, Var b, Var c) const {
    return any_grad(a, b) || node(c.id()).requires_grad;
  }
  std::vector<Node> nodes_;
};

// Convenience free helpers used across modules.
inline Var operator+(Var a, Var b) { return a.graph()->add(a, b); }
inline Var operator-(Var a, Var b) { return a.graph()->sub(a, b); }
inline Var operator*(Var a, Var b) { return a.graph()->mul(a, b); }

}  // namespace multivae::ad
