#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "chamae/tensor.hpp"

namespace chamae::ad {

/// Handle to a node in a Graph. Cheap to copy; only meaningful for the graph
/// that produced it.
struct Var {
  std::int32_t id = -1;
  bool valid() const { return id >= 0; }
};

/// Operations the backend must provide. Checked once at startup by
/// require_capabilities(); a missing entry is a configuration error.
std::vector<std::string> required_ops();
std::vector<std::string> provided_ops();
void require_capabilities();

/// Define-by-run tape over rank-2 tensors. Every op records its value
/// eagerly and a closure that pushes the output gradient to its inputs.
/// One graph per sample; graphs are not shared between threads.
template <typename T>
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  // Leaves.
  Var constant(Tensor<T> value);
  Var variable(Tensor<T> value);
  // Borrows `external` (must outlive the graph); no copy is made.
  Var leaf(const Tensor<T>& external, bool requires_grad);

  const Tensor<T>& value(Var v) const;
  // Gradient accumulated by backward(); empty tensor if none reached v.
  const Tensor<T>& grad(Var v) const;
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }
  std::size_t size() const { return nodes_.size(); }
  T scalar(Var v) const;

  // Linear algebra.
  Var matmul(Var a, Var b, bool transpose_b = false);
  Var linear(Var x, Var w, Var bias);  // x * w (+ bias row), bias may be invalid

  // Elementwise; shapes must match exactly.
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var add_row(Var a, Var row);  // broadcast a 1 x n row over every row of a
  Var scale(Var a, T s);
  Var add_scalar(Var a, T s);
  Var gelu(Var a);
  Var sigmoid(Var a);
  Var abs(Var a);

  Var layer_norm(Var x, Var gamma, Var beta, T eps = T(1e-6));
  Var l2_normalize_rows(Var a, T eps = T(1e-12));

  // Multi-head scaled dot-product attention. q is mq x d, k and v are mk x d.
  // When probs_out is set it receives the heads x mq x mk attention weights.
  Var attention(Var q, Var k, Var v, std::size_t heads, Tensor<T>* probs_out = nullptr);

  // Row plumbing.
  Var gather_rows(Var src, std::vector<std::size_t> index);
  Var concat_rows(std::span<const Var> parts);
  Var slice_rows(Var src, std::size_t begin, std::size_t count);

  // Reductions.
  Var sum(Var a);        // 1 x 1
  Var mean_rows(Var a);  // 1 x n

  // |2-D DFT| of each row, rows interpreted as p x p blocks.
  Var dft_amplitude(Var a, std::size_t p);
  // Softmax cross-entropy of a 1 x K logit row against `label`.
  Var cross_entropy(Var logits, std::size_t label);

  // Reverse sweep from a 1 x 1 node.
  void backward(Var loss);

 private:
  using Backward = std::function<void(Graph&, std::size_t)>;

  struct Node {
    Tensor<T> value;
    const Tensor<T>* external = nullptr;
    Tensor<T> grad;
    bool requires_grad = false;
    Backward backward;
  };

  Var push(Tensor<T> value, bool requires_grad, Backward backward);
  Tensor<T>& grad_ref(std::size_t id);
  const Tensor<T>& out_grad(std::size_t id) const { return nodes_[id].grad; }
  bool needs(Var v) const { return nodes_[v.id].requires_grad; }
  const Node& node(Var v) const;

  std::vector<Node> nodes_;
};

extern template class Graph<float>;
extern template class Graph<double>;

}  // namespace chamae::ad
