#pragma once

#include <functional>
#include <vector>

#include "gdiff/tensor.hpp"

namespace gdiff {

class Tape;

// Handle to a tape node. Cheap to copy; owns nothing.
struct Var {
  Tape* tape = nullptr;
  int id = -1;

  const Tensor& val() const;
  Tensor& grad() const;
};

// Reverse-mode tape, rebuilt per training step (define-by-run). Nodes are
// appended in execution order, which is already topological, so the backward
// sweep is a single reverse pass that visits each node exactly once. Each
// node's backward closure accumulates into the gradients of the nodes it was
// built from.
class Tape {
 public:
  // Backward closure: `self` is the id of the node being differentiated; the
  // closure reads t.grad(self) and accumulates into the operands' grads.
  using BackwardFn = std::function<void(Tape& t, int self)>;

  Var leaf(Tensor value);

  // Registers a computed node. The closure must add this node's gradient
  // contribution into its operands' grad tensors.
  Var make(Tensor value, BackwardFn backward);

  // Seeds d(root)/d(root) = 1 (root must be scalar) and sweeps the tape in
  // reverse creation order. Gradients of all earlier nodes are then available
  // through Var::grad().
  void backward(Var root);

  const Tensor& value(int id) const { return nodes_[static_cast<size_t>(id)].value; }
  Tensor& grad(int id) { return nodes_[static_cast<size_t>(id)].grad; }

  int size() const { return static_cast<int>(nodes_.size()); }
  void clear() { nodes_.clear(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
};

// Differentiable operations. All results are recorded on the operands' tape;
// mixing tapes is a caller bug and unchecked.
namespace ops {

Var add(Var a, Var b);                    // elementwise, same shape
Var mul(Var a, Var b);                    // elementwise, same shape
Var scale(Var a, double s);
Var matmul(Var a, Var b);                 // [m x k] * [k x n]
Var relu(Var x);
Var mean_all(Var x);                      // scalar mean over all entries

// X[r x c] combined with a length-c vector per row.
Var add_row_broadcast(Var x, Var b);
Var mul_row_broadcast(Var x, Var g);

// Adds pos[r mod L] to row r; pos is [L x c]. Used for positional tables.
Var add_positional(Var x, Var pos);

// Adds ctx[r / seg_len] to row r; ctx is [segments x c]. Used to inject one
// conditioning vector into every position of its sequence.
Var add_segment_broadcast(Var x, Var ctx, int seg_len);

// Row-wise zero-mean unit-variance normalization (no affine part; compose
// with mul/add_row_broadcast for gain and bias).
Var layer_norm_rows(Var x, double eps = 1e-5);

Var softmax_rows(Var x);

// out row i = table row indices[i]. Gradient scatter-adds into the table.
Var gather_rows(Var table, std::vector<int> indices);

// Horizontal concatenation of matrices with equal row counts.
Var concat_cols(const std::vector<Var>& xs);

// Mean over rows of -log softmax(logits_row)[target]; the standard stabilized
// form. Gradient is (softmax - onehot) / rows.
Var softmax_cross_entropy(Var logits, std::vector<int> targets);

// Multi-head self-attention over `batch` segments of `seq_len` rows each;
// q, k, v are [(batch*seq_len) x width] with width divisible by heads.
Var self_attention(Var q, Var k, Var v, int seq_len, int heads);

}  // namespace ops

}  // namespace gdiff
