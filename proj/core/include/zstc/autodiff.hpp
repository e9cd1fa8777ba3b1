#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include <Eigen/Dense>

namespace zstc {

using Matrix = Eigen::MatrixXd;
using RowVector = Eigen::RowVectorXd;

namespace ad {

/// Handle to a node on a Tape. Only meaningful for the tape that created it.
struct Var {
  std::size_t index = static_cast<std::size_t>(-1);
};

/// Reverse-mode tape. Nodes are appended in evaluation order, so a single
/// reverse sweep visits every node after all of its consumers.
class Tape {
 public:
  Var constant(Matrix value);
  /// Leaf that reads an externally owned parameter matrix without copying it.
  /// The matrix must outlive the tape.
  Var param(const Matrix& p);

  const Matrix& value(Var v) const {
    const Node& n = nodes_[v.index];
    return n.param != nullptr ? *n.param : n.value;
  }
  double scalar(Var v) const { return value(v)(0, 0); }
  const Matrix& grad(Var v) const { return nodes_[v.index].grad; }
  std::size_t size() const { return nodes_.size(); }

  /// Seeds d(root)/d(root) = 1 and propagates. root must be 1x1.
  void backward(Var root);

  /// Calls fn(parameter, gradient) for every parameter leaf that received a
  /// gradient. A parameter read twice is reported twice.
  template <typename F>
  void for_each_param_grad(F&& fn) const {
    for (const Node& n : nodes_)
      if (n.param != nullptr && n.grad.size() != 0) fn(*n.param, n.grad);
  }

  // Internal: used by the op implementations.
  Var push(Matrix value, std::function<void(Tape&, std::size_t)> backward);
  Matrix& grad_mut(Var v);

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    std::function<void(Tape&, std::size_t)> backward;
    const Matrix* param = nullptr;
  };
  std::vector<Node> nodes_;
};

// Elementwise and linear algebra.
Var add(Tape& t, Var a, Var b);
Var sub(Tape& t, Var a, Var b);
/// a (r x c) plus a row vector b (1 x c) broadcast over rows.
Var add_row(Tape& t, Var a, Var b);
Var matmul(Tape& t, Var a, Var b);
/// a * b^T
Var matmul_bt(Tape& t, Var a, Var b);
Var scale(Tape& t, Var a, double s);
Var gelu(Tape& t, Var a);

// Shape manipulation.
Var gather_rows(Tape& t, Var table, std::span<const std::size_t> rows);
Var slice_rows(Tape& t, Var a, std::size_t begin, std::size_t count);
Var slice_cols(Tape& t, Var a, std::size_t begin, std::size_t count);
Var concat_cols(Tape& t, std::span<const Var> parts);

// Normalization and attention helpers.
/// Row-wise softmax. With causal=true, entry (i, j) for j > i is masked out.
Var softmax_rows(Tape& t, Var a, bool causal);
/// Row-wise layer normalization with affine gamma/beta (both 1 x c).
Var layer_norm(Tape& t, Var x, Var gamma, Var beta, double eps = 1e-5);

// Pooling.
/// Weighted row average: sum_i w_i x_i / sum_i w_i. Weights act as a padding mask.
Var masked_mean_rows(Tape& t, Var x, std::span<const double> weights);
Var row(Tape& t, Var x, std::size_t i);

// Losses and scalars. All return 1x1 nodes.
/// Sum over rows of -log softmax(logits)[row, target[row]].
Var cross_entropy(Tape& t, Var logits, std::span<const std::size_t> targets);
/// Cosine similarity between two 1 x c vectors. Zero-norm input yields 0 with zero gradient.
Var cosine(Tape& t, Var a, Var b);
Var squared_error(Tape& t, Var a, double target);
Var sum_scalars(Tape& t, std::span<const Var> parts);

}  // namespace ad
}  // namespace zstc
