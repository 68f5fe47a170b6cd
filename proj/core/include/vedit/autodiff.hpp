// Reverse-mode automatic differentiation over dense row-major matrices.
//
// Every backward rule is written in terms of the same differentiable ops, so
// gradients computed with `create_graph = true` are themselves part of the
// graph and can be differentiated again. The meta-training path relies on
// this to differentiate through an unrolled inner optimization loop.
#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

namespace vedit::ad {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Index = Eigen::Index;

class Var;

/// Computes input gradients from the output gradient. `out` is the op's own
/// result (passed in so closures never capture it and form cycles). Entries
/// of the returned vector may be left undefined where `needs[i]` is false.
using BackwardFn =
    std::function<std::vector<Var>(const Var& grad, const Var& out, const std::vector<char>& needs)>;

struct Node {
  explicit Node(Matrix v);
  ~Node();
  Node(const Node&) = delete;
  Node& operator=(const Node&) = delete;

  Matrix value;
  bool requires_grad = false;
  std::vector<Var> inputs;
  BackwardFn backward;
  std::size_t tracked_bytes = 0;
};

class Var {
 public:
  Var() = default;

  static Var constant(Matrix m);
  /// Leaf that gradients can be taken with respect to.
  static Var leaf(Matrix m);
  static Var scalar(double v);
  static Var zeros(Index rows, Index cols);

  bool defined() const { return node_ != nullptr; }
  const Matrix& value() const { return node_->value; }
  /// In-place access for optimizers updating leaves they own exclusively.
  Matrix& mutable_value() { return node_->value; }
  Index rows() const { return node_->value.rows(); }
  Index cols() const { return node_->value.cols(); }
  Index size() const { return node_->value.size(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  double item() const;
  Var detach() const { return constant(value()); }
  const Node* id() const { return node_.get(); }
  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  friend Var make_op(Matrix, std::vector<Var>, BackwardFn);
  friend std::vector<Var> grad(const Var&, const std::vector<Var>&, bool);
  explicit Var(std::shared_ptr<Node> n) : node_(std::move(n)) {}
  std::shared_ptr<Node> node_;
};

/// Builds an op result; records the graph only when grad mode is on and some
/// input requires a gradient.
Var make_op(Matrix value, std::vector<Var> inputs, BackwardFn backward);

class GradMode {
 public:
  static bool enabled();
  static void set(bool on);
};

class GradModeGuard {
 public:
  explicit GradModeGuard(bool on) : prev_(GradMode::enabled()) { GradMode::set(on); }
  ~GradModeGuard() { GradMode::set(prev_); }
  GradModeGuard(const GradModeGuard&) = delete;
  GradModeGuard& operator=(const GradModeGuard&) = delete;

 private:
  bool prev_;
};

struct NoGradGuard : GradModeGuard {
  NoGradGuard() : GradModeGuard(false) {}
};

/// Live/peak bytes held by graph node values on the calling thread.
struct MemoryStats {
  std::int64_t live_bytes = 0;
  std::int64_t peak_bytes = 0;
};
MemoryStats memory_stats();
/// Resets the peak to the current live value.
void reset_peak_memory();

/// Gradients of a 1x1 `output` with respect to each of `wrt`. Inputs the
/// output does not depend on receive zeros. With `create_graph` the returned
/// gradients carry their own graph.
std::vector<Var> grad(const Var& output, const std::vector<Var>& wrt, bool create_graph = false);

// Elementwise, equal shapes.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var neg(const Var& a);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
Var exp(const Var& a);
Var log(const Var& a);
Var tanh(const Var& a);
Var sigmoid(const Var& a);
Var rsqrt(const Var& a);
Var square(const Var& a);

// Products. matmul_nt(a, b) = a * b^T, matmul_tn(a, b) = a^T * b.
Var matmul(const Var& a, const Var& b);
Var matmul_nt(const Var& a, const Var& b);
Var matmul_tn(const Var& a, const Var& b);
Var transpose(const Var& a);
Var reshape(const Var& a, Index rows, Index cols);

// Broadcasting: `row` is 1 x cols, `col` is rows x 1.
Var add_row(const Var& a, const Var& row);
Var mul_row(const Var& a, const Var& row);
Var add_col(const Var& a, const Var& col);
Var mul_col(const Var& a, const Var& col);
Var broadcast_cols(const Var& col, Index cols);
Var broadcast_rows(const Var& row, Index rows);

// Reductions.
Var row_sum(const Var& a);
Var col_sum(const Var& a);
Var sum(const Var& a);

Var softmax_rows(const Var& a);
Var log_softmax_rows(const Var& a);

// Slicing and assembly.
Var slice_rows(const Var& a, Index start, Index count);
Var slice_cols(const Var& a, Index start, Index count);
Var pad_rows(const Var& a, Index start, Index total);
Var pad_cols(const Var& a, Index start, Index total);
Var concat_rows(const std::vector<Var>& parts);
Var concat_cols(const std::vector<Var>& parts);
/// out row i = a row idx[i]; indices may repeat.
Var gather_rows(const Var& a, std::vector<Index> idx);
/// out (total rows) with a row i added into row idx[i].
Var scatter_rows(const Var& a, std::vector<Index> idx, Index total);

// Block-batched products. `a` and `b` are each split into `blocks` equal
// row blocks and the product is taken block by block, results stacked.
Var bmm(const Var& a, const Var& b, Index blocks);     // a_s b_s
Var bmm_nt(const Var& a, const Var& b, Index blocks);  // a_s b_s^T
Var bmm_tn(const Var& a, const Var& b, Index blocks);  // a_s^T b_s

}  // namespace vedit::ad
