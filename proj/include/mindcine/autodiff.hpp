#pragma once

// Reverse-mode automatic differentiation over dense matrices.
//
// A Graph records every operation of one forward pass; Graph::backward walks
// the records in reverse creation order. Parameters live outside the graph and
// receive accumulated gradients when the graph they were bound into is
// back-propagated. Graphs are single-use and single-threaded.

#include "mindcine/common.hpp"

#include <deque>
#include <functional>
#include <string>
#include <vector>

namespace mindcine::ad {

/// Boolean mask; true marks an allowed (unmasked) cell.
using Mask = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;

  Parameter() = default;
  Parameter(std::string n, Matrix v) : name(std::move(n)), value(std::move(v)) {
    grad = Matrix::Zero(value.rows(), value.cols());
  }
  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
  Index size() const { return value.size(); }
};

class Graph;

class Var {
 public:
  Var() = default;
  Var(Graph* g, int id) : graph_(g), id_(id) {}

  const Matrix& value() const;
  const Matrix& grad() const;
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  double scalar() const;
  Graph* graph() const { return graph_; }
  int id() const { return id_; }
  bool valid() const { return graph_ != nullptr; }

 private:
  Graph* graph_ = nullptr;
  int id_ = -1;
};

class Graph {
 public:
  using Backward = std::function<void(Graph&, const Matrix& upstream)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  /// Non-differentiable leaf.
  Var constant(Matrix value);
  /// Differentiable leaf whose gradient stays in the graph (read via Var::grad).
  Var input(Matrix value);
  /// Leaf bound to a parameter. Reads p.value in place (p must outlive the
  /// graph and stay unchanged until backward) and accumulates into p.grad.
  Var param(Parameter& p);

  /// Records a derived node. `back` receives the upstream gradient of this node.
  Var record(Matrix value, const std::vector<Var>& parents, Backward back);

  /// Seeds d(loss)/d(loss) = 1 (loss must be 1x1) and back-propagates.
  void backward(const Var& loss);

  const Matrix& value(int id) const {
    const Node& n = nodes_[static_cast<size_t>(id)];
    return n.param ? n.param->value : n.value;
  }
  const Matrix& grad(int id) const;
  bool needs_grad(int id) const { return nodes_[static_cast<size_t>(id)].needs_grad; }
  /// Adds `delta` into the gradient buffer of node `id` (no-op for constants).
  void accumulate(int id, const Matrix& delta);
  /// Adds `delta` into the block of node `id`'s gradient starting at (row, col).
  void accumulate_block(int id, Index row, Index col, const Matrix& delta);
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool needs_grad = false;
    bool has_grad = false;
    Backward back;
    Parameter* param = nullptr;  // leaf reading and accumulating straight into a parameter
  };
  std::deque<Node> nodes_;
};

// ---- elementwise and linear algebra -------------------------------------------------------

Var matmul(const Var& a, const Var& b);
Var transpose(const Var& a);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var hadamard(const Var& a, const Var& b);
/// a (n x m) + row (1 x m), broadcast over rows.
Var add_row(const Var& a, const Var& row);
/// a (n x m) * row (1 x m), broadcast over rows.
Var mul_row(const Var& a, const Var& row);
/// a (n x m) + col (n x 1), broadcast over columns.
Var add_col(const Var& a, const Var& col);
Var scale(const Var& a, double s);
/// a times the 1x1 node s.
Var scale_by(const Var& a, const Var& s);
Var add_const(const Var& a, const Matrix& c);

Var exp(const Var& a);
Var gelu(const Var& a);
Var tanh(const Var& a);

Var sum(const Var& a);
Var mean(const Var& a);
Var sum_squares(const Var& a);

// ---- row-wise normalizations ----------------------------------------------------------------

/// Row softmax. Masked cells (mask == false) get exactly zero weight.
/// Throws NumericError if a row has no allowed cell.
Var row_softmax(const Var& a, const Mask* mask = nullptr);
Var row_log_softmax(const Var& a);
/// Zero-mean, unit-variance per row (no affine part).
Var layer_norm_rows(const Var& a, double eps = 1e-6);
Var l2_normalize_rows(const Var& a, double eps = 1e-12);

// ---- shape manipulation ---------------------------------------------------------------------

Var slice_cols(const Var& a, Index start, Index count);
Var slice_rows(const Var& a, Index start, Index count);
Var concat_cols(const std::vector<Var>& parts);
Var concat_rows(const std::vector<Var>& parts);
/// Row-major reshape; total size must be preserved.
Var reshape(const Var& a, Index rows, Index cols);
/// Repeats each row of a `times` times consecutively: (n x m) -> (n*times x m).
Var repeat_rows(const Var& a, Index times);

// ---- convolution helpers --------------------------------------------------------------------

/// Temporal convolution (kernel along time, valid padding, shared by all
/// channels) followed by a full-height spatial convolution across channels.
///   x:        (windows*channels) x width
///   temporal: filters x k
///   spatial:  out_maps x (filters*channels), column index f*channels + c
/// Output: out_maps x (windows*L), L = width - k + 1, with
///   out[g, n*L + s] = sum_{f,c} spatial[g, f*C + c] * sum_j temporal[f, j] * x[n*C + c, s + j].
/// Both stages are linear, so the channel mix is evaluated first (one GEMM).
Var temporal_spatial_conv(const Var& x, const Var& temporal, const Var& spatial, Index channels);

/// Non-overlapping mean pooling along columns inside groups of `group` columns.
/// a: rows x (groups*group) -> rows x (groups*(group/pool)); the remainder of each group is dropped.
Var avg_pool_cols(const Var& a, Index group, Index pool);

}  // namespace mindcine::ad
