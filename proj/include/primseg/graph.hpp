#pragma once

// Reverse-mode automatic differentiation over 2-D tensors.
//
// Graphs are define-by-run: every op evaluates its forward value when it is
// recorded, and backward() replays the records in reverse order. Node ids
// are assigned in creation order, so the record is topologically sorted by
// construction.

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "primseg/svd3.hpp"
#include "primseg/tensor.hpp"

namespace primseg {

class Graph;

/// Handle to a node of a Graph.
struct Var {
  Graph* graph = nullptr;
  int id = -1;

  bool valid() const { return graph != nullptr && id >= 0; }
  const Tensor& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
};

using Gradients = std::map<std::string, Tensor>;

class Graph {
 public:
  struct Options {
    /// Raise NumericError as soon as a forward value or gradient is non-finite.
    bool check_finite = false;
  };

  using BackwardFn = std::function<void(Graph&, const Tensor& out_grad)>;

  Graph() = default;
  explicit Graph(Options opts) : opts_(opts) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  /// Differentiable leaf. Its gradient is reported under `name` by backward().
  Var input(std::string name, Tensor value);
  /// Leaf excluded from differentiation.
  Var constant(Tensor value);

  const Tensor& value(Var v) const;
  bool requires_grad(Var v) const;
  std::size_t size() const { return nodes_.size(); }
  const std::string& op_name(Var v) const;

  /// Backpropagates from a scalar root. Returns the gradient of every named
  /// input; inputs that do not influence the root get exact zeros.
  Gradients backward(Var root);
  /// Gradient of any node after backward(); zeros if it was not reached.
  Tensor grad(Var v) const;

  // Op-author interface.
  Var record(std::string op, Tensor value, std::vector<Var> inputs, BackwardFn fn);
  /// Adds `g` into the pending gradient of `v` (no-op for constants).
  void accumulate(Var v, const Tensor& g);

 private:
  struct Node {
    std::string op;
    std::string name;
    Tensor value;
    Tensor grad;
    std::vector<int> inputs;
    BackwardFn backward;
    bool requires_grad = false;
  };

  void check_owned(Var v) const;

  Options opts_;
  std::vector<Node> nodes_;
  std::vector<int> named_inputs_;
};

// ---- elementwise (operands must have identical shapes) ----
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);
Var neg(Var a);
Var scale(Var a, double k);
Var add_scalar(Var a, double k);
Var square(Var a);
Var exp(Var a);
Var log(Var a);
Var sqrt(Var a);
Var abs(Var a);
Var tanh(Var a);
/// Clamps into [lo, hi]; gradient passes only where the input is inside the range.
Var clamp(Var a, double lo, double hi);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator/(Var a, Var b) { return div(a, b); }

// ---- linear algebra / shape ----
Var matmul(Var a, Var b);
Var transpose(Var a);
/// 1xC -> NxC by repeating the row.
Var broadcast_rows(Var row, std::size_t n);
/// Nx1 -> NxC by repeating the column.
Var broadcast_cols(Var col, std::size_t c);
/// 1x1 -> RxC.
Var expand(Var s, std::size_t rows, std::size_t cols);
Var concat_cols(const std::vector<Var>& parts);
Var concat_rows(const std::vector<Var>& parts);
Var slice_cols(Var a, std::size_t begin, std::size_t end);
Var slice_rows(Var a, std::size_t begin, std::size_t end);
/// Row i of the output is column idx[i] of row i of `a` (Nx1 result).
Var gather_cols(Var a, const std::vector<std::size_t>& idx);
Var gather_rows(Var a, const std::vector<std::size_t>& idx);
/// Same value, no gradient path.
Var stop_gradient(Var a);

// ---- reductions ----
Var sum(Var a);
Var mean(Var a);
/// NxC -> Nx1.
Var sum_rows(Var a);
/// NxC -> 1xC.
Var sum_cols(Var a);
/// NxC -> Nx1 row minimum. Gradient flows only to the (first) argmin.
Var min_rows(Var a);
/// NxC -> Nx1 row maximum, straight-through to the (first) argmax.
Var max_rows(Var a);
/// NxC -> 1xC column maximum (global max-pool over points).
Var max_cols(Var a);

// ---- composite / specialised ----
/// Row-wise softmax with max subtraction.
Var softmax_rows(Var a);
/// Divides every row by its Euclidean norm.
Var normalize_rows(Var a);

/// Singular values and right singular vectors of a 3x3 node. U is returned as
/// a plain value and does not take part in differentiation.
struct Svd3Vars {
  Var s;  ///< 1x3, descending
  Var v;  ///< 3x3, columns are right singular vectors
  Svd3Result result;
};
Svd3Vars svd3(Var m);

/// Approximate ellipsoid signed distance k1 (k1 - 1) / k2 for local points
/// p (Px3) and semi-axes s (1x3). Returns Px1.
Var ellipsoid_sdf(Var p, Var s);
/// Exact box signed distance for local points p (Px3), half-extents s (1x3).
Var cuboid_sdf(Var p, Var s);
/// For each row of `samples` (Px3) the squared distance to the nearest row of
/// `targets` (constant Nx3). Px1, straight-through to the nearest target.
Var min_sqdist(Var samples, const Tensor& targets);

/// Nearest-neighbour search used by min_sqdist, exposed for reuse.
std::vector<std::size_t> nearest_rows(const Tensor& queries, const Tensor& targets,
                                      std::vector<double>* sqdist = nullptr);

}  // namespace primseg
