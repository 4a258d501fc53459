#pragma once

#include <array>

#include "primseg/tensor.hpp"

namespace primseg {

/// Thin SVD of a 3x3 matrix, m = u * diag(s) * v^T.
struct Svd3Result {
  Tensor u;                  ///< 3x3 orthogonal
  std::array<double, 3> s{};  ///< descending, non-negative
  Tensor v;                  ///< 3x3 orthogonal; each column's largest-magnitude entry is positive

  double condition_number() const;
};

/// Stabilization constant of the singular-value gap in svd3_backward.
inline constexpr double kSvdGapEpsilon = 1e-6;

/// One-sided Jacobi SVD. Throws NumericError on non-finite input.
Svd3Result svd3(const Tensor& m);

/// Gradient w.r.t. the input matrix given cotangents of s (1x3) and v (3x3),
/// assuming the loss does not depend on u:
///   dM = U [diag(dS) + 2 S (K^T o (V^T dV))_sym] V^T
/// with K_ij = sign(s_i - s_j) / ((s_i + s_j) max(|s_i - s_j|, eps)), K_ii = 0.
Tensor svd3_backward(const Svd3Result& res, const Tensor& dL_dS, const Tensor& dL_dV,
                     double eps = kSvdGapEpsilon);

}  // namespace primseg
