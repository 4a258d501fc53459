#pragma once

// Closed-form weighted ellipsoid fitting (SVD of the weighted covariance) and
// the Khachiyan minimum-volume enclosing ellipsoid baseline.

#include <cmath>
#include <optional>
#include <span>
#include <vector>

#include "primseg/graph.hpp"
#include "primseg/primitive.hpp"
#include "primseg/sdf.hpp"

namespace primseg {

struct FitConfig {
  double kappa = std::sqrt(3.0) / 2.0;
  /// Clusters whose total weight is below this fraction of N are dropped.
  double min_effective_weight = 1e-3;
  /// sigma_max / sigma_min above this disables backward through the cluster.
  double condition_cutoff = 1e5;
};

/// Singular values are floored here before the square root.
inline constexpr double kSingularValueFloor = 1e-8;

struct FitResult {
  PrimitiveParams params;
  PrimitiveVars vars;  ///< constants when backward is disabled
  bool backward_enabled = true;
  double effective_weight = 0.0;
  double condition_number = 0.0;
  std::size_t cluster = 0;  ///< source column of the membership matrix
};

/// Weighted mean / covariance fit. x: N x 3, w: N x 1 non-negative.
/// `force_backward` overrides the cutoff decision (used to replay a frozen run).
FitResult fit_ellipsoid(Var x, Var w, const FitConfig& cfg = {},
                        std::optional<bool> force_backward = std::nullopt);
/// Forward-only convenience.
PrimitiveParams fit_ellipsoid(const Tensor& x, std::span<const double> w, const FitConfig& cfg = {});

PrimitiveParams ellipsoid_to_cuboid(const PrimitiveParams& p);
PrimitiveVars ellipsoid_to_cuboid(const PrimitiveVars& p);

/// One fit per membership column, skipping columns with total weight below
/// min_effective_weight * N. Throws UnfittableShape if nothing survives.
/// `keep` (if given) replaces the weight-threshold decision with a fixed
/// column list, and `backward` replaces each kept fit's cutoff decision.
class UnfittableShape : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
std::vector<FitResult> fit_all(Var x, Var w, const FitConfig& cfg = {},
                               const std::vector<std::size_t>* keep = nullptr,
                               const std::vector<bool>* backward = nullptr);

/// Khachiyan minimum-volume enclosing ellipsoid. Stops when every lifted point
/// satisfies q^T X^-1 q <= (1 + tolerance)(d + 1), then rescales so the
/// farthest point lies on the boundary.
PrimitiveParams mve_fit(const Tensor& x, double tolerance = 1e-3, std::size_t max_iterations = 10000);

}  // namespace primseg
