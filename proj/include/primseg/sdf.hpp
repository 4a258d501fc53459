#pragma once

// Signed distances to primitives and differentiable surface sampling.

#include <array>
#include <cstdint>
#include <vector>

#include "primseg/graph.hpp"
#include "primseg/primitive.hpp"

namespace primseg {

using Vec3 = std::array<double, 3>;

/// p = V^T (x - mu).
Vec3 to_local(const Vec3& x, const PrimitiveParams& prim);
Vec3 to_world(const Vec3& p, const PrimitiveParams& prim);

double ellipsoid_sdf(const Vec3& p_local, const Vec3& semi_axes);
double cuboid_sdf(const Vec3& p_local, const Vec3& half_extents);
double signed_distance(const PrimitiveParams& prim, const Vec3& x_world);

/// Primitive parameters living on a Graph.
struct PrimitiveVars {
  PrimitiveKind kind = PrimitiveKind::Ellipsoid;
  Var center;     ///< 1x3
  Var rotation;   ///< 3x3
  Var semi_axes;  ///< 1x3

  PrimitiveParams params() const;
};

PrimitiveVars constant_primitive(Graph& g, const PrimitiveParams& prim);

/// (X - 1 mu) V for world points X (Px3).
Var to_local(Var x_world, const PrimitiveVars& prim);
/// Px1 signed distances of world points.
Var signed_distance(Var x_world, const PrimitiveVars& prim);

/// Frozen surface-sample parameters. Everything here is computed outside the
/// gradient graph; only the primitive parameters carry gradients when the
/// plan is realized.
struct SurfaceSamplePlan {
  std::vector<std::size_t> source_primitive;  ///< per sample
  std::vector<std::size_t> counts;            ///< per primitive
  Tensor params_uv;    ///< Px2: (u, v) for ellipsoids, in-face coordinates for cuboids
  Tensor unit_points;  ///< Px3: local point = semi_axes (elementwise) unit_point

  std::size_t size() const { return source_primitive.size(); }
};

/// Largest-remainder allocation of `total` proportional to `weights` (ties to lower index).
std::vector<std::size_t> allocate_counts(const std::vector<double>& weights, std::size_t total);

/// Unit-parameter directions of an ellipsoid point: (cos u sin v, sin u sin v, cos v).
Vec3 ellipsoid_unit_point(double u, double v);
/// Inverse parameterization of a local ellipsoid point; u in (-pi, pi], v in [0, pi].
std::array<double, 2> ellipsoid_uv(const Vec3& p_local, const Vec3& semi_axes);

/// Area-weighted uniform samples over the primitives' surfaces. Per-primitive
/// RNG streams are derived from seed XOR primitive index.
SurfaceSamplePlan plan_surface_samples(const std::vector<PrimitiveParams>& prims,
                                       std::size_t total, std::uint64_t seed);

/// World coordinates of the plan's samples, differentiable w.r.t. primitives.
Var realize_surface_samples(const std::vector<PrimitiveVars>& prims, const SurfaceSamplePlan& plan);
Tensor realize_surface_samples(const std::vector<PrimitiveParams>& prims, const SurfaceSamplePlan& plan);

struct SurfaceSampleBatch {
  SurfaceSamplePlan plan;
  Var points;  ///< Px3 world coordinates on the graph
};

SurfaceSampleBatch sample_surface(const std::vector<PrimitiveVars>& prims, std::size_t total,
                                  std::uint64_t seed);

/// Uniform samples strictly inside a primitive (world frame, plain values).
/// Throws NumericError when fewer than `count` are accepted in 100*count draws.
Tensor sample_inside(const PrimitiveParams& prim, std::size_t count, std::uint64_t seed,
                     double* acceptance_rate = nullptr);

}  // namespace primseg
