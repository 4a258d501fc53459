#pragma once

#include <array>
#include <string>

#include "primseg/tensor.hpp"

namespace primseg {

enum class PrimitiveKind { Ellipsoid, Cuboid };

std::string to_string(PrimitiveKind kind);
PrimitiveKind primitive_kind_from_string(const std::string& s);

/// A fitted solid. Columns of `rotation` are the principal axes; for cuboids
/// `semi_axes` holds half-extents.
struct PrimitiveParams {
  PrimitiveKind kind = PrimitiveKind::Ellipsoid;
  std::array<double, 3> center{};
  Tensor rotation = Tensor::identity(3);
  std::array<double, 3> semi_axes{1.0, 1.0, 1.0};

  static PrimitiveParams sphere(std::array<double, 3> center, double radius);
  static PrimitiveParams axis_aligned(PrimitiveKind kind, std::array<double, 3> center,
                                      std::array<double, 3> semi_axes);

  double max_axis() const;
  /// Ellipsoids use Knud Thomsen's approximation (p = 1.6075); cuboids are exact.
  double surface_area() const;
  double volume() const;
  /// Throws std::invalid_argument unless axes are positive/finite and rotation is 3x3.
  void validate() const;
};

/// Knud Thomsen surface-area approximation of an ellipsoid.
double ellipsoid_area(const std::array<double, 3>& axes);

}  // namespace primseg
