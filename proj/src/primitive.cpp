#include "primseg/primitive.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace primseg {

std::string to_string(PrimitiveKind kind) { return kind == PrimitiveKind::Cuboid ? "cuboid" : "ellipsoid"; }

PrimitiveKind primitive_kind_from_string(const std::string& s) {
  if (s == "ellipsoid") return PrimitiveKind::Ellipsoid;
  if (s == "cuboid") return PrimitiveKind::Cuboid;
  throw std::invalid_argument("unknown primitive kind '" + s + "'");
}

PrimitiveParams PrimitiveParams::sphere(std::array<double, 3> center, double radius) {
  return axis_aligned(PrimitiveKind::Ellipsoid, center, {radius, radius, radius});
}

PrimitiveParams PrimitiveParams::axis_aligned(PrimitiveKind kind, std::array<double, 3> center,
                                              std::array<double, 3> semi_axes) {
  PrimitiveParams p;
  p.kind = kind;
  p.center = center;
  p.semi_axes = semi_axes;
  return p;
}

double PrimitiveParams::max_axis() const { return std::max({semi_axes[0], semi_axes[1], semi_axes[2]}); }

double ellipsoid_area(const std::array<double, 3>& s) {
  constexpr double p = 1.6075;
  const double ap = std::pow(s[0], p), bp = std::pow(s[1], p), cp = std::pow(s[2], p);
  return 4.0 * std::numbers::pi * std::pow((ap * bp + ap * cp + bp * cp) / 3.0, 1.0 / p);
}

double PrimitiveParams::surface_area() const {
  const auto& s = semi_axes;
  if (kind == PrimitiveKind::Cuboid) return 8.0 * (s[0] * s[1] + s[1] * s[2] + s[0] * s[2]);
  return ellipsoid_area(s);
}

double PrimitiveParams::volume() const {
  const double prod = semi_axes[0] * semi_axes[1] * semi_axes[2];
  return kind == PrimitiveKind::Cuboid ? 8.0 * prod : 4.0 / 3.0 * std::numbers::pi * prod;
}

void PrimitiveParams::validate() const {
  for (double s : semi_axes)
    if (!(s > 0.0) || !std::isfinite(s)) throw std::invalid_argument("primitive semi-axes must be positive");
  for (double c : center)
    if (!std::isfinite(c)) throw std::invalid_argument("primitive center must be finite");
  if (rotation.rows() != 3 || rotation.cols() != 3 || !rotation.all_finite()) {
    throw std::invalid_argument("primitive rotation must be a finite 3x3 matrix");
  }
}

}  // namespace primseg
