#include "primseg/sdf.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "primseg/rng.hpp"

namespace primseg {

Vec3 to_local(const Vec3& x, const PrimitiveParams& prim) {
  Vec3 d{x[0] - prim.center[0], x[1] - prim.center[1], x[2] - prim.center[2]};
  Vec3 p{};
  for (std::size_t j = 0; j < 3; ++j)
    for (std::size_t k = 0; k < 3; ++k) p[j] += prim.rotation(k, j) * d[k];
  return p;
}

Vec3 to_world(const Vec3& p, const PrimitiveParams& prim) {
  Vec3 x = prim.center;
  for (std::size_t k = 0; k < 3; ++k)
    for (std::size_t j = 0; j < 3; ++j) x[k] += prim.rotation(k, j) * p[j];
  return x;
}

double ellipsoid_sdf(const Vec3& p, const Vec3& s) {
  double a = 0.0, b = 0.0;
  for (std::size_t k = 0; k < 3; ++k) {
    const double t = p[k] / s[k];
    a += t * t;
    b += (t / s[k]) * (t / s[k]);
  }
  const double k1 = std::sqrt(a);
  if (k1 < 1e-6) return -std::min({s[0], s[1], s[2]});
  const double k2 = std::max(std::sqrt(b), 1e-12);
  return k1 * (k1 - 1.0) / k2;
}

double cuboid_sdf(const Vec3& p, const Vec3& s) {
  double outside = 0.0;
  double qmax = -1e300;
  for (std::size_t k = 0; k < 3; ++k) {
    const double q = std::abs(p[k]) - s[k];
    if (q > 0.0) outside += q * q;
    qmax = std::max(qmax, q);
  }
  return std::sqrt(outside) + std::min(qmax, 0.0);
}

double signed_distance(const PrimitiveParams& prim, const Vec3& x) {
  const Vec3 p = to_local(x, prim);
  return prim.kind == PrimitiveKind::Cuboid ? cuboid_sdf(p, prim.semi_axes) : ellipsoid_sdf(p, prim.semi_axes);
}

PrimitiveParams PrimitiveVars::params() const {
  PrimitiveParams p;
  p.kind = kind;
  const Tensor& c = center.value();
  const Tensor& s = semi_axes.value();
  for (std::size_t k = 0; k < 3; ++k) {
    p.center[k] = c[k];
    p.semi_axes[k] = s[k];
  }
  p.rotation = rotation.value();
  return p;
}

PrimitiveVars constant_primitive(Graph& g, const PrimitiveParams& prim) {
  return PrimitiveVars{prim.kind, g.constant(Tensor::row_vector(prim.center)), g.constant(prim.rotation),
                       g.constant(Tensor::row_vector(prim.semi_axes))};
}

Var to_local(Var x_world, const PrimitiveVars& prim) {
  return matmul(x_world - broadcast_rows(prim.center, x_world.rows()), prim.rotation);
}

Var signed_distance(Var x_world, const PrimitiveVars& prim) {
  Var p = to_local(x_world, prim);
  return prim.kind == PrimitiveKind::Cuboid ? cuboid_sdf(p, prim.semi_axes) : ellipsoid_sdf(p, prim.semi_axes);
}

std::vector<std::size_t> allocate_counts(const std::vector<double>& weights, std::size_t total) {
  double sum = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw std::invalid_argument("allocation weights must be finite and >= 0");
    sum += w;
  }
  if (!(sum > 0.0)) throw std::invalid_argument("allocation weights sum to zero");
  std::vector<std::size_t> counts(weights.size());
  std::vector<double> rem(weights.size());
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const double exact = static_cast<double>(total) * weights[i] / sum;
    counts[i] = static_cast<std::size_t>(std::floor(exact));
    rem[i] = exact - static_cast<double>(counts[i]);
    assigned += counts[i];
  }
  std::vector<std::size_t> order(weights.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return rem[a] > rem[b]; });
  for (std::size_t i = 0; assigned < total; ++i, ++assigned) ++counts[order[i % order.size()]];
  return counts;
}

Vec3 ellipsoid_unit_point(double u, double v) {
  return {std::cos(u) * std::sin(v), std::sin(u) * std::sin(v), std::cos(v)};
}

std::array<double, 2> ellipsoid_uv(const Vec3& p, const Vec3& s) {
  const double v = std::acos(std::clamp(p[2] / s[2], -1.0, 1.0));
  double u = std::atan2(p[1] / s[1], p[0] / s[0]);
  if (u <= -std::numbers::pi) u = std::numbers::pi;
  return {u, v};
}

namespace {

// Rejection sampling in (u, v) with acceptance proportional to the surface element.
void sample_ellipsoid(const Vec3& s, std::size_t count, Rng& rng, std::vector<double>& uv,
                      std::vector<double>& unit) {
  const double a = s[0], b = s[1], c = s[2];
  const double jmax = std::max({a * b, a * c, b * c});
  std::size_t accepted = 0;
  while (accepted < count) {
    const double u = uniform(rng, -std::numbers::pi, std::numbers::pi);
    const double v = uniform(rng, 0.0, std::numbers::pi);
    const double cu = std::cos(u), su = std::sin(u), cv = std::cos(v), sv = std::sin(v);
    const double jac = sv * std::sqrt(b * b * c * c * cu * cu * sv * sv + a * a * c * c * su * su * sv * sv +
                                      a * a * b * b * cv * cv);
    if (uniform01(rng) * jmax >= jac) continue;
    uv.push_back(u);
    uv.push_back(v);
    const Vec3 d = ellipsoid_unit_point(u, v);
    unit.insert(unit.end(), d.begin(), d.end());
    ++accepted;
  }
}

// Face chosen proportionally to its area, then a uniform point on the face.
void sample_cuboid(const Vec3& s, std::size_t count, Rng& rng, std::vector<double>& uv,
                   std::vector<double>& unit) {
  const double areas[3] = {s[1] * s[2], s[0] * s[2], s[0] * s[1]};
  const double total = areas[0] + areas[1] + areas[2];
  for (std::size_t i = 0; i < count; ++i) {
    const double pick = uniform01(rng) * total;
    const std::size_t axis = pick < areas[0] ? 0 : (pick < areas[0] + areas[1] ? 1 : 2);
    const double side = uniform01(rng) < 0.5 ? -1.0 : 1.0;
    const double t1 = uniform(rng, -1.0, 1.0), t2 = uniform(rng, -1.0, 1.0);
    Vec3 d{};
    d[axis] = side;
    d[(axis + 1) % 3] = t1;
    d[(axis + 2) % 3] = t2;
    uv.push_back(t1);
    uv.push_back(t2);
    unit.insert(unit.end(), d.begin(), d.end());
  }
}

}  // namespace

SurfaceSamplePlan plan_surface_samples(const std::vector<PrimitiveParams>& prims, std::size_t total,
                                       std::uint64_t seed) {
  if (prims.empty()) throw std::invalid_argument("surface sampling needs at least one primitive");
  std::vector<double> areas;
  for (const auto& p : prims) {
    p.validate();
    areas.push_back(p.surface_area());
  }
  double area_sum = 0.0;
  for (double a : areas) area_sum += a;
  if (!(area_sum > 0.0)) throw std::invalid_argument("primitives have zero total surface area");

  SurfaceSamplePlan plan;
  plan.counts = allocate_counts(areas, total);
  std::vector<double> uv, unit;
  uv.reserve(2 * total);
  unit.reserve(3 * total);
  for (std::size_t m = 0; m < prims.size(); ++m) {
    Rng rng = make_rng(seed ^ static_cast<std::uint64_t>(m), "sampling");
    if (prims[m].kind == PrimitiveKind::Cuboid) {
      sample_cuboid(prims[m].semi_axes, plan.counts[m], rng, uv, unit);
    } else {
      sample_ellipsoid(prims[m].semi_axes, plan.counts[m], rng, uv, unit);
    }
    plan.source_primitive.insert(plan.source_primitive.end(), plan.counts[m], m);
  }
  plan.params_uv = Tensor(total, 2, std::move(uv));
  plan.unit_points = Tensor(total, 3, std::move(unit));
  return plan;
}

Var realize_surface_samples(const std::vector<PrimitiveVars>& prims, const SurfaceSamplePlan& plan) {
  if (prims.size() != plan.counts.size()) throw std::invalid_argument("plan/primitive count mismatch");
  Graph& g = *prims.front().center.graph;
  std::vector<Var> parts;
  std::size_t offset = 0;
  for (std::size_t m = 0; m < prims.size(); ++m) {
    const std::size_t c = plan.counts[m];
    if (c == 0) continue;
    Tensor unit(c, 3, std::vector<double>(plan.unit_points.flat().begin() + 3 * offset,
                                           plan.unit_points.flat().begin() + 3 * (offset + c)));
    offset += c;
    Var local = g.constant(std::move(unit)) * broadcast_rows(prims[m].semi_axes, c);
    parts.push_back(matmul(local, transpose(prims[m].rotation)) + broadcast_rows(prims[m].center, c));
  }
  if (parts.empty()) throw std::invalid_argument("surface sample plan is empty");
  return parts.size() == 1 ? parts.front() : concat_rows(parts);
}

Tensor realize_surface_samples(const std::vector<PrimitiveParams>& prims, const SurfaceSamplePlan& plan) {
  Tensor out(plan.size(), 3);
  for (std::size_t i = 0; i < plan.size(); ++i) {
    const PrimitiveParams& p = prims.at(plan.source_primitive[i]);
    Vec3 local{};
    for (std::size_t k = 0; k < 3; ++k) local[k] = p.semi_axes[k] * plan.unit_points(i, k);
    const Vec3 w = to_world(local, p);
    for (std::size_t k = 0; k < 3; ++k) out(i, k) = w[k];
  }
  return out;
}

SurfaceSampleBatch sample_surface(const std::vector<PrimitiveVars>& prims, std::size_t total, std::uint64_t seed) {
  std::vector<PrimitiveParams> values;
  for (const auto& p : prims) values.push_back(p.params());
  SurfaceSampleBatch batch;
  batch.plan = plan_surface_samples(values, total, seed);
  batch.points = realize_surface_samples(prims, batch.plan);
  return batch;
}

Tensor sample_inside(const PrimitiveParams& prim, std::size_t count, std::uint64_t seed, double* acceptance_rate) {
  prim.validate();
  Rng rng = make_rng(seed, "inside");
  std::vector<double> pts;
  pts.reserve(3 * count);
  std::size_t draws = 0, accepted = 0;
  const std::size_t budget = 100 * std::max<std::size_t>(count, 1);
  const Vec3& s = prim.semi_axes;
  while (accepted < count) {
    if (draws >= budget) {
      throw NumericError("sample_inside: acceptance failure after " + std::to_string(draws) + " draws");
    }
    ++draws;
    const Vec3 p{uniform(rng, -s[0], s[0]), uniform(rng, -s[1], s[1]), uniform(rng, -s[2], s[2])};
    const double d = prim.kind == PrimitiveKind::Cuboid ? cuboid_sdf(p, s) : ellipsoid_sdf(p, s);
    if (!(d < 0.0)) continue;
    const Vec3 w = to_world(p, prim);
    pts.insert(pts.end(), w.begin(), w.end());
    ++accepted;
  }
  if (acceptance_rate) *acceptance_rate = draws ? static_cast<double>(accepted) / static_cast<double>(draws) : 0.0;
  return Tensor(count, 3, std::move(pts));
}

}  // namespace primseg
