#include <cmath>
#include <numbers>
#include <random>

#include "doctest.h"
#include "primseg/fit.hpp"
#include "primseg/sdf.hpp"
#include "support.hpp"

using namespace primseg;

namespace {

PrimitiveParams random_primitive(std::mt19937_64& rng, PrimitiveKind kind) {
  std::uniform_real_distribution<double> u(0.3, 2.0), c(-1, 1), a(0, 6.28);
  PrimitiveParams p = PrimitiveParams::axis_aligned(kind, {c(rng), c(rng), c(rng)}, {u(rng), u(rng), u(rng)});
  p.rotation = testing_support::rotation(c(rng), c(rng), c(rng) + 0.01, a(rng));
  return p;
}

}  // namespace

TEST_CASE("local frame transforms") {
  PrimitiveParams p = PrimitiveParams::sphere({1, 2, 3}, 1);
  CHECK(to_local({1, 2, 3}, p) == Vec3{0, 0, 0});
  CHECK(to_local({2, 2, 5}, p) == Vec3{1, 0, 2});
  p.rotation = testing_support::rotation(1, -1, 2, 0.9);
  const Vec3 x{0.3, -4, 2.2};
  const Vec3 back = to_world(to_local(x, p), p);
  for (int k = 0; k < 3; ++k) CHECK(std::abs(back[k] - x[k]) < 1e-12);
}

TEST_CASE("hand-evaluated signed distances") {
  CHECK(ellipsoid_sdf({1, 0, 0}, {1, 1, 1}) == doctest::Approx(0.0));
  CHECK(ellipsoid_sdf({2, 0, 0}, {1, 1, 1}) == doctest::Approx(1.0));
  CHECK(ellipsoid_sdf({0.5, 0, 0}, {1, 1, 1}) == doctest::Approx(-0.5));
  CHECK(ellipsoid_sdf({0, 0, 0}, {2, 1, 3}) == -1.0);
  CHECK(cuboid_sdf({2, 0, 0}, {1, 1, 1}) == doctest::Approx(1.0));
  CHECK(cuboid_sdf({0, 0, 0}, {1, 1, 1}) == doctest::Approx(-1.0));
  CHECK(cuboid_sdf({1, 1, 1}, {1, 1, 1}) == doctest::Approx(0.0));
  CHECK(cuboid_sdf({2, 2, 1}, {1, 1, 1}) == doctest::Approx(std::sqrt(2.0)));
}

TEST_CASE("ellipsoid distance is exact on spheres") {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> r(1e-3, 5), c(-1, 1);
  for (int i = 0; i < 1000; ++i) {
    const double rad = r(rng);
    Vec3 p{c(rng), c(rng), c(rng)};
    const double n = std::sqrt(p[0] * p[0] + p[1] * p[1] + p[2] * p[2]);
    if (n < 1e-3) continue;
    CHECK(std::abs(ellipsoid_sdf(p, {rad, rad, rad}) - (n - rad)) < 1e-12);
  }
}

TEST_CASE("sign agrees with exact membership") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> c(-3, 3);
  for (int i = 0; i < 1000; ++i) {
    const PrimitiveKind kind = i % 2 ? PrimitiveKind::Cuboid : PrimitiveKind::Ellipsoid;
    const PrimitiveParams p = random_primitive(rng, kind);
    const Vec3 x{c(rng), c(rng), c(rng)};
    const Vec3 l = to_local(x, p);
    bool inside;
    if (kind == PrimitiveKind::Ellipsoid) {
      double q = 0;
      for (int k = 0; k < 3; ++k) q += (l[k] / p.semi_axes[k]) * (l[k] / p.semi_axes[k]);
      if (std::abs(q - 1) < 1e-9) continue;
      inside = q < 1;
    } else {
      inside = true;
      for (int k = 0; k < 3; ++k) inside = inside && std::abs(l[k]) < p.semi_axes[k];
    }
    CHECK((signed_distance(p, x) < 0) == inside);
  }
}

TEST_CASE("graph signed distances match the scalar versions") {
  std::mt19937_64 rng(4);
  const Tensor x = testing_support::random_tensor(rng, 50, 3, -2, 2);
  for (PrimitiveKind kind : {PrimitiveKind::Ellipsoid, PrimitiveKind::Cuboid}) {
    const PrimitiveParams p = random_primitive(rng, kind);
    Graph g;
    const Tensor sd = signed_distance(g.constant(x), constant_primitive(g, p)).value();
    for (std::size_t i = 0; i < 50; ++i)
      CHECK(std::abs(sd[i] - signed_distance(p, {x(i, 0), x(i, 1), x(i, 2)})) < 1e-12);
  }
}

TEST_CASE("uniform sphere sampling moments") {
  Graph g;
  const auto batch = sample_surface({constant_primitive(g, PrimitiveParams::sphere({0, 0, 0}, 1))}, 10000, 7);
  const Tensor& x = batch.points.value();
  REQUIRE(x.rows() == 10000);
  std::array<double, 3> mean{};
  for (std::size_t i = 0; i < 10000; ++i)
    for (int k = 0; k < 3; ++k) mean[k] += x(i, k) / 10000;
  for (int k = 0; k < 3; ++k) CHECK(std::abs(mean[k]) < 0.05);
  for (int a = 0; a < 3; ++a)
    for (int b = 0; b < 3; ++b) {
      double c = 0;
      for (std::size_t i = 0; i < 10000; ++i) c += (x(i, a) - mean[a]) * (x(i, b) - mean[b]) / 10000;
      CHECK(std::abs(c - (a == b ? 1.0 / 3 : 0.0)) < 0.05 / 3);
    }
}

TEST_CASE("allocation follows area") {
  CHECK(allocate_counts({4, 1}, 10000) == std::vector<std::size_t>{8000, 2000});
  CHECK(allocate_counts({1, 1, 1}, 10) == std::vector<std::size_t>{4, 3, 3});
  // spheres of radius 2 and 1 have areas 4:1
  const auto plan = plan_surface_samples({PrimitiveParams::sphere({0, 0, 0}, 2), PrimitiveParams::sphere({5, 0, 0}, 1)}, 10000, 1);
  CHECK(plan.counts[0] == 8000);
  CHECK(plan.counts[1] == 2000);
}

TEST_CASE("samples lie on their primitive and replay from stored parameters") {
  std::mt19937_64 rng(5);
  std::vector<PrimitiveParams> prims{random_primitive(rng, PrimitiveKind::Ellipsoid),
                                     random_primitive(rng, PrimitiveKind::Cuboid)};
  const SurfaceSamplePlan plan = plan_surface_samples(prims, 2000, 11);
  const Tensor x = realize_surface_samples(prims, plan);
  for (std::size_t i = 0; i < plan.size(); ++i) {
    const PrimitiveParams& p = prims[plan.source_primitive[i]];
    const Vec3 w{x(i, 0), x(i, 1), x(i, 2)};
    CHECK(std::abs(signed_distance(p, w)) < 1e-6);
    if (p.kind == PrimitiveKind::Ellipsoid) {
      const Vec3 l = to_local(w, p);
      const auto uv = ellipsoid_uv(l, p.semi_axes);
      CHECK(std::abs(uv[0] - plan.params_uv(i, 0)) < 1e-6);
      CHECK(std::abs(uv[1] - plan.params_uv(i, 1)) < 1e-6);
      const Vec3 unit = ellipsoid_unit_point(uv[0], uv[1]);
      for (int k = 0; k < 3; ++k) CHECK(std::abs(unit[k] * p.semi_axes[k] - l[k]) < 1e-6);
    }
  }
  // graph realization agrees with the plain one
  Graph g;
  std::vector<PrimitiveVars> vars;
  for (const auto& p : prims) vars.push_back(constant_primitive(g, p));
  CHECK(max_abs_diff(realize_surface_samples(vars, plan).value(), x) < 1e-12);
}

TEST_CASE("mean sampled x-coordinate gradient with frozen parameters") {
  const PrimitiveParams base = PrimitiveParams::axis_aligned(PrimitiveKind::Ellipsoid, {0.2, 0, 0}, {1.5, 1, 0.7});
  const SurfaceSamplePlan plan = plan_surface_samples({base}, 500, 3);
  const testing_support::GraphFn f = [&](Graph& g, const std::vector<Var>& v) {
    PrimitiveVars p = constant_primitive(g, base);
    p.semi_axes = v[0];
    Var pts = realize_surface_samples({p}, plan);
    // |x| so the mean does not vanish by symmetry
    return mean(abs(slice_cols(pts, 0, 1)));
  };
  CHECK(testing_support::grad_error(f, {Tensor::from({{1.5, 1, 0.7}})}) < 1e-3);
}

TEST_CASE("interior sampling") {
  double rate = 0;
  const Tensor s = sample_inside(PrimitiveParams::sphere({1, 1, 1}, 1), 5000, 3, &rate);
  for (std::size_t i = 0; i < s.rows(); ++i) {
    double n = 0;
    for (int k = 0; k < 3; ++k) n += (s(i, k) - 1) * (s(i, k) - 1);
    CHECK(std::sqrt(n) < 1.0);
  }
  CHECK(rate == doctest::Approx(std::numbers::pi / 6).epsilon(0.05));
  sample_inside(PrimitiveParams::axis_aligned(PrimitiveKind::Cuboid, {0, 0, 0}, {1, 2, 3}), 1000, 3, &rate);
  CHECK(rate == 1.0);
}
