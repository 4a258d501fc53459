#include "primseg/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <stdexcept>

#include "primseg/rng.hpp"
#include "primseg/sdf.hpp"

namespace primseg {
namespace {

double distance(const std::array<double, 3>& a, const std::array<double, 3>& b) {
  return std::sqrt((a[0] - b[0]) * (a[0] - b[0]) + (a[1] - b[1]) * (a[1] - b[1]) + (a[2] - b[2]) * (a[2] - b[2]));
}

Tensor random_rotation(Rng& rng) {
  // Uniform random unit quaternion.
  const double u1 = uniform01(rng), u2 = uniform01(rng), u3 = uniform01(rng);
  const double a = std::sqrt(1.0 - u1), b = std::sqrt(u1);
  const double w = a * std::sin(2.0 * std::numbers::pi * u2), x = a * std::cos(2.0 * std::numbers::pi * u2);
  const double y = b * std::sin(2.0 * std::numbers::pi * u3), z = b * std::cos(2.0 * std::numbers::pi * u3);
  return Tensor::from({{1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)},
                       {2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)},
                       {2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)}});
}

Tensor rotation_z(double angle) {
  const double c = std::cos(angle), s = std::sin(angle);
  return Tensor::from({{c, -s, 0}, {s, c, 0}, {0, 0, 1}});
}

}  // namespace

PointCloud generate_synthetic(const SyntheticSpec& spec) {
  if (spec.parts.empty()) throw std::invalid_argument("synthetic spec has no parts");
  if (spec.points_per_shape == 0) throw std::invalid_argument("synthetic spec asks for zero points");
  if (!spec.part_labels.empty() && spec.part_labels.size() != spec.parts.size()) {
    throw std::invalid_argument("synthetic spec: part_labels size mismatch");
  }
  for (const auto& p : spec.parts) p.validate();
  if (spec.separated) {
    for (std::size_t i = 0; i < spec.parts.size(); ++i)
      for (std::size_t j = i + 1; j < spec.parts.size(); ++j)
        if (distance(spec.parts[i].center, spec.parts[j].center) <=
            spec.parts[i].max_axis() + spec.parts[j].max_axis()) {
          throw std::invalid_argument("synthetic spec: parts " + std::to_string(i) + " and " + std::to_string(j) +
                                      " are not separated");
        }
  }
  const SurfaceSamplePlan plan =
      plan_surface_samples(spec.parts, spec.points_per_shape, derive_seed(spec.seed, "synth"));
  PointCloud pc;
  pc.points = realize_surface_samples(spec.parts, plan);
  std::vector<int> labels(plan.size());
  for (std::size_t i = 0; i < plan.size(); ++i) {
    const std::size_t m = plan.source_primitive[i];
    labels[i] = spec.part_labels.empty() ? static_cast<int>(m) : spec.part_labels[m];
  }
  pc.labels = std::move(labels);
  pc.name = "synthetic";
  return pc;
}

SyntheticSpec random_separated_spec(std::size_t part_count, std::uint64_t seed, std::size_t points_per_shape) {
  if (part_count == 0) throw std::invalid_argument("part_count must be >= 1");
  Rng rng = make_rng(seed, "synth-layout");
  SyntheticSpec spec;
  spec.seed = seed;
  spec.points_per_shape = points_per_shape;
  const double box = 1.2 * std::sqrt(static_cast<double>(part_count));
  for (std::size_t k = 0; k < part_count; ++k) {
    PrimitiveParams p;
    p.kind = PrimitiveKind::Ellipsoid;
    p.rotation = random_rotation(rng);
    std::array<double, 3> axes{uniform(rng, 0.25, 0.7), uniform(rng, 0.25, 0.7), uniform(rng, 0.25, 0.7)};
    std::sort(axes.begin(), axes.end(), std::greater<double>());
    p.semi_axes = axes;
    for (int attempt = 0;; ++attempt) {
      if (attempt > 10000) throw std::runtime_error("random_separated_spec: could not place parts");
      for (double& c : p.center) c = uniform(rng, -box, box);
      bool ok = true;
      for (const auto& q : spec.parts) {
        // Margin keeps parts visibly apart, not merely disjoint.
        if (distance(p.center, q.center) <= 1.15 * (p.max_axis() + q.max_axis())) ok = false;
      }
      if (ok) break;
    }
    spec.parts.push_back(p);
  }
  return spec;
}

SyntheticSpec benchmark_shape_spec(std::size_t category, std::uint64_t seed, std::size_t points_per_shape) {
  using K = PrimitiveKind;
  struct Part {
    K kind;
    std::array<double, 3> center;
    std::array<double, 3> axes;
  };
  std::vector<Part> parts;
  switch (category) {
    case 0:  // lamp: base, pole, shade, cap
      parts = {{K::Ellipsoid, {0, 0, 0}, {0.8, 0.8, 0.12}},
               {K::Ellipsoid, {0, 0, 1.0}, {0.1, 0.1, 0.85}},
               {K::Ellipsoid, {0, 0, 2.1}, {0.75, 0.75, 0.35}},
               {K::Cuboid, {0, 0, 2.62}, {0.15, 0.15, 0.12}}};
      break;
    case 1:  // plane: fuselage, wings, fin, tailplane
      parts = {{K::Ellipsoid, {0, 0, 0}, {1.6, 0.25, 0.25}},
               {K::Cuboid, {0.1, 0, 0}, {0.3, 1.5, 0.04}},
               {K::Cuboid, {-1.35, 0, 0.5}, {0.2, 0.03, 0.3}},
               {K::Cuboid, {-1.45, 0, 0.08}, {0.15, 0.55, 0.03}}};
      break;
    case 2:  // chair: seat, back, front legs, rear legs
      parts = {{K::Cuboid, {0, 0, 0}, {0.6, 0.6, 0.08}},
               {K::Cuboid, {-0.55, 0, 0.7}, {0.06, 0.6, 0.6}},
               {K::Cuboid, {0.5, 0, -0.5}, {0.06, 0.55, 0.42}},
               {K::Cuboid, {-0.5, 0, -0.5}, {0.06, 0.55, 0.42}}};
      break;
    default:
      throw std::invalid_argument("benchmark category out of range: " + std::to_string(category));
  }
  Rng rng = make_rng(seed, "synth-jitter");
  const Tensor rz = rotation_z(uniform(rng, 0.0, 2.0 * std::numbers::pi));
  SyntheticSpec spec;
  spec.seed = seed;
  spec.points_per_shape = points_per_shape;
  spec.separated = false;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    PrimitiveParams p;
    p.kind = parts[k].kind;
    for (std::size_t a = 0; a < 3; ++a) {
      p.semi_axes[a] = parts[k].axes[a] * uniform(rng, 0.8, 1.2);
      parts[k].center[a] += uniform(rng, -0.08, 0.08);
    }
    for (std::size_t r = 0; r < 3; ++r) {
      p.center[r] = 0.0;
      for (std::size_t c = 0; c < 3; ++c) p.center[r] += rz(r, c) * parts[k].center[c];
    }
    p.rotation = rz;
    spec.parts.push_back(p);
    spec.part_labels.push_back(static_cast<int>(category * kBenchmarkPartsPerCategory + k));
  }
  return spec;
}

std::string benchmark_category_name(std::size_t category) {
  static const char* kNames[kBenchmarkCategories] = {"lamp", "plane", "chair"};
  if (category >= kBenchmarkCategories)
    throw std::invalid_argument("benchmark category out of range: " + std::to_string(category));
  return kNames[category];
}

BenchmarkSplit make_benchmark(std::size_t unlabeled_total, std::size_t labeled_per_category,
                              std::size_t test_per_category, std::size_t points_per_shape, std::uint64_t seed) {
  BenchmarkSplit out;
  std::size_t serial = 0;
  auto make = [&](std::size_t category, std::uint64_t stream_seed, std::size_t index) {
    PointCloud pc = normalize(generate_synthetic(benchmark_shape_spec(category, stream_seed + index, points_per_shape)));
    char buf[16];
    std::snprintf(buf, sizeof buf, "%04zu", serial++);
    pc.name = benchmark_category_name(category) + "_" + buf;
    return pc;
  };
  const std::uint64_t su = derive_seed(seed, "synth-unlabeled");
  const std::uint64_t sl = derive_seed(seed, "synth-labeled");
  const std::uint64_t st = derive_seed(seed, "synth-test");
  for (std::size_t i = 0; i < unlabeled_total; ++i) {
    PointCloud pc = make(i % kBenchmarkCategories, su, i);
    pc.labels.reset();
    out.unlabeled.push_back(std::move(pc));
  }
  for (std::size_t c = 0; c < kBenchmarkCategories; ++c)
    for (std::size_t i = 0; i < labeled_per_category; ++i)
      out.labeled.push_back(make(c, sl, c * labeled_per_category + i));
  for (std::size_t c = 0; c < kBenchmarkCategories; ++c)
    for (std::size_t i = 0; i < test_per_category; ++i) out.test.push_back(make(c, st, c * test_per_category + i));
  return out;
}

}  // namespace primseg
