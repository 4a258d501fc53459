#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <sstream>

#include "doctest.h"
#include "json.hpp"
#include "primseg/export.hpp"
#include "primseg/pointcloud.hpp"
#include "primseg/sdf.hpp"
#include "primseg/synthetic.hpp"
#include "support.hpp"

using namespace primseg;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("primseg_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::array<double, 9> covariance(const Tensor& x) {
  std::array<double, 3> mu{};
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t d = 0; d < 3; ++d) mu[d] += x(i, d) / static_cast<double>(x.rows());
  std::array<double, 9> c{};
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t a = 0; a < 3; ++a)
      for (std::size_t b = 0; b < 3; ++b) c[a * 3 + b] += (x(i, a) - mu[a]) * (x(i, b) - mu[b]) / static_cast<double>(x.rows());
  return c;
}

}  // namespace

TEST_CASE("xyz parsing") {
  const PointCloud a = parse_xyz("0 0 0\n1 0 0\n");
  CHECK(a.size() == 2);
  CHECK_FALSE(a.has_labels());
  const PointCloud b = parse_xyz("0 0 0 1\n1 0 0 2\n");
  REQUIRE(b.has_labels());
  CHECK(*b.labels == std::vector<int>{1, 2});
  const PointCloud c = parse_xyz("# header\n\n0.5 1e-3 -2\n");
  CHECK(c.size() == 1);
  CHECK(c.points(0, 1) == 1e-3);
}

TEST_CASE("xyz errors name the line") {
  try {
    parse_xyz("0 0\n", "bad.xyz");
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.line() == 1);
    CHECK(std::string(e.what()).find("bad.xyz:1") != std::string::npos);
  }
  CHECK_THROWS_AS(parse_xyz("0 0 0 1\n1 1 1\n"), ParseError);
  CHECK_THROWS_AS(parse_xyz("0 0 x\n"), ParseError);
  CHECK_THROWS_AS(parse_xyz("# only a comment\n"), ParseError);
}

TEST_CASE("missing file names the path") {
  try {
    load_pointcloud("/nonexistent/cloud.xyz");
    FAIL("expected an error");
  } catch (const std::exception& e) {
    CHECK(std::string(e.what()).find("/nonexistent/cloud.xyz") != std::string::npos);
  }
}

TEST_CASE("ascii ply with labels") {
  const std::string ply =
      "ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nproperty float y\nproperty float z\n"
      "property uint label\nend_header\n0 0 0 3\n1 2 3 4\n";
  const PointCloud pc = parse_ply_ascii(ply);
  CHECK(pc.size() == 2);
  CHECK(pc.points(1, 2) == 3.0);
  CHECK(*pc.labels == std::vector<int>{3, 4});
  CHECK_THROWS_AS(parse_ply_ascii("ply\nformat binary_little_endian 1.0\nend_header\n"), ParseError);
}

TEST_CASE("save and load round trip to 9 significant digits") {
  const fs::path dir = scratch_dir("roundtrip");
  std::mt19937_64 rng(5);
  PointCloud pc;
  pc.points = testing_support::random_tensor(rng, 50, 3, -10, 10);
  pc.labels = std::vector<int>(50, 2);
  for (auto fmt : {CloudFormat::Xyz, CloudFormat::PlyAscii}) {
    const fs::path p = dir / (fmt == CloudFormat::Xyz ? "c.xyz" : "c.ply");
    save_pointcloud(pc, p, fmt);
    const PointCloud back = load_pointcloud(p);
    CHECK(back.name == "c");
    REQUIRE(back.size() == 50);
    for (std::size_t i = 0; i < pc.points.size(); ++i)
      CHECK(std::abs(back.points[i] - pc.points[i]) <= 1e-8 * std::max(1.0, std::abs(pc.points[i])));
    CHECK(*back.labels == *pc.labels);
  }
}

TEST_CASE("normalize") {
  PointCloud pc;
  pc.points = Tensor::from({{1, 0, 0}, {3, 0, 0}});
  const PointCloud n = normalize(pc);
  CHECK(n.points.vec() == std::vector<double>{-1, 0, 0, 1, 0, 0});

  std::mt19937_64 rng(9);
  PointCloud r;
  r.points = testing_support::random_tensor(rng, 100, 3, -4, 7);
  r.labels = std::vector<int>(100, 1);
  const PointCloud once = normalize(r), twice = normalize(once);
  CHECK(max_abs_diff(once.points, twice.points) < 1e-6);
  CHECK(once.labels == r.labels);
  double maxn = 0.0;
  std::array<double, 3> mu{};
  for (std::size_t i = 0; i < 100; ++i) {
    double n2 = 0.0;
    for (std::size_t d = 0; d < 3; ++d) {
      n2 += once.points(i, d) * once.points(i, d);
      mu[d] += once.points(i, d) / 100;
    }
    maxn = std::max(maxn, std::sqrt(n2));
  }
  CHECK(maxn > 1 - 1e-6);
  CHECK(maxn <= 1.0 + 1e-15);
  for (double m : mu) CHECK(std::abs(m) < 1e-6);

  PointCloud same;
  same.points = Tensor(5, 3, 2.0);
  CHECK_THROWS(normalize(same));
}

TEST_CASE("synthetic unit sphere moments") {
  SyntheticSpec s;
  s.parts = {PrimitiveParams::sphere({0, 0, 0}, 1.0)};
  s.points_per_shape = 1000;
  s.seed = 11;
  const PointCloud pc = generate_synthetic(s);
  CHECK(pc.size() == 1000);
  for (int l : *pc.labels) CHECK(l == 0);
  const auto c = covariance(pc.points);
  for (std::size_t a = 0; a < 3; ++a)
    for (std::size_t b = 0; b < 3; ++b) CHECK(std::abs(c[a * 3 + b] - (a == b ? 1.0 / 3.0 : 0.0)) < 0.05 / 3.0);
}

TEST_CASE("two separated spheres split evenly, deterministic in seed") {
  SyntheticSpec s;
  s.parts = {PrimitiveParams::sphere({-3, 0, 0}, 1.0), PrimitiveParams::sphere({3, 0, 0}, 1.0)};
  s.points_per_shape = 2000;
  s.seed = 4;
  const PointCloud a = generate_synthetic(s), b = generate_synthetic(s);
  CHECK(a.points.vec() == b.points.vec());
  const auto zeros = std::count(a.labels->begin(), a.labels->end(), 0);
  CHECK(std::abs(static_cast<double>(zeros) / 2000.0 - 0.5) < 0.05);
}

TEST_CASE("invalid specs are rejected") {
  SyntheticSpec s;
  s.parts = {PrimitiveParams::axis_aligned(PrimitiveKind::Ellipsoid, {0, 0, 0}, {1, 0, 1})};
  CHECK_THROWS(generate_synthetic(s));
  s.parts = {PrimitiveParams::sphere({0, 0, 0}, 1), PrimitiveParams::sphere({1, 0, 0}, 1)};
  CHECK_THROWS(generate_synthetic(s));  // overlapping while separated mode is on
}

TEST_CASE("separated shapes: nearest primitive by SDF reproduces every label") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const SyntheticSpec s = random_separated_spec(2 + seed % 3, seed, 1024);
    const PointCloud pc = generate_synthetic(s);
    for (std::size_t i = 0; i < pc.size(); ++i) {
      const Vec3 x{pc.points(i, 0), pc.points(i, 1), pc.points(i, 2)};
      std::size_t best = 0;
      double bd = std::abs(signed_distance(s.parts[0], x));
      for (std::size_t k = 1; k < s.parts.size(); ++k) {
        const double d = std::abs(signed_distance(s.parts[k], x));
        if (d < bd) bd = d, best = k;
      }
      REQUIRE((*pc.labels)[i] == static_cast<int>(best));
    }
  }
}

TEST_CASE("benchmark split") {
  const BenchmarkSplit b = make_benchmark(6, 2, 1, 128, 3);
  CHECK(b.unlabeled.size() == 6);
  CHECK(b.labeled.size() == 6);
  CHECK(b.test.size() == 3);
  for (const auto& pc : b.unlabeled) CHECK_FALSE(pc.has_labels());
  std::map<std::string, int> cats;
  for (const auto& pc : b.labeled) {
    cats[pc.name.substr(0, pc.name.find('_'))]++;
    for (int l : *pc.labels) CHECK(benchmark_category_name(benchmark_category_of_label(l)) == pc.name.substr(0, pc.name.find('_')));
  }
  CHECK(cats == std::map<std::string, int>{{"chair", 2}, {"lamp", 2}, {"plane", 2}});
}

TEST_CASE("OBJ export of a unit sphere") {
  const fs::path dir = scratch_dir("obj");
  export_primitives({PrimitiveParams::sphere({0, 0, 0}, 1.0)}, dir / "s.obj", ExportFormat::Obj);
  std::istringstream in(slurp(dir / "s.obj"));
  std::string line;
  std::size_t faces = 0, groups = 0, verts = 0;
  while (std::getline(in, line)) {
    if (line.rfind("f ", 0) == 0) {
      ++faces;
      std::istringstream ls(line.substr(2));
      std::size_t a, b, c;
      ls >> a >> b >> c;
      CHECK(std::min({a, b, c}) >= 1);
    } else if (line.rfind("g ", 0) == 0) {
      ++groups;
    } else if (line.rfind("v ", 0) == 0) {
      ++verts;
      std::istringstream ls(line.substr(2));
      double x, y, z;
      ls >> x >> y >> z;
      const double n = std::sqrt(x * x + y * y + z * z);
      CHECK(n >= 0.99);
      CHECK(n <= 1.0 + 1e-8);
    }
  }
  CHECK(faces == 32 * 16 * 2);
  CHECK(groups == 1);
  CHECK(verts > 0);

  export_primitives({}, dir / "e.obj", ExportFormat::Obj);
  export_primitives({}, dir / "e.json", ExportFormat::Json);
  CHECK(nlohmann::json::parse(slurp(dir / "e.json")) == nlohmann::json::array());
}

TEST_CASE("JSON export round trip within 1e-9") {
  const fs::path dir = scratch_dir("json");
  PrimitiveParams e;
  e.center = {0.1234567891234, -2.5, 3.75};
  e.rotation = testing_support::rotation(1, -2, 0.5, 1.1);
  e.semi_axes = {1.5, 0.3333333333333, 0.1};
  PrimitiveParams c = PrimitiveParams::axis_aligned(PrimitiveKind::Cuboid, {1, 2, 3}, {0.5, 0.25, 0.125});
  export_primitives({e, c}, dir / "p.json", ExportFormat::Json);
  const auto back = import_primitives_json(dir / "p.json");
  REQUIRE(back.size() == 2);
  CHECK(back[0].kind == PrimitiveKind::Ellipsoid);
  CHECK(back[1].kind == PrimitiveKind::Cuboid);
  for (std::size_t k = 0; k < 3; ++k) {
    CHECK(std::abs(back[0].center[k] - e.center[k]) < 1e-9);
    CHECK(std::abs(back[0].semi_axes[k] - e.semi_axes[k]) < 1e-9);
  }
  CHECK(max_abs_diff(back[0].rotation, e.rotation) < 1e-9);
  const auto j = nlohmann::json::parse(slurp(dir / "p.json"));
  CHECK(j[0]["rotation"].size() == 9);
  CHECK(j[1]["kind"] == "cuboid");
}
