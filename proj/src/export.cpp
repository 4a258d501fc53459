#include "primseg/export.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>

#include "primseg/sdf.hpp"

namespace primseg {
namespace {

std::string fmt9(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

struct Mesh {
  std::vector<Vec3> vertices;
  std::vector<std::array<std::size_t, 3>> triangles;  // 0-based, local to the mesh
};

Mesh tessellate_ellipsoid(const PrimitiveParams& p, const TessellationOptions& t) {
  Mesh m;
  for (std::size_t i = 0; i <= t.latitude; ++i) {
    const double v = std::numbers::pi * static_cast<double>(i) / static_cast<double>(t.latitude);
    for (std::size_t j = 0; j < t.longitude; ++j) {
      const double u = 2.0 * std::numbers::pi * static_cast<double>(j) / static_cast<double>(t.longitude);
      const Vec3 d = ellipsoid_unit_point(u, v);
      m.vertices.push_back(to_world({p.semi_axes[0] * d[0], p.semi_axes[1] * d[1], p.semi_axes[2] * d[2]}, p));
    }
  }
  for (std::size_t i = 0; i < t.latitude; ++i) {
    for (std::size_t j = 0; j < t.longitude; ++j) {
      const std::size_t j1 = (j + 1) % t.longitude;
      const std::size_t a = i * t.longitude + j, b = i * t.longitude + j1;
      const std::size_t c = (i + 1) * t.longitude + j, d = (i + 1) * t.longitude + j1;
      m.triangles.push_back({a, c, d});
      m.triangles.push_back({a, d, b});
    }
  }
  return m;
}

Mesh tessellate_cuboid(const PrimitiveParams& p) {
  Mesh m;
  for (int i = 0; i < 8; ++i) {
    const Vec3 local{(i & 1 ? 1.0 : -1.0) * p.semi_axes[0], (i & 2 ? 1.0 : -1.0) * p.semi_axes[1],
                     (i & 4 ? 1.0 : -1.0) * p.semi_axes[2]};
    m.vertices.push_back(to_world(local, p));
  }
  m.triangles = {{0, 2, 3}, {0, 3, 1}, {4, 5, 7}, {4, 7, 6}, {0, 1, 5}, {0, 5, 4},
                 {2, 6, 7}, {2, 7, 3}, {0, 4, 6}, {0, 6, 2}, {1, 3, 7}, {1, 7, 5}};
  return m;
}

}  // namespace

nlohmann::json primitive_to_json(const PrimitiveParams& p) {
  nlohmann::json rot = nlohmann::json::array();
  for (double v : p.rotation.flat()) rot.push_back(v);
  return {{"center", p.center}, {"rotation", rot}, {"semi_axes", p.semi_axes}, {"kind", to_string(p.kind)}};
}

PrimitiveParams primitive_from_json(const nlohmann::json& j) {
  PrimitiveParams p;
  p.kind = primitive_kind_from_string(j.at("kind").get<std::string>());
  p.center = j.at("center").get<std::array<double, 3>>();
  p.semi_axes = j.at("semi_axes").get<std::array<double, 3>>();
  // Flat row-major or nested 3x3.
  std::vector<double> rot;
  for (const auto& e : j.at("rotation")) {
    if (e.is_array())
      for (const auto& v : e) rot.push_back(v.get<double>());
    else
      rot.push_back(e.get<double>());
  }
  if (rot.size() != 9) throw std::invalid_argument("primitive rotation must have 9 entries");
  p.rotation = Tensor(3, 3, rot);
  p.validate();
  return p;
}

void export_primitives(const std::vector<PrimitiveParams>& prims, const std::filesystem::path& path,
                       ExportFormat format, TessellationOptions tess) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  if (format == ExportFormat::Json) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& p : prims) arr.push_back(primitive_to_json(p));
    out << arr.dump(2) << '\n';
  } else {
    out << "# " << prims.size() << " primitives\n";
    std::size_t base = 1;
    for (std::size_t k = 0; k < prims.size(); ++k) {
      const Mesh m = prims[k].kind == PrimitiveKind::Cuboid ? tessellate_cuboid(prims[k])
                                                            : tessellate_ellipsoid(prims[k], tess);
      out << "g primitive_" << k << '\n';
      for (const auto& v : m.vertices) out << "v " << fmt9(v[0]) << ' ' << fmt9(v[1]) << ' ' << fmt9(v[2]) << '\n';
      for (const auto& t : m.triangles) out << "f " << t[0] + base << ' ' << t[1] + base << ' ' << t[2] + base << '\n';
      base += m.vertices.size();
    }
  }
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

std::vector<PrimitiveParams> import_primitives_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  const nlohmann::json arr = nlohmann::json::parse(in);
  if (!arr.is_array()) throw std::invalid_argument(path.string() + ": expected a JSON array");
  std::vector<PrimitiveParams> out;
  for (const auto& j : arr) out.push_back(primitive_from_json(j));
  return out;
}

}  // namespace primseg
