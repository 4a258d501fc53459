#include "primseg/pointcloud.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace primseg {
namespace {

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError(path.string(), 0, "cannot open file");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string fmt9(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

std::vector<std::string> tokens(const std::string& line) {
  std::istringstream ss(line);
  std::vector<std::string> out;
  std::string t;
  while (ss >> t) out.push_back(t);
  return out;
}

bool parse_double(const std::string& s, double& out) {
  try {
    std::size_t used = 0;
    out = std::stod(s, &used);
    return used == s.size();
  } catch (const std::exception&) {
    return false;
  }
}

bool parse_int(const std::string& s, int& out) {
  try {
    std::size_t used = 0;
    out = std::stoi(s, &used);
    return used == s.size();
  } catch (const std::exception&) {
    return false;
  }
}

}  // namespace

ParseError::ParseError(const std::string& path, std::size_t line, const std::string& what)
    : std::runtime_error(path + (line ? ":" + std::to_string(line) : std::string()) + ": " + what),
      line_(line) {}

void PointCloud::validate() const {
  if (points.rows() == 0) throw std::invalid_argument("point cloud '" + name + "' is empty");
  if (points.cols() != 3) throw std::invalid_argument("point cloud must be Nx3");
  if (!points.all_finite()) throw std::invalid_argument("point cloud '" + name + "' has non-finite coordinates");
  if (labels && labels->size() != points.rows()) {
    throw std::invalid_argument("point cloud '" + name + "' has a label count mismatch");
  }
}

CloudFormat format_for_path(const std::filesystem::path& path) {
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".ply" ? CloudFormat::PlyAscii : CloudFormat::Xyz;
}

PointCloud parse_xyz(const std::string& text, const std::string& source) {
  std::istringstream in(text);
  std::string line;
  std::vector<double> coords;
  std::vector<int> labels;
  int label_mode = -1;  // unknown / 0 = no labels / 1 = labels
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto tok = tokens(line);
    if (tok.empty() || tok[0][0] == '#') continue;
    if (tok.size() != 3 && tok.size() != 4) {
      throw ParseError(source, lineno, "expected 'x y z [label]', got " + std::to_string(tok.size()) + " fields");
    }
    const int mode = tok.size() == 4 ? 1 : 0;
    if (label_mode == -1) label_mode = mode;
    if (mode != label_mode) throw ParseError(source, lineno, "inconsistent label column");
    for (std::size_t k = 0; k < 3; ++k) {
      double v;
      if (!parse_double(tok[k], v) || !std::isfinite(v)) {
        throw ParseError(source, lineno, "bad coordinate '" + tok[k] + "'");
      }
      coords.push_back(v);
    }
    if (mode == 1) {
      int l;
      if (!parse_int(tok[3], l) || l < 0) throw ParseError(source, lineno, "bad label '" + tok[3] + "'");
      labels.push_back(l);
    }
  }
  if (coords.empty()) throw ParseError(source, 0, "empty point cloud");
  PointCloud pc;
  const std::size_t rows = coords.size() / 3;
  pc.points = Tensor(rows, 3, std::move(coords));
  if (label_mode == 1) pc.labels = std::move(labels);
  pc.name = source;
  return pc;
}

PointCloud parse_ply_ascii(const std::string& text, const std::string& source) {
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  auto next = [&]() -> bool {
    if (!std::getline(in, line)) return false;
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    return true;
  };
  if (!next() || tokens(line) != std::vector<std::string>{"ply"}) throw ParseError(source, 1, "missing 'ply' magic");

  std::size_t vertex_count = 0;
  bool in_vertex = false, seen_vertex = false;
  std::vector<std::string> props;
  bool ascii = false;
  while (true) {
    if (!next()) throw ParseError(source, lineno, "unterminated header");
    const auto tok = tokens(line);
    if (tok.empty() || tok[0] == "comment" || tok[0] == "obj_info") continue;
    if (tok[0] == "end_header") break;
    if (tok[0] == "format") {
      if (tok.size() < 2 || tok[1] != "ascii") throw ParseError(source, lineno, "only ASCII PLY is supported");
      ascii = true;
    } else if (tok[0] == "element") {
      if (tok.size() != 3) throw ParseError(source, lineno, "malformed element line");
      in_vertex = tok[1] == "vertex";
      if (in_vertex) {
        if (seen_vertex) throw ParseError(source, lineno, "duplicate vertex element");
        seen_vertex = true;
        try {
          vertex_count = std::stoul(tok[2]);
        } catch (const std::exception&) {
          throw ParseError(source, lineno, "bad vertex count");
        }
      } else if (!seen_vertex) {
        throw ParseError(source, lineno, "vertex element must come first");
      }
    } else if (tok[0] == "property") {
      if (tok.size() < 3) throw ParseError(source, lineno, "malformed property line");
      if (in_vertex) {
        if (tok[1] == "list") throw ParseError(source, lineno, "list properties on vertices are not supported");
        props.push_back(tok.back());
      }
    } else {
      throw ParseError(source, lineno, "unexpected header line '" + line + "'");
    }
  }
  if (!ascii) throw ParseError(source, lineno, "missing format line");
  auto index_of = [&](const std::string& n) -> long {
    auto it = std::find(props.begin(), props.end(), n);
    return it == props.end() ? -1 : static_cast<long>(it - props.begin());
  };
  const long ix = index_of("x"), iy = index_of("y"), iz = index_of("z"), il = index_of("label");
  if (ix < 0 || iy < 0 || iz < 0) throw ParseError(source, lineno, "vertex element lacks x/y/z");
  if (vertex_count == 0) throw ParseError(source, lineno, "empty point cloud");

  std::vector<double> coords;
  std::vector<int> labels;
  coords.reserve(vertex_count * 3);
  for (std::size_t v = 0; v < vertex_count; ++v) {
    if (!next()) throw ParseError(source, lineno + 1, "unexpected end of vertex data");
    const auto tok = tokens(line);
    if (tok.size() != props.size()) {
      throw ParseError(source, lineno, "expected " + std::to_string(props.size()) + " values");
    }
    for (long k : {ix, iy, iz}) {
      double d;
      if (!parse_double(tok[k], d) || !std::isfinite(d)) throw ParseError(source, lineno, "bad coordinate");
      coords.push_back(d);
    }
    if (il >= 0) {
      int l;
      if (!parse_int(tok[il], l) || l < 0) throw ParseError(source, lineno, "bad label");
      labels.push_back(l);
    }
  }
  PointCloud pc;
  pc.points = Tensor(vertex_count, 3, std::move(coords));
  if (il >= 0) pc.labels = std::move(labels);
  pc.name = source;
  return pc;
}

PointCloud load_pointcloud(const std::filesystem::path& path, CloudFormat format) {
  const std::string text = read_file(path);
  PointCloud pc = format == CloudFormat::PlyAscii ? parse_ply_ascii(text, path.string())
                                                  : parse_xyz(text, path.string());
  pc.name = path.stem().string();
  return pc;
}

PointCloud load_pointcloud(const std::filesystem::path& path) {
  return load_pointcloud(path, format_for_path(path));
}

void save_pointcloud(const PointCloud& pc, const std::filesystem::path& path, CloudFormat format) {
  pc.validate();
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  const std::size_t n = pc.size();
  if (format == CloudFormat::PlyAscii) {
    out << "ply\nformat ascii 1.0\nelement vertex " << n
        << "\nproperty float x\nproperty float y\nproperty float z\n";
    if (pc.labels) out << "property uint label\n";
    out << "end_header\n";
  }
  for (std::size_t i = 0; i < n; ++i) {
    out << fmt9(pc.points(i, 0)) << ' ' << fmt9(pc.points(i, 1)) << ' ' << fmt9(pc.points(i, 2));
    if (pc.labels) out << ' ' << (*pc.labels)[i];
    out << '\n';
  }
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

void save_pointcloud(const PointCloud& pc, const std::filesystem::path& path) {
  save_pointcloud(pc, path, format_for_path(path));
}

PointCloud normalize(const PointCloud& pc) {
  pc.validate();
  const std::size_t n = pc.size();
  std::array<double, 3> c{};
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < 3; ++k) c[k] += pc.points(i, k);
  for (double& v : c) v /= static_cast<double>(n);
  PointCloud out = pc;
  double max_norm = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double sq = 0.0;
    for (std::size_t k = 0; k < 3; ++k) {
      out.points(i, k) -= c[k];
      sq += out.points(i, k) * out.points(i, k);
    }
    max_norm = std::max(max_norm, std::sqrt(sq));
  }
  const double extent = std::max({std::abs(c[0]), std::abs(c[1]), std::abs(c[2]), 1.0});
  if (max_norm <= 1e-12 * extent) {
    throw std::invalid_argument("cannot normalize '" + pc.name + "': all points coincide");
  }
  for (double& v : out.points.flat()) v /= max_norm;
  return out;
}

std::vector<PointCloud> load_directory(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw ParseError(dir.string(), 0, "not a directory");
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    std::string ext = e.path().extension().string();
    if (ext == ".xyz" || ext == ".ply") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<PointCloud> out;
  out.reserve(files.size());
  for (const auto& f : files) out.push_back(load_pointcloud(f));
  return out;
}

}  // namespace primseg
