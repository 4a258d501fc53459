#pragma once

#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "primseg/tensor.hpp"

namespace primseg {

/// Input parse failure; `line()` is 1-based (0 when not tied to a line).
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& path, std::size_t line, const std::string& what);
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

struct PointCloud {
  Tensor points;  ///< Nx3
  std::optional<std::vector<int>> labels;
  std::string name;

  std::size_t size() const { return points.rows(); }
  bool has_labels() const { return labels.has_value(); }
  /// Throws std::invalid_argument on empty clouds, non-finite points or a label count mismatch.
  void validate() const;
};

enum class CloudFormat { Xyz, PlyAscii };

/// Picks the format from the extension (.ply -> PLY, anything else -> XYZ).
CloudFormat format_for_path(const std::filesystem::path& path);

PointCloud load_pointcloud(const std::filesystem::path& path, CloudFormat format);
PointCloud load_pointcloud(const std::filesystem::path& path);
/// Parses XYZ text (`x y z [label]` per line, blank lines and '#' comments skipped).
PointCloud parse_xyz(const std::string& text, const std::string& source = "<memory>");
PointCloud parse_ply_ascii(const std::string& text, const std::string& source = "<memory>");

/// Coordinates are written with 9 significant digits.
void save_pointcloud(const PointCloud& pc, const std::filesystem::path& path, CloudFormat format);
void save_pointcloud(const PointCloud& pc, const std::filesystem::path& path);

/// Centers at the origin and scales so the farthest point has norm 1.
PointCloud normalize(const PointCloud& pc);

/// All *.xyz / *.ply files of a directory, sorted by filename.
std::vector<PointCloud> load_directory(const std::filesystem::path& dir);

}  // namespace primseg
