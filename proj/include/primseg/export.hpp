#pragma once

#include <filesystem>
#include <vector>

#include "primseg/primitive.hpp"
#include "json.hpp"

namespace primseg {

enum class ExportFormat { Obj, Json };

struct TessellationOptions {
  std::size_t longitude = 32;
  std::size_t latitude = 16;
};

/// OBJ: one group per primitive, UV-sphere tessellated ellipsoids or 12-triangle
/// boxes, 1-based indices, 9 significant digits. JSON: array of
/// {center, rotation (row-major 3x3), semi_axes, kind}.
void export_primitives(const std::vector<PrimitiveParams>& prims, const std::filesystem::path& path,
                       ExportFormat format, TessellationOptions tess = {});

std::vector<PrimitiveParams> import_primitives_json(const std::filesystem::path& path);

nlohmann::json primitive_to_json(const PrimitiveParams& p);
PrimitiveParams primitive_from_json(const nlohmann::json& j);

}  // namespace primseg
