#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "primseg/pointcloud.hpp"
#include "primseg/primitive.hpp"

namespace primseg {

/// Ground-truth description of a procedural shape.
struct SyntheticSpec {
  std::vector<PrimitiveParams> parts;
  /// Label per part; defaults to the part index when empty.
  std::vector<int> part_labels;
  std::size_t points_per_shape = 2048;
  std::uint64_t seed = 0;
  /// Require pairwise center distance > sum of the two max semi-axes.
  bool separated = true;
};

/// Surface samples of every part, counts proportional to surface area,
/// labels = part label. Deterministic in spec.seed. Not normalized.
PointCloud generate_synthetic(const SyntheticSpec& spec);

/// K random ellipsoids (semi-axes in [0.25, 0.7]) with random orientation,
/// placed so the separation requirement holds.
SyntheticSpec random_separated_spec(std::size_t part_count, std::uint64_t seed,
                                    std::size_t points_per_shape = 2048);

/// Few-shot benchmark categories: each has 4 parts with global labels
/// 4 * category + part, per-shape jitter of sizes/positions and a random
/// rotation about the vertical axis.
inline constexpr std::size_t kBenchmarkCategories = 3;
inline constexpr std::size_t kBenchmarkPartsPerCategory = 4;
SyntheticSpec benchmark_shape_spec(std::size_t category, std::uint64_t seed,
                                   std::size_t points_per_shape = 2048);

/// Category of a benchmark label.
inline std::size_t benchmark_category_of_label(int label) {
  return static_cast<std::size_t>(label) / kBenchmarkPartsPerCategory;
}

/// "lamp", "plane" or "chair".
std::string benchmark_category_name(std::size_t category);

/// Few-shot benchmark split of normalized shapes. Names are "<category>_<index>"; unlabeled
/// shapes carry no labels. Every shape has its own seed, so splits never share a shape.
struct BenchmarkSplit {
  std::vector<PointCloud> unlabeled;
  std::vector<PointCloud> labeled;
  std::vector<PointCloud> test;
};
BenchmarkSplit make_benchmark(std::size_t unlabeled_total, std::size_t labeled_per_category,
                              std::size_t test_per_category, std::size_t points_per_shape, std::uint64_t seed);

}  // namespace primseg
