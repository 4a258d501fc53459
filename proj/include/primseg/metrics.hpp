#pragma once

#include <cstdint>
#include <map>
#include <vector>

#include "json.hpp"
#include "primseg/pointcloud.hpp"

namespace primseg {

/// Mutual information normalized by the arithmetic mean of the two entropies.
/// Two single-cluster partitions score 1.
double normalized_mutual_information(const std::vector<int>& a, const std::vector<int>& b);

/// Pair-counting precision/recall: a pair is positive when co-clustered in the
/// prediction, relevant when co-labeled in the ground truth.
struct PairCounts {
  double precision = 1.0;
  double recall = 1.0;
};
PairCounts pair_precision_recall(const std::vector<int>& predicted, const std::vector<int>& truth);

struct ClusteringScores {
  double nmi = 0.0;
  double precision = 0.0;
  double recall = 0.0;
};
/// Throws std::invalid_argument for length mismatch or fewer than 2 points.
ClusteringScores evaluate_clustering(const std::vector<int>& predicted, const std::vector<int>& truth);

/// IoU per class accumulated over every point of every shape.
struct SegmentationScores {
  double miou = 0.0;  ///< mean over classes present in the ground truth
  std::map<int, double> per_class_iou;
};
SegmentationScores segmentation_iou(const std::vector<std::vector<int>>& predicted,
                                    const std::vector<std::vector<int>>& truth);

struct EvalReport {
  double nmi = 0.0;
  std::vector<PairCounts> precision_recall;  ///< one point per test shape
  double miou = 0.0;
  std::map<int, double> per_class_iou;

  nlohmann::json to_json() const;
};

/// Lloyd's algorithm on raw coordinates with k-means++ seeding and a 100-iteration cap.
std::vector<int> kmeans_points_baseline(const PointCloud& pc, std::size_t k, std::uint64_t seed);

}  // namespace primseg
