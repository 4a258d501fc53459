#pragma once

// Differentiable recurrent mean-shift over unit-norm embeddings.

#include <vector>

#include "primseg/graph.hpp"

namespace primseg {

struct BandwidthConfig {
  std::size_t neighbor_rank = 100;
  std::size_t iterations = 10;
  /// Logit scale of the soft membership; 1 is the plain softmax of center similarities.
  double membership_scale = 1.0;
};

/// Exponent arguments of the kernel and of the membership softmax are clamped to this range.
inline constexpr double kExpClamp = 50.0;
/// NMS never keeps more centers than this.
inline constexpr std::size_t kMaxClusters = 32;

/// Mean distance from each row to its min(rank, N-1)-th nearest other row.
/// Throws NumericError when the result is zero (all embeddings identical).
double estimate_bandwidth(const Tensor& z, std::size_t neighbor_rank);

/// G0 = Z; G <- normalize_rows(K Z D^-1) with K = exp(G Z^T / b^2), D = diag(K 1).
Var meanshift_iterate(Var z, double bandwidth, std::size_t iterations);
/// Forward-only version with O(N D) memory, for inference on large clouds.
Tensor meanshift_iterate(const Tensor& z, double bandwidth, std::size_t iterations);

/// Greedy non-max suppression: density(i) = #{j : |g_i - g_j| <= b} (self
/// included). Repeatedly emit the densest remaining point with density >= 2 and
/// remove everything within b of it. Ties go to the lower index. Falls back to
/// the single densest point; at most `max_centers` are emitted.
std::vector<std::size_t> nms_centers(const Tensor& g, double bandwidth, std::size_t max_centers = kMaxClusters);

/// Row-stochastic N x M membership softmax(clamp(s (c_m . g_i) - r_i)) with r_i
/// the row maximum and s the logit scale (1 by default). Centers are constants.
Var soft_membership(Var g, const Tensor& centers, double scale = 1.0);
/// Same, starting from raw N x M logits.
Var soft_membership_from_logits(Var logits);

struct ClusterAssignment {
  Tensor centers;  ///< M x D
  Var membership;  ///< N x M
  std::vector<std::size_t> center_indices;
};

/// nms_centers + soft_membership over the mean-shift output.
ClusterAssignment assign_clusters(Var g, double bandwidth, std::size_t max_centers = kMaxClusters,
                                  double scale = 1.0);

/// Hard labels = argmax of each membership row.
std::vector<int> hard_assignment(const Tensor& membership);

}  // namespace primseg
