#pragma once

// Per-shape decomposition: mean-shift clustering of embeddings, weighted
// primitive fits, surface/interior sampling and the self-supervised losses.

#include <cstdint>
#include <vector>

#include "primseg/fit.hpp"
#include "primseg/losses.hpp"
#include "primseg/meanshift.hpp"
#include "primseg/sdf.hpp"

namespace primseg {

struct PipelineConfig {
  BandwidthConfig bandwidth;
  FitConfig fit;
  PrimitiveKind primitive_kind = PrimitiveKind::Ellipsoid;
  std::size_t surface_samples = 10000;
  std::size_t interior_samples = 128;
  LossWeights weights;
};

/// Every decision taken outside the gradient graph. Replaying it makes the
/// forward pass a smooth function of the embedding, which is what finite
/// differences need.
struct FrozenDecomposition {
  double bandwidth = 0.0;
  std::vector<std::size_t> center_indices;
  Tensor centers;
  std::vector<std::size_t> kept_clusters;
  std::vector<bool> backward_enabled;
  SurfaceSamplePlan surface_plan;
  std::vector<Tensor> interior;
};

struct Decomposition {
  Var grouped;     ///< mean-shift output G
  Var membership;  ///< N x M
  std::vector<FitResult> fits;
  std::vector<PrimitiveVars> prims;  ///< of the configured kind
  Var surface_samples;
  LossTerms terms;  ///< l1, l2, inter and (when requested) sym
  FrozenDecomposition frozen;

  std::vector<PrimitiveParams> primitives() const;
};

struct DecomposeOptions {
  bool with_similarity = true;
  bool with_losses = true;
  const FrozenDecomposition* replay = nullptr;
};

/// `embeddings`: N x D unit rows on a graph; `points`: the N x 3 coordinates.
/// Throws NumericError (zero bandwidth) or UnfittableShape.
Decomposition decompose(Var embeddings, const Tensor& points, const PipelineConfig& cfg, std::uint64_t seed,
                        const DecomposeOptions& opts = {});

}  // namespace primseg
