#pragma once

// Alternating semi-supervised training and segmentation evaluation.

#include <cstdint>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "primseg/embedder.hpp"
#include "primseg/metrics.hpp"
#include "primseg/pipeline.hpp"
#include "primseg/pointcloud.hpp"

namespace primseg {

enum class Optimizer { Sgd, Momentum };
std::string to_string(Optimizer o);
Optimizer optimizer_from_string(const std::string& s);

struct TrainConfig {
  std::size_t steps = 200;
  std::size_t batch_unlabeled = 1;
  /// Labeled shapes kept per category (0 keeps all of them).
  std::size_t labeled_k = 5;
  double learning_rate = 0.01;
  /// Learning rate of the self-supervised half-steps; <= 0 reuses learning_rate.
  double ssl_learning_rate = 0.0;
  Optimizer optimizer = Optimizer::Momentum;
  double momentum = 0.9;
  /// Global gradient-norm clip per update; 0 disables clipping.
  double clip_norm = 0.0;
  std::uint64_t seed = 0;
  double warmup_fraction = 0.1;
  PrimitiveKind primitive_kind = PrimitiveKind::Ellipsoid;
  /// false trains the classifier branch only (supervised baseline).
  bool self_supervised = true;
  /// Number of part classes; 0 infers max label + 1 from the labeled set.
  std::size_t classes = 0;
  EmbedderConfig embedder;
  PipelineConfig pipeline;
  /// Worker threads for per-shape work inside a batch.
  std::size_t threads = 1;

  /// Throws std::invalid_argument on inconsistent settings.
  void validate() const;
  nlohmann::json to_json() const;
  /// Overrides the fields present in `j`; unknown keys are an error.
  void merge_json(const nlohmann::json& j);
};

/// Raised when a step produces a non-finite loss.
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainResult {
  EmbedderParams embedder;
  ClassifierParams classifier;
  std::vector<nlohmann::json> log;  ///< one record per shape visit
  LossBreakdown final_ssl;          ///< last self-supervised breakdown
  LossBreakdown final_sl;           ///< last supervised breakdown
};

/// Category key of a shape: its name up to the last '_' (the whole name without one).
std::string shape_category(const PointCloud& pc);

/// First k shapes of each category in name order.
std::vector<PointCloud> select_few_shot(const std::vector<PointCloud>& labeled, std::size_t k);

/// Each step is one self-supervised update on `batch_unlabeled` random
/// unlabeled shapes followed by one cross-entropy update on a random labeled
/// shape. Log records are also streamed as JSON lines to `log_stream`.
TrainResult train(const std::vector<PointCloud>& unlabeled, const std::vector<PointCloud>& labeled,
                  const TrainConfig& cfg, std::ostream* log_stream = nullptr);

/// Initial parameters for `cfg` (what train() starts from).
TrainResult initial_model(const TrainConfig& cfg, std::size_t classes);

struct EvalOptions {
  /// Also cluster embeddings with mean-shift and score the clusters against part labels.
  bool with_clustering = true;
  BandwidthConfig bandwidth;
  std::size_t threads = 1;
};

/// Per-point prediction = argmax of the classifier. Throws std::invalid_argument
/// on an empty or unlabeled test set.
EvalReport evaluate_segmentation(const EmbedderParams& embedder, const ClassifierParams& classifier,
                                 const std::vector<PointCloud>& test, const EvalOptions& opts = {});

/// Hard mean-shift cluster labels of one shape's embedding.
std::vector<int> cluster_embeddings(const Tensor& embedding, const BandwidthConfig& cfg);

/// Runs fn(i) for i in [0, n) on up to `threads` workers.
void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn);

}  // namespace primseg
