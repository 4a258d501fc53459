#pragma once

// Per-point embedding network and per-point classifier head.
//
// Architecture: shared point-wise layers 3 -> H -> H, a global branch H -> H
// followed by max-pooling over points, and fusion layers 2H -> H -> D. Every
// hidden activation is tanh; output rows are normalized to unit length.

#include <cstdint>
#include <functional>
#include <string>

#include "json.hpp"
#include "primseg/graph.hpp"

namespace primseg {

struct EmbedderConfig {
  std::size_t hidden = 64;
  std::size_t embed_dim = 32;
};

struct EmbedderParams {
  EmbedderConfig config;
  Tensor w1, b1;  // point-wise 3 -> H
  Tensor w2, b2;  // point-wise H -> H
  Tensor w3, b3;  // global branch H -> H (then max-pool)
  Tensor w4, b4;  // fusion 2H -> H
  Tensor w5, b5;  // output H -> D

  /// uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) from the "embed-init" stream.
  static EmbedderParams init(EmbedderConfig cfg, std::uint64_t seed);

  void for_each(const std::function<void(const std::string&, Tensor&)>& fn);
  void for_each(const std::function<void(const std::string&, const Tensor&)>& fn) const;
  std::size_t parameter_count() const;
  /// Throws std::invalid_argument on inconsistent shapes or non-finite entries.
  void validate() const;
};

struct ClassifierParams {
  Tensor weight;  ///< D x C
  Tensor bias;    ///< 1 x C

  static ClassifierParams init(std::size_t embed_dim, std::size_t classes, std::uint64_t seed);
  std::size_t classes() const { return weight.cols(); }

  void for_each(const std::function<void(const std::string&, Tensor&)>& fn);
  void for_each(const std::function<void(const std::string&, const Tensor&)>& fn) const;
  void validate() const;
};

/// Parameters bound as graph inputs, named "<prefix><field>".
struct EmbedderVars {
  Var w1, b1, w2, b2, w3, b3, w4, b4, w5, b5;
};
struct ClassifierVars {
  Var weight, bias;
};

/// `as_inputs` = false binds the parameters as constants.
EmbedderVars bind(Graph& g, const EmbedderParams& p, bool as_inputs = true,
                  const std::string& prefix = "embed.");
ClassifierVars bind(Graph& g, const ClassifierParams& p, bool as_inputs = true,
                    const std::string& prefix = "classifier.");

/// N x D embedding with unit-norm rows.
Var embed(const EmbedderVars& params, Var points);
/// Logits clamped to [-50, 50] and softmax over classes (N x C).
Var classify(const ClassifierVars& params, Var embeddings);

/// Forward-only helpers.
Tensor embed(const EmbedderParams& params, const Tensor& points);
Tensor classify(const ClassifierParams& params, const Tensor& embeddings);

/// Checkpoint: {"embedder": {"hidden", "embed_dim", "params": {name: {"shape", "data"}}},
///              "classifier": {"classes", "params": {...}}}
nlohmann::json checkpoint_to_json(const EmbedderParams& e, const ClassifierParams& c);
void checkpoint_from_json(const nlohmann::json& j, EmbedderParams& e, ClassifierParams& c);

}  // namespace primseg
