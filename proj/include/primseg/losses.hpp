#pragma once

#include <optional>
#include <vector>

#include "json.hpp"
#include "primseg/graph.hpp"
#include "primseg/sdf.hpp"

namespace primseg {

inline constexpr double kDefaultLambdaInter = 0.001;
inline constexpr double kDefaultLambdaSim = 2.0;
inline constexpr double kProbabilityFloor = 1e-12;

/// Sum over points of the squared unsigned distance to the nearest primitive.
Var coverage_loss(Var x, const std::vector<PrimitiveVars>& prims);

/// Sum over primitive surface samples of the squared distance to the nearest input point.
Var fit_loss(const Tensor& x, Var samples);

/// Sum over primitives m, interior samples p of m, and primitives j != m of min(S_j(p), 0)^2.
Var intersection_loss(const std::vector<PrimitiveVars>& prims, const std::vector<Tensor>& interior);

/// Sum over ordered pairs i != j of (1 + g_i . g_j)^2.
Var similarity_loss(Var g);

/// Mean over points of -log(max(p[label], 1e-12)). Throws std::out_of_range on bad labels.
Var cross_entropy(Var probs, const std::vector<int>& labels);

struct LossWeights {
  double lambda_inter = kDefaultLambdaInter;
  double lambda_sim = kDefaultLambdaSim;
};

/// Component losses of one shape. Unset terms count as zero.
struct LossTerms {
  std::optional<Var> l1, l2, inter, sym, ce;
};

/// Scalar values of one shape's objective.
struct LossBreakdown {
  double l1 = 0.0;
  double l2 = 0.0;
  double recon = 0.0;
  double inter = 0.0;
  double sym = 0.0;
  double ce = 0.0;
  double total = 0.0;
  double lambda1 = kDefaultLambdaInter;
  double lambda2 = kDefaultLambdaSim;
};

struct TotalLoss {
  std::optional<Var> total;  ///< empty when no term is present
  LossBreakdown breakdown;
};

/// total = l1 + l2 + lambda1 inter [+ lambda2 sym if warmup] [+ ce if labeled].
TotalLoss total_loss(const LossTerms& terms, bool labeled, bool warmup, const LossWeights& weights = {});

/// One training-log record: {step, shape, l1, l2, inter, sym, ce, total}.
nlohmann::json log_record(std::size_t step, const std::string& shape, const LossBreakdown& b);

}  // namespace primseg
