#include "primseg/losses.hpp"

#include <limits>
#include <stdexcept>

namespace primseg {

Var coverage_loss(Var x, const std::vector<PrimitiveVars>& prims) {
  if (prims.empty()) throw std::invalid_argument("coverage_loss needs at least one primitive");
  std::vector<Var> cols;
  cols.reserve(prims.size());
  for (const auto& p : prims) cols.push_back(square(signed_distance(x, p)));
  Var d2 = cols.size() == 1 ? cols.front() : concat_cols(cols);
  return sum(min_rows(d2));
}

Var fit_loss(const Tensor& x, Var samples) {
  if (samples.rows() == 0) throw std::invalid_argument("fit_loss needs samples");
  return sum(min_sqdist(samples, x));
}

Var intersection_loss(const std::vector<PrimitiveVars>& prims, const std::vector<Tensor>& interior) {
  if (prims.size() != interior.size()) throw std::invalid_argument("intersection_loss: one sample set per primitive");
  if (prims.empty()) throw std::invalid_argument("intersection_loss needs primitives");
  Graph& g = *prims.front().center.graph;
  std::vector<Var> terms;
  for (std::size_t m = 0; m < prims.size(); ++m) {
    if (interior[m].rows() == 0) continue;
    Var pts = g.constant(interior[m]);
    for (std::size_t j = 0; j < prims.size(); ++j) {
      if (j == m) continue;
      Var neg_part = clamp(signed_distance(pts, prims[j]), -std::numeric_limits<double>::infinity(), 0.0);
      terms.push_back(sum(square(neg_part)));
    }
  }
  if (terms.empty()) return g.constant(Tensor::scalar(0.0));
  Var total = terms.front();
  for (std::size_t k = 1; k < terms.size(); ++k) total = total + terms[k];
  return total;
}

Var similarity_loss(Var g) {
  const std::size_t n = g.rows();
  Tensor off_diag(n, n, 1.0);
  for (std::size_t i = 0; i < n; ++i) off_diag(i, i) = 0.0;
  Var s = add_scalar(matmul(g, transpose(g)), 1.0);
  return sum(square(s) * g.graph->constant(std::move(off_diag)));
}

Var cross_entropy(Var probs, const std::vector<int>& labels) {
  const std::size_t n = probs.rows(), c = probs.cols();
  if (labels.size() != n) throw std::invalid_argument("cross_entropy: label count != rows");
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= c) {
      throw std::out_of_range("cross_entropy: label " + std::to_string(labels[i]) + " outside [0, " +
                              std::to_string(c) + ")");
    }
    idx[i] = static_cast<std::size_t>(labels[i]);
  }
  Var picked = clamp(gather_cols(probs, idx), kProbabilityFloor, std::numeric_limits<double>::infinity());
  return neg(mean(log(picked)));
}

TotalLoss total_loss(const LossTerms& t, bool labeled, bool warmup, const LossWeights& w) {
  TotalLoss out;
  LossBreakdown& b = out.breakdown;
  b.lambda1 = w.lambda_inter;
  b.lambda2 = w.lambda_sim;
  std::optional<Var> total;
  auto add_term = [&](const std::optional<Var>& v, double weight, double& slot) {
    if (!v) return;
    slot = v->value().item();
    if (weight == 0.0) return;
    Var term = weight == 1.0 ? *v : scale(*v, weight);
    total = total ? *total + term : term;
  };
  add_term(t.l1, 1.0, b.l1);
  add_term(t.l2, 1.0, b.l2);
  add_term(t.inter, w.lambda_inter, b.inter);
  if (warmup) add_term(t.sym, w.lambda_sim, b.sym);
  if (labeled) add_term(t.ce, 1.0, b.ce);
  b.recon = b.l1 + b.l2;
  b.total = b.recon + b.lambda1 * b.inter + b.lambda2 * b.sym + b.ce;
  out.total = total;
  return out;
}

nlohmann::json log_record(std::size_t step, const std::string& shape, const LossBreakdown& b) {
  return {{"step", step}, {"shape", shape}, {"l1", b.l1},   {"l2", b.l2},
          {"inter", b.inter}, {"sym", b.sym}, {"ce", b.ce}, {"total", b.total}};
}

}  // namespace primseg
