#include "primseg/meanshift.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace primseg {
namespace {

double sqdist_rows(const Tensor& a, std::size_t i, const Tensor& b, std::size_t j) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.cols(); ++k) {
    const double d = a(i, k) - b(j, k);
    s += d * d;
  }
  return s;
}

Var subtract_row_max(Var logits) {
  const Tensor& v = logits.value();
  Tensor mx(v.rows(), 1);
  for (std::size_t i = 0; i < v.rows(); ++i) {
    double m = -std::numeric_limits<double>::infinity();
    for (double x : v.row(i)) m = std::max(m, x);
    mx[i] = m;
  }
  // The row maximum is a constant: softmax-style ratios are invariant to it.
  return logits - broadcast_cols(logits.graph->constant(std::move(mx)), v.cols());
}

}  // namespace

double estimate_bandwidth(const Tensor& z, std::size_t neighbor_rank) {
  const std::size_t n = z.rows();
  if (n < 2) throw std::invalid_argument("estimate_bandwidth needs at least 2 embeddings");
  if (neighbor_rank == 0) throw std::invalid_argument("neighbor_rank must be >= 1");
  const std::size_t rank = std::min(neighbor_rank, n - 1);
  std::vector<double> d(n - 1);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t w = 0;
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) d[w++] = sqdist_rows(z, i, z, j);
    std::nth_element(d.begin(), d.begin() + static_cast<long>(rank - 1), d.end());
    total += std::sqrt(d[rank - 1]);
  }
  const double b = total / static_cast<double>(n);
  if (!(b > 0.0)) {
    throw NumericError("bandwidth is zero: all embeddings coincide (enable the similarity-loss warmup)");
  }
  return b;
}

Var meanshift_iterate(Var z, double bandwidth, std::size_t iterations) {
  if (!(bandwidth > 0.0)) throw std::invalid_argument("mean-shift bandwidth must be positive");
  const std::size_t d = z.cols();
  const double inv_b2 = 1.0 / (bandwidth * bandwidth);
  Var zt = transpose(z);
  Var g = z;
  for (std::size_t t = 0; t < iterations; ++t) {
    Var logits = subtract_row_max(scale(matmul(g, zt), inv_b2));
    Var k = exp(clamp(logits, -kExpClamp, kExpClamp));
    Var density = sum_rows(k);
    g = normalize_rows(matmul(k, z) / broadcast_cols(density, d));
  }
  return g;
}

Tensor meanshift_iterate(const Tensor& z, double bandwidth, std::size_t iterations) {
  if (!(bandwidth > 0.0)) throw std::invalid_argument("mean-shift bandwidth must be positive");
  const std::size_t n = z.rows(), d = z.cols();
  const double inv_b2 = 1.0 / (bandwidth * bandwidth);
  const Tensor zt = z.transposed();
  Tensor g = z, next(n, d);
  std::vector<double> k(n);
  for (std::size_t t = 0; t < iterations; ++t) {
    for (std::size_t i = 0; i < n; ++i) {
      const double* gi = &g(i, 0);
      // Accumulate over columns of Z^T so the inner loop runs over contiguous memory.
      std::fill(k.begin(), k.end(), 0.0);
      for (std::size_t c = 0; c < d; ++c) {
        const double a = gi[c];
        const double* zc = &zt(c, 0);
        for (std::size_t j = 0; j < n; ++j) k[j] += a * zc[j];
      }
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < n; ++j) {
        k[j] *= inv_b2;
        mx = std::max(mx, k[j]);
      }
      double density = 0.0;
      double* out = &next(i, 0);
      std::fill(out, out + d, 0.0);
      for (std::size_t j = 0; j < n; ++j) {
        const double w = std::exp(std::clamp(k[j] - mx, -kExpClamp, kExpClamp));
        density += w;
        const double* zj = &z(j, 0);
        for (std::size_t c = 0; c < d; ++c) out[c] += w * zj[c];
      }
      double norm = 0.0;
      for (std::size_t c = 0; c < d; ++c) {
        out[c] /= density;
        norm += out[c] * out[c];
      }
      norm = std::sqrt(norm);
      for (std::size_t c = 0; c < d; ++c) out[c] /= norm;
    }
    std::swap(g, next);
  }
  return g;
}

std::vector<std::size_t> nms_centers(const Tensor& g, double bandwidth, std::size_t max_centers) {
  const std::size_t n = g.rows();
  if (n == 0) throw std::invalid_argument("nms_centers on empty embedding");
  const double r2 = bandwidth * bandwidth;
  std::vector<std::vector<std::size_t>> neighbors(n);
  for (std::size_t i = 0; i < n; ++i) {
    neighbors[i].push_back(i);
    for (std::size_t j = i + 1; j < n; ++j) {
      if (sqdist_rows(g, i, g, j) <= r2) {
        neighbors[i].push_back(j);
        neighbors[j].push_back(i);
      }
    }
  }
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return neighbors[a].size() > neighbors[b].size(); });

  std::vector<std::size_t> centers;
  std::vector<bool> removed(n, false);
  for (std::size_t i : order) {
    if (centers.size() >= max_centers) break;
    if (neighbors[i].size() < 2) break;
    if (removed[i]) continue;
    centers.push_back(i);
    for (std::size_t j : neighbors[i]) removed[j] = true;
  }
  if (centers.empty()) centers.push_back(order.front());
  return centers;
}

Var soft_membership_from_logits(Var logits) {
  return softmax_rows(clamp(subtract_row_max(logits), -kExpClamp, kExpClamp));
}

Var soft_membership(Var g, const Tensor& centers, double scale) {
  if (!(scale > 0.0)) throw std::invalid_argument("soft_membership: scale must be > 0");
  if (centers.cols() != g.cols() || centers.rows() == 0) {
    throw ShapeError("soft_membership: centers " + centers.shape_str() + " vs embeddings " + g.value().shape_str());
  }
  Var logits = matmul(g, g.graph->constant(centers.transposed()));
  return soft_membership_from_logits(scale == 1.0 ? logits : primseg::scale(logits, scale));
}

ClusterAssignment assign_clusters(Var g, double bandwidth, std::size_t max_centers, double scale) {
  ClusterAssignment out;
  out.center_indices = nms_centers(g.value(), bandwidth, max_centers);
  out.centers = Tensor(out.center_indices.size(), g.cols());
  for (std::size_t m = 0; m < out.center_indices.size(); ++m) {
    const auto row = g.value().row(out.center_indices[m]);
    std::copy(row.begin(), row.end(), out.centers.row(m).begin());
  }
  out.membership = soft_membership(g, out.centers, scale);
  return out;
}

std::vector<int> hard_assignment(const Tensor& w) {
  std::vector<int> out(w.rows());
  for (std::size_t i = 0; i < w.rows(); ++i) {
    std::size_t arg = 0;
    for (std::size_t j = 1; j < w.cols(); ++j)
      if (w(i, j) > w(i, arg)) arg = j;
    out[i] = static_cast<int>(arg);
  }
  return out;
}

}  // namespace primseg
