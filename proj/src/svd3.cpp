#include "primseg/svd3.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace primseg {
namespace {

using Col = std::array<double, 3>;

double dot3(const Col& a, const Col& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }

Col column(const Tensor& m, std::size_t c) { return {m(0, c), m(1, c), m(2, c)}; }

void set_column(Tensor& m, std::size_t c, const Col& v) {
  for (std::size_t r = 0; r < 3; ++r) m(r, c) = v[r];
}

// Unit vector orthogonal to the `valid` columns of u.
Col complete_basis(const Tensor& u, const std::array<bool, 3>& valid) {
  Col best{};
  double best_norm = -1.0;
  for (std::size_t e = 0; e < 3; ++e) {
    Col cand{};
    cand[e] = 1.0;
    for (std::size_t k = 0; k < 3; ++k) {
      if (!valid[k]) continue;
      const Col uk = column(u, k);
      const double d = dot3(cand, uk);
      for (std::size_t r = 0; r < 3; ++r) cand[r] -= d * uk[r];
    }
    const double n = std::sqrt(dot3(cand, cand));
    if (n > best_norm) {
      best_norm = n;
      for (std::size_t r = 0; r < 3; ++r) best[r] = cand[r] / n;
    }
  }
  return best;
}

}  // namespace

double Svd3Result::condition_number() const {
  if (s[2] <= 0.0) return std::numeric_limits<double>::infinity();
  return s[0] / s[2];
}

Svd3Result svd3(const Tensor& m) {
  if (m.rows() != 3 || m.cols() != 3) throw ShapeError("svd3 expects 3x3, got " + m.shape_str());
  if (!m.all_finite()) throw NumericError("svd3: non-finite input");

  Tensor a = m;
  Tensor v = Tensor::identity(3);
  constexpr double kTol = 1e-15;
  constexpr int kMaxSweeps = 60;
  constexpr std::size_t kPairs[3][2] = {{0, 1}, {0, 2}, {1, 2}};

  for (int sweep = 0; sweep < kMaxSweeps; ++sweep) {
    bool rotated = false;
    for (const auto& pair : kPairs) {
      const std::size_t i = pair[0], j = pair[1];
      const Col ai = column(a, i), aj = column(a, j);
      const double alpha = dot3(ai, ai);
      const double beta = dot3(aj, aj);
      const double gamma = dot3(ai, aj);
      if (gamma == 0.0 || std::abs(gamma) <= kTol * std::sqrt(alpha * beta)) continue;
      rotated = true;
      const double zeta = (beta - alpha) / (2.0 * gamma);
      const double t = std::copysign(1.0, zeta) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
      const double c = 1.0 / std::sqrt(1.0 + t * t);
      const double s = c * t;
      for (std::size_t r = 0; r < 3; ++r) {
        const double x = a(r, i), y = a(r, j);
        a(r, i) = c * x - s * y;
        a(r, j) = s * x + c * y;
        const double p = v(r, i), q = v(r, j);
        v(r, i) = c * p - s * q;
        v(r, j) = s * p + c * q;
      }
    }
    if (!rotated) break;
  }

  std::array<double, 3> sigma{};
  for (std::size_t k = 0; k < 3; ++k) {
    const Col ak = column(a, k);
    sigma[k] = std::sqrt(dot3(ak, ak));
  }
  std::array<std::size_t, 3> order{0, 1, 2};
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t x, std::size_t y) { return sigma[x] > sigma[y]; });

  Svd3Result res;
  res.u = Tensor(3, 3);
  res.v = Tensor(3, 3);
  std::array<bool, 3> valid{};
  const double floor = std::max(sigma[order[0]] * 1e-14, std::numeric_limits<double>::min());
  for (std::size_t k = 0; k < 3; ++k) {
    const std::size_t src = order[k];
    res.s[k] = sigma[src];
    set_column(res.v, k, column(v, src));
    if (sigma[src] > floor) {
      Col uk = column(a, src);
      for (double& x : uk) x /= sigma[src];
      set_column(res.u, k, uk);
      valid[k] = true;
    }
  }
  for (std::size_t k = 0; k < 3; ++k) {
    if (valid[k]) continue;
    set_column(res.u, k, complete_basis(res.u, valid));
    valid[k] = true;
  }

  // Deterministic signs: largest-magnitude entry of each V column is positive.
  for (std::size_t k = 0; k < 3; ++k) {
    std::size_t arg = 0;
    for (std::size_t r = 1; r < 3; ++r)
      if (std::abs(res.v(r, k)) > std::abs(res.v(arg, k))) arg = r;
    if (res.v(arg, k) < 0.0) {
      for (std::size_t r = 0; r < 3; ++r) {
        res.v(r, k) = -res.v(r, k);
        res.u(r, k) = -res.u(r, k);
      }
    }
  }
  return res;
}

Tensor svd3_backward(const Svd3Result& res, const Tensor& dL_dS, const Tensor& dL_dV, double eps) {
  if (dL_dS.size() != 3) throw ShapeError("svd3_backward: dL_dS must have 3 entries");
  if (dL_dV.rows() != 3 || dL_dV.cols() != 3) throw ShapeError("svd3_backward: dL_dV must be 3x3");

  const auto& s = res.s;
  Tensor k(3, 3);
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 3; ++j) {
      if (i == j) continue;
      const double diff = s[i] - s[j];
      const double sgn = diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0);
      k(i, j) = sgn / (std::max(s[i] + s[j], eps) * std::max(std::abs(diff), eps));
    }
  }

  const Tensor inner = matmul_tn(res.v, dL_dV);  // V^T dV
  Tensor p(3, 3);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) p(i, j) = k(j, i) * inner(i, j);

  Tensor middle(3, 3);
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 3; ++j) {
      const double sym = 0.5 * (p(i, j) + p(j, i));
      middle(i, j) = 2.0 * s[i] * sym;
    }
    middle(i, i) += dL_dS[i];
  }
  return matmul_nt(matmul(res.u, middle), res.v);
}

}  // namespace primseg
