#include "primseg/fit.hpp"

#include <algorithm>
#include <limits>

#include "primseg/svd3.hpp"

namespace primseg {

FitResult fit_ellipsoid(Var x, Var w, const FitConfig& cfg, std::optional<bool> force_backward) {
  const std::size_t n = x.rows();
  if (x.cols() != 3) throw ShapeError("fit_ellipsoid expects Nx3 points");
  if (w.rows() != n || w.cols() != 1) throw ShapeError("fit_ellipsoid expects Nx1 weights");
  if (!x.value().all_finite() || !w.value().all_finite()) throw NumericError("fit_ellipsoid: non-finite input");

  Var total = sum(w);
  const double z = total.value().item();
  if (!(z > 0.0)) throw NumericError("fit_ellipsoid: weights sum to zero");

  Var mu = matmul(transpose(w), x) / expand(total, 1, 3);
  Var centered = x - broadcast_rows(mu, n);
  Var cov = matmul(transpose(centered), centered * broadcast_cols(w, 3)) / expand(total, 3, 3);
  Svd3Vars svd = svd3(cov);

  FitResult res;
  res.effective_weight = z;
  res.condition_number = svd.result.condition_number();
  res.backward_enabled = force_backward.value_or(res.condition_number <= cfg.condition_cutoff &&
                                                 z >= cfg.min_effective_weight * static_cast<double>(n));

  Var axes = scale(sqrt(clamp(svd.s, kSingularValueFloor, std::numeric_limits<double>::infinity())), cfg.kappa);
  res.vars = PrimitiveVars{PrimitiveKind::Ellipsoid, mu, svd.v, axes};
  if (!res.backward_enabled) {
    res.vars = PrimitiveVars{PrimitiveKind::Ellipsoid, stop_gradient(mu), stop_gradient(svd.v), stop_gradient(axes)};
  }
  res.params = res.vars.params();
  return res;
}

PrimitiveParams fit_ellipsoid(const Tensor& x, std::span<const double> w, const FitConfig& cfg) {
  Graph g;
  return fit_ellipsoid(g.constant(x), g.constant(Tensor::col_vector(w)), cfg).params;
}

PrimitiveParams ellipsoid_to_cuboid(const PrimitiveParams& p) {
  if (p.kind != PrimitiveKind::Ellipsoid) throw std::invalid_argument("ellipsoid_to_cuboid expects an ellipsoid");
  PrimitiveParams out = p;
  out.kind = PrimitiveKind::Cuboid;
  return out;
}

PrimitiveVars ellipsoid_to_cuboid(const PrimitiveVars& p) {
  if (p.kind != PrimitiveKind::Ellipsoid) throw std::invalid_argument("ellipsoid_to_cuboid expects an ellipsoid");
  PrimitiveVars out = p;
  out.kind = PrimitiveKind::Cuboid;
  return out;
}

std::vector<FitResult> fit_all(Var x, Var w, const FitConfig& cfg, const std::vector<std::size_t>* keep,
                               const std::vector<bool>* backward) {
  const std::size_t n = x.rows();
  if (w.rows() != n) throw ShapeError("fit_all: membership rows != points");
  std::vector<std::size_t> columns;
  if (keep) {
    columns = *keep;
  } else {
    const Tensor& wv = w.value();
    for (std::size_t m = 0; m < wv.cols(); ++m) {
      double total = 0.0;
      for (std::size_t i = 0; i < n; ++i) total += wv(i, m);
      if (total >= cfg.min_effective_weight * static_cast<double>(n)) columns.push_back(m);
    }
  }
  if (columns.empty()) throw UnfittableShape("every cluster fell below the effective-weight threshold");
  if (backward && backward->size() != columns.size()) throw std::invalid_argument("fit_all: backward flag count");
  std::vector<FitResult> out;
  for (std::size_t k = 0; k < columns.size(); ++k) {
    std::optional<bool> force;
    if (backward) force = (*backward)[k];
    FitResult r = fit_ellipsoid(x, slice_cols(w, columns[k], columns[k] + 1), cfg, force);
    r.cluster = columns[k];
    out.push_back(std::move(r));
  }
  return out;
}

namespace {

// Gauss-Jordan inverse of a small SPD matrix.
Tensor invert(const Tensor& a) {
  const std::size_t n = a.rows();
  Tensor m = a;
  Tensor inv = Tensor::identity(n);
  for (std::size_t c = 0; c < n; ++c) {
    std::size_t piv = c;
    for (std::size_t r = c + 1; r < n; ++r)
      if (std::abs(m(r, c)) > std::abs(m(piv, c))) piv = r;
    if (std::abs(m(piv, c)) < 1e-300) throw NumericError("mve_fit: singular moment matrix");
    if (piv != c)
      for (std::size_t k = 0; k < n; ++k) {
        std::swap(m(c, k), m(piv, k));
        std::swap(inv(c, k), inv(piv, k));
      }
    const double d = m(c, c);
    for (std::size_t k = 0; k < n; ++k) {
      m(c, k) /= d;
      inv(c, k) /= d;
    }
    for (std::size_t r = 0; r < n; ++r) {
      if (r == c) continue;
      const double f = m(r, c);
      if (f == 0.0) continue;
      for (std::size_t k = 0; k < n; ++k) {
        m(r, k) -= f * m(c, k);
        inv(r, k) -= f * inv(c, k);
      }
    }
  }
  return inv;
}

}  // namespace

PrimitiveParams mve_fit(const Tensor& x, double tolerance, std::size_t max_iterations) {
  const std::size_t n = x.rows();
  constexpr std::size_t d = 3;
  if (x.cols() != 3) throw ShapeError("mve_fit expects Nx3 points");
  if (n < 4) throw std::invalid_argument("mve_fit needs at least 4 points");

  // Affine span check via the covariance rank.
  {
    std::vector<double> ones(n, 1.0);
    Graph g;
    Var xv = g.constant(x);
    Var w = g.constant(Tensor::col_vector(ones));
    Var mu = matmul(transpose(w), xv) / expand(sum(w), 1, 3);
    Var c = xv - broadcast_rows(mu, n);
    const Svd3Result s = svd3(matmul(transpose(c), c).value());
    if (s.s[2] <= 1e-12 * std::max(s.s[0], 1e-300)) {
      throw std::invalid_argument("mve_fit: points do not span 3-D");
    }
  }

  std::vector<double> u(n, 1.0 / static_cast<double>(n));
  std::vector<double> mdist(n);
  auto lifted_distances = [&]() {
    Tensor xm(d + 1, d + 1);
    for (std::size_t i = 0; i < n; ++i) {
      const double q[4] = {x(i, 0), x(i, 1), x(i, 2), 1.0};
      for (std::size_t r = 0; r <= d; ++r)
        for (std::size_t c = 0; c <= d; ++c) xm(r, c) += u[i] * q[r] * q[c];
    }
    const Tensor xi = invert(xm);
    for (std::size_t i = 0; i < n; ++i) {
      const double q[4] = {x(i, 0), x(i, 1), x(i, 2), 1.0};
      double s = 0.0;
      for (std::size_t r = 0; r <= d; ++r)
        for (std::size_t c = 0; c <= d; ++c) s += q[r] * xi(r, c) * q[c];
      mdist[i] = s;
    }
  };

  for (std::size_t it = 0; it < max_iterations; ++it) {
    lifted_distances();
    const std::size_t j = static_cast<std::size_t>(std::max_element(mdist.begin(), mdist.end()) - mdist.begin());
    const double mj = mdist[j];
    if (mj <= (1.0 + tolerance) * static_cast<double>(d + 1)) break;
    const double step = (mj - static_cast<double>(d) - 1.0) / (static_cast<double>(d + 1) * (mj - 1.0));
    for (double& ui : u) ui *= (1.0 - step);
    u[j] += step;
  }
  lifted_distances();

  std::array<double, 3> c{};
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < 3; ++k) c[k] += u[i] * x(i, k);
  Tensor second(3, 3);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t r = 0; r < 3; ++r)
      for (std::size_t k = 0; k < 3; ++k) second(r, k) += u[i] * x(i, r) * x(i, k);
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t k = 0; k < 3; ++k) second(r, k) -= c[r] * c[k];

  // Shape matrix A = (second)^-1 / d, scaled so max_i (x_i - c)^T A (x_i - c) = 1.
  // (x - c)^T second^-1 (x - c) = M_i - 1 for the lifted distances M_i.
  const double mmax = *std::max_element(mdist.begin(), mdist.end());
  const double scale_to_boundary = mmax - 1.0;  // A = second^-1 / scale_to_boundary
  const Svd3Result es = svd3(second);           // second = V diag(s) V^T

  PrimitiveParams p;
  p.kind = PrimitiveKind::Ellipsoid;
  p.center = c;
  p.rotation = es.v;
  for (std::size_t k = 0; k < 3; ++k) p.semi_axes[k] = std::sqrt(es.s[k] * scale_to_boundary);
  return p;
}

}  // namespace primseg
