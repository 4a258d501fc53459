#pragma once

// Shared oracles for the unit tests.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "primseg/graph.hpp"

namespace testing_support {

using primseg::Graph;
using primseg::Tensor;
using primseg::Var;

using GraphFn = std::function<Var(Graph&, const std::vector<Var>&)>;

inline double eval_fn(const GraphFn& f, const std::vector<Tensor>& xs) {
  Graph g;
  std::vector<Var> vs;
  for (std::size_t k = 0; k < xs.size(); ++k) vs.push_back(g.input("x" + std::to_string(k), xs[k]));
  Var out = f(g, vs);
  return out.value().item();
}

/// Normwise relative error between the engine's gradient and central finite
/// differences over every coordinate of every input.
inline double grad_error(const GraphFn& f, const std::vector<Tensor>& xs, double h = 1e-6) {
  Graph g;
  std::vector<Var> vs;
  for (std::size_t k = 0; k < xs.size(); ++k) vs.push_back(g.input("x" + std::to_string(k), xs[k]));
  const auto grads = g.backward(f(g, vs));
  double worst = 0.0;
  for (std::size_t k = 0; k < xs.size(); ++k) {
    const Tensor& a = grads.at("x" + std::to_string(k));
    double diff = 0.0, scale = 1e-8;
    for (std::size_t i = 0; i < xs[k].size(); ++i) {
      auto p = xs, m = xs;
      p[k][i] += h;
      m[k][i] -= h;
      const double fd = (eval_fn(f, p) - eval_fn(f, m)) / (2 * h);
      diff = std::max(diff, std::abs(fd - a[i]));
      scale = std::max({scale, std::abs(fd), std::abs(a[i])});
    }
    worst = std::max(worst, diff / scale);
  }
  return worst;
}

inline Tensor random_tensor(std::mt19937_64& rng, std::size_t r, std::size_t c, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> d(lo, hi);
  Tensor t(r, c);
  for (double& v : t.flat()) v = d(rng);
  return t;
}

/// Uniform unit-sphere directions via normalized Gaussians (independent of the library's samplers).
inline Tensor sphere_points(std::mt19937_64& rng, std::size_t n, double radius = 1.0) {
  std::normal_distribution<double> d;
  Tensor t(n, 3);
  for (std::size_t i = 0; i < n; ++i) {
    double x = d(rng), y = d(rng), z = d(rng);
    const double r = std::sqrt(x * x + y * y + z * z);
    t(i, 0) = radius * x / r;
    t(i, 1) = radius * y / r;
    t(i, 2) = radius * z / r;
  }
  return t;
}

/// Rotation about an arbitrary axis (Rodrigues).
inline Tensor rotation(double ax, double ay, double az, double angle) {
  const double n = std::sqrt(ax * ax + ay * ay + az * az);
  ax /= n;
  ay /= n;
  az /= n;
  const double c = std::cos(angle), s = std::sin(angle), t = 1 - c;
  return Tensor::from({{t * ax * ax + c, t * ax * ay - s * az, t * ax * az + s * ay},
                       {t * ax * ay + s * az, t * ay * ay + c, t * ay * az - s * ax},
                       {t * ax * az - s * ay, t * ay * az + s * ax, t * az * az + c}});
}

}  // namespace testing_support
