#include <cmath>
#include <random>

#include "doctest.h"
#include "primseg/graph.hpp"
#include "primseg/svd3.hpp"
#include "support.hpp"

using namespace primseg;
using testing_support::random_tensor;

namespace {

Tensor reconstruct(const Svd3Result& r) {
  Tensor us = r.u;
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t k = 0; k < 3; ++k) us(i, k) *= r.s[k];
  return matmul_nt(us, r.v);
}

double orthogonality_error(const Tensor& q) { return max_abs_diff(matmul_tn(q, q), Tensor::identity(3)); }

// Scalar test function of (S, V) whose cotangents are generic.
double objective(const Svd3Result& r, const Tensor& ws, const Tensor& wv) {
  double f = 0.0;
  for (std::size_t k = 0; k < 3; ++k) f += ws[k] * r.s[k];
  for (std::size_t i = 0; i < 9; ++i) f += wv[i] * r.v[i];
  return f;
}

}  // namespace

TEST_CASE("identity and diagonal inputs") {
  const Svd3Result id = svd3(Tensor::identity(3));
  CHECK(id.s == std::array<double, 3>{1, 1, 1});
  const Svd3Result d = svd3(Tensor::from({{1, 0, 0}, {0, 0.25, 0}, {0, 0, 4}}));
  CHECK(d.s[0] == doctest::Approx(4));
  CHECK(d.s[1] == doctest::Approx(1));
  CHECK(d.s[2] == doctest::Approx(0.25));
  // v is a signed permutation: each column has one entry of magnitude 1, positive by convention.
  for (std::size_t k = 0; k < 3; ++k) {
    double mx = 0.0;
    for (std::size_t r = 0; r < 3; ++r) mx = std::max(mx, d.v(r, k));
    CHECK(mx == doctest::Approx(1.0));
  }
  CHECK(d.v(2, 0) == doctest::Approx(1.0));
  CHECK(d.v(0, 1) == doctest::Approx(1.0));
  CHECK(d.v(1, 2) == doctest::Approx(1.0));
}

TEST_CASE("non-finite input is rejected") {
  Tensor m = Tensor::identity(3);
  m(1, 2) = std::nan("");
  CHECK_THROWS_AS(svd3(m), NumericError);
  CHECK_THROWS_AS(svd3(Tensor(2, 3)), ShapeError);
}

TEST_CASE("reconstruction and orthogonality on 1000 matrices including rank-deficient ones") {
  std::mt19937_64 rng(42);
  double worst_rec = 0.0, worst_orth = 0.0;
  for (int i = 0; i < 1000; ++i) {
    Tensor m = random_tensor(rng, 3, 3);
    if (i % 4 == 1) {  // rank 2
      for (std::size_t r = 0; r < 3; ++r) m(r, 2) = m(r, 0) - 0.5 * m(r, 1);
    } else if (i % 4 == 2) {  // rank 1
      for (std::size_t r = 0; r < 3; ++r) m(r, 1) = 2 * m(r, 0), m(r, 2) = -m(r, 0);
    } else if (i % 4 == 3) {  // symmetric PSD
      m = matmul_tn(m, m);
    }
    const Svd3Result r = svd3(m);
    CHECK(r.s[0] >= r.s[1]);
    CHECK(r.s[1] >= r.s[2]);
    CHECK(r.s[2] >= 0.0);
    const Tensor rec = reconstruct(r);
    double err = 0.0;
    for (std::size_t k = 0; k < 9; ++k) err += (rec[k] - m[k]) * (rec[k] - m[k]);
    worst_rec = std::max(worst_rec, std::sqrt(err) / frobenius(m));
    worst_orth = std::max({worst_orth, orthogonality_error(r.u), orthogonality_error(r.v)});
  }
  CHECK(worst_rec < 1e-12);
  CHECK(worst_orth < 1e-10);
}

TEST_CASE("zero cotangent gives zero gradient") {
  const Svd3Result r = svd3(Tensor::from({{2, 1, 0}, {1, 3, 0.5}, {0, 0.5, 1}}));
  CHECK(max_abs(svd3_backward(r, Tensor(1, 3), Tensor(3, 3))) == 0.0);
}

TEST_CASE("backward matches finite differences on well-separated spectra") {
  std::mt19937_64 rng(3);
  const Tensor ws = random_tensor(rng, 1, 3), wv = random_tensor(rng, 3, 3);
  // Rotate diag(4, 1, 0.25) so the input is not axis aligned.
  const Tensor q = testing_support::rotation(1, 2, 3, 0.7);
  const Tensor m = matmul(matmul(q, Tensor::from({{4, 0, 0}, {0, 1, 0}, {0, 0, 0.25}})), q.transposed());
  const Svd3Result r = svd3(m);
  const Tensor g = svd3_backward(r, ws, wv);
  const double h = 1e-6;
  double diff = 0.0, scale = 0.0;
  for (std::size_t i = 0; i < 9; ++i) {
    Tensor p = m, n = m;
    p[i] += h;
    n[i] -= h;
    const double fd = (objective(svd3(p), ws, wv) - objective(svd3(n), ws, wv)) / (2 * h);
    diff = std::max(diff, std::abs(fd - g[i]));
    scale = std::max({scale, std::abs(fd), std::abs(g[i])});
  }
  CHECK(diff / scale < 1e-5);
}

TEST_CASE("near-degenerate spectrum yields bounded gradients") {
  const Tensor m = Tensor::from({{1, 0, 0}, {0, 1 + 1e-9, 0}, {0, 0, 0.5}});
  const Svd3Result r = svd3(m);
  const Tensor g = svd3_backward(r, Tensor::from({{1, 1, 1}}), Tensor(3, 3, 1.0));
  CHECK(g.all_finite());
  CHECK(max_abs(g) < 1e7);
}

TEST_CASE("graph svd3 node exposes s and v") {
  Graph g;
  Var m = g.input("m", Tensor::from({{3, 1, 0}, {1, 2, 0}, {0, 0, 1}}));
  const Svd3Vars sv = svd3(m);
  CHECK(sv.s.rows() == 1);
  CHECK(sv.s.cols() == 3);
  CHECK(sv.v.rows() == 3);
  const auto grads = g.backward(sum(sv.s));
  // d(sum of singular values)/dM = U V^T for a full-rank matrix.
  CHECK(max_abs_diff(grads.at("m"), matmul_nt(sv.result.u, sv.result.v)) < 1e-9);
}
