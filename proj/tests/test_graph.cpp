#include <cmath>
#include <random>

#include "doctest.h"
#include "primseg/graph.hpp"
#include "support.hpp"

using namespace primseg;
using testing_support::grad_error;
using testing_support::GraphFn;
using testing_support::random_tensor;

TEST_CASE("forward evaluates x*x and its derivative") {
  Graph g;
  Var x = g.input("x", Tensor::scalar(3.0));
  Var y = x * x;
  CHECK(y.value().item() == 9.0);
  const auto grads = g.backward(y);
  CHECK(grads.at("x").item() == 6.0);
}

TEST_CASE("sum of identity product is the trace") {
  Graph g;
  Var a = g.input("a", Tensor::identity(2));
  Var b = g.input("b", Tensor::identity(2));
  CHECK(sum(matmul(a, b)).value().item() == 2.0);
}

TEST_CASE("ellipsoid sdf composite on the unit sphere") {
  Graph g;
  Var p = g.input("p", Tensor::from({{2, 0, 0}}));
  Var s = g.input("s", Tensor::from({{1, 1, 1}}));
  CHECK(ellipsoid_sdf(p, s).value().item() == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("backward error paths") {
  Graph g;
  CHECK_THROWS_AS(g.backward(Var{}), std::logic_error);
  Var x = g.input("x", Tensor(2, 2, 1.0));
  CHECK_THROWS_AS(g.backward(x), ShapeError);
  Graph other;
  Var y = other.input("y", Tensor::scalar(1.0));
  CHECK_THROWS(g.backward(y));
}

TEST_CASE("shape mismatch is rejected at record time") {
  Graph g;
  Var a = g.input("a", Tensor(2, 3));
  Var b = g.input("b", Tensor(3, 2));
  CHECK_THROWS_AS(add(a, b), ShapeError);
  CHECK_THROWS_AS(matmul(a, a), ShapeError);
}

TEST_CASE("unused inputs get exact zero gradients") {
  Graph g;
  Var a = g.input("a", Tensor::from({{1, 2}}));
  Var unused = g.input("unused", Tensor::from({{5, 6, 7}}));
  (void)unused;
  const auto grads = g.backward(sum(square(a)));
  CHECK(grads.at("unused").same_shape(Tensor(1, 3)));
  CHECK(max_abs(grads.at("unused")) == 0.0);
  CHECK(grads.at("a")[1] == 4.0);
}

TEST_CASE("backward is bitwise deterministic") {
  std::mt19937_64 rng(7);
  const Tensor a = random_tensor(rng, 4, 5), b = random_tensor(rng, 5, 3);
  auto run = [&] {
    Graph g;
    Var x = g.input("a", a), y = g.input("b", b);
    return g.backward(sum(exp(tanh(matmul(x, y)))));
  };
  const auto g1 = run(), g2 = run();
  CHECK(g1.at("a").vec() == g2.at("a").vec());
  CHECK(g1.at("b").vec() == g2.at("b").vec());
}

TEST_CASE("finite checking raises on non-finite values") {
  Graph g(Graph::Options{true});
  Var x = g.input("x", Tensor::scalar(0.0));
  CHECK_THROWS_AS(log(x), NumericError);
  Graph lax;
  Var y = lax.input("y", Tensor::scalar(0.0));
  CHECK(std::isinf(log(y).value().item()));
}

TEST_CASE("matrix product gradient matches finite differences to 1e-6") {
  std::mt19937_64 rng(1);
  const GraphFn f = [](Graph&, const std::vector<Var>& v) { return sum(matmul(v[0], v[1])); };
  CHECK(grad_error(f, {random_tensor(rng, 3, 4), random_tensor(rng, 4, 2)}) < 1e-6);
}

TEST_CASE("every smooth op agrees with finite differences over 100 seeds") {
  // Weighted sums give every output entry a distinct cotangent.
  auto probe = [](Graph& g, Var out) {
    Tensor w(out.rows(), out.cols());
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = 0.3 + 0.1 * static_cast<double>(i % 7);
    return sum(mul(out, g.constant(w)));
  };
  struct OpCase {
    const char* name;
    double lo, hi;
    std::function<Var(Var, Var)> op;
  };
  const std::vector<OpCase> cases = {
      {"add", -1, 1, [](Var a, Var b) { return a + b; }},
      {"sub", -1, 1, [](Var a, Var b) { return a - b; }},
      {"mul", -1, 1, [](Var a, Var b) { return a * b; }},
      {"div", 0.5, 2, [](Var a, Var b) { return a / b; }},
      {"exp", -1, 1, [](Var a, Var) { return exp(a); }},
      {"log", 0.5, 2, [](Var a, Var) { return log(a); }},
      {"sqrt", 0.5, 2, [](Var a, Var) { return sqrt(a); }},
      {"abs", 0.2, 1, [](Var a, Var b) { return abs(a - scale(b, 3.0)); }},
      {"tanh", -2, 2, [](Var a, Var) { return tanh(a); }},
      {"softmax_rows", -2, 2, [](Var a, Var) { return softmax_rows(a); }},
      {"normalize_rows", 0.2, 1, [](Var a, Var b) { return normalize_rows(a - b); }},
      {"transpose", -1, 1, [](Var a, Var b) { return matmul(transpose(a), b); }},
      {"mean", -1, 1, [](Var a, Var b) { return broadcast_rows(sum_cols(a * b), 2); }},
      {"gather", -1, 1, [](Var a, Var) { return gather_rows(gather_cols(a, {0, 2, 1}), {2, 2, 0}); }},
  };
  for (const auto& c : cases) {
    CAPTURE(c.name);
    double worst = 0.0;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
      std::mt19937_64 rng(seed);
      const Tensor a = random_tensor(rng, 3, 3, c.lo, c.hi), b = random_tensor(rng, 3, 3, c.lo, c.hi);
      const GraphFn f = [&](Graph& g, const std::vector<Var>& v) { return probe(g, c.op(v[0], v[1])); };
      worst = std::max(worst, grad_error(f, {a, b}));
    }
    CHECK(worst < 1e-5);
  }
}

TEST_CASE("min and max reductions route the gradient to the selected entry") {
  Graph g;
  Var a = g.input("a", Tensor::from({{3, 1, 2}, {0, 5, 4}}));
  CHECK(min_rows(a).value().vec() == std::vector<double>{1, 0});
  CHECK(max_rows(a).value().vec() == std::vector<double>{3, 5});
  CHECK(max_cols(a).value().vec() == std::vector<double>{3, 5, 4});
  const auto grads = g.backward(sum(min_rows(a)) + scale(sum(max_cols(a)), 10.0));
  CHECK(grads.at("a").vec() == std::vector<double>{10, 1, 0, 1, 10, 10});
}

TEST_CASE("clamp passes gradient only inside the range") {
  Graph g;
  Var a = g.input("a", Tensor::from({{-2, 0.5, 3}}));
  const auto grads = g.backward(sum(clamp(a, -1, 1)));
  CHECK(grads.at("a").vec() == std::vector<double>{0, 1, 0});
}

TEST_CASE("stop_gradient blocks the path") {
  Graph g;
  Var a = g.input("a", Tensor::from({{2}}));
  const auto grads = g.backward(a * stop_gradient(a));
  CHECK(grads.at("a").item() == 2.0);
}

TEST_CASE("concat and slice are inverse") {
  Graph g;
  Var a = g.input("a", Tensor::from({{1, 2}, {3, 4}}));
  Var b = g.input("b", Tensor::from({{5}, {6}}));
  Var c = concat_cols({a, b});
  CHECK(slice_cols(c, 2, 3).value().vec() == b.value().vec());
  Var r = concat_rows({a, transpose(a)});
  CHECK(slice_rows(r, 2, 4).value().vec() == std::vector<double>{1, 3, 2, 4});
}
