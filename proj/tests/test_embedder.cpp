#include <cmath>
#include <numeric>
#include <random>

#include "doctest.h"
#include "primseg/embedder.hpp"
#include "support.hpp"

using namespace primseg;
using testing_support::random_tensor;

TEST_CASE("embeddings have unit rows and are permutation equivariant") {
  const EmbedderParams p = EmbedderParams::init({}, 3);
  CHECK(p.w1.rows() == 3);
  CHECK(p.w1.cols() == 64);
  CHECK(p.w5.cols() == 32);
  std::mt19937_64 rng(1);
  const Tensor x = random_tensor(rng, 40, 3);
  const Tensor z = embed(p, x);
  REQUIRE(z.rows() == 40);
  for (std::size_t i = 0; i < 40; ++i) {
    double n = 0.0;
    for (double v : z.row(i)) n += v * v;
    CHECK(std::abs(std::sqrt(n) - 1.0) < 1e-6);
  }
  std::vector<std::size_t> perm(40);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  Tensor xp(40, 3);
  for (std::size_t i = 0; i < 40; ++i)
    for (std::size_t d = 0; d < 3; ++d) xp(i, d) = x(perm[i], d);
  const Tensor zp = embed(p, xp);
  for (std::size_t i = 0; i < 40; ++i)
    for (std::size_t d = 0; d < 32; ++d) REQUIRE(zp(i, d) == z(perm[i], d));
}

TEST_CASE("initialization is seeded and bounded by 1/sqrt(fan_in)") {
  const EmbedderParams a = EmbedderParams::init({16, 8}, 5), b = EmbedderParams::init({16, 8}, 5),
                       c = EmbedderParams::init({16, 8}, 6);
  CHECK(a.w2.vec() == b.w2.vec());
  CHECK(a.w2.vec() != c.w2.vec());
  CHECK(max_abs(a.w4) <= 1.0 / std::sqrt(32.0));
  CHECK(max_abs(a.w1) <= 1.0 / std::sqrt(3.0));
}

TEST_CASE("embedding gradient matches finite differences") {
  const EmbedderParams p = EmbedderParams::init({8, 4}, 2);
  std::mt19937_64 rng(4);
  const Tensor x = random_tensor(rng, 16, 3);
  std::vector<Tensor> params;
  p.for_each([&](const std::string&, const Tensor& t) { params.push_back(t); });
  const testing_support::GraphFn f = [&](Graph& g, const std::vector<Var>& v) {
    const EmbedderVars ev{v[0], v[1], v[2], v[3], v[4], v[5], v[6], v[7], v[8], v[9]};
    Var z = embed(ev, g.constant(x));
    // Weighted sum so that row normalization does not cancel the cotangent.
    Tensor w(16, 4);
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = std::sin(static_cast<double>(i));
    return sum(mul(z, g.constant(w)));
  };
  CHECK(testing_support::grad_error(f, params) < 1e-5);
}

TEST_CASE("classifier outputs rows on the simplex") {
  ClassifierParams c;
  c.weight = Tensor(8, 4);
  c.bias = Tensor(1, 4);
  std::mt19937_64 rng(2);
  const Tensor probs = classify(c, random_tensor(rng, 5, 8));
  for (double v : probs.flat()) CHECK(v == doctest::Approx(0.25));

  // Huge logits are clamped but keep the argmax.
  ClassifierParams big;
  big.weight = Tensor::from({{1000, 0}});
  big.bias = Tensor(1, 2);
  const Tensor p = classify(big, Tensor::from({{1.0}}));
  CHECK(p.all_finite());
  CHECK(p(0, 0) > p(0, 1));
  CHECK(p(0, 0) + p(0, 1) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("classify rejects mismatched embeddings") {
  const ClassifierParams c = ClassifierParams::init(8, 3, 1);
  CHECK_THROWS(classify(c, Tensor(4, 5)));
}

TEST_CASE("checkpoint round trip") {
  const EmbedderParams e = EmbedderParams::init({12, 6}, 9);
  const ClassifierParams c = ClassifierParams::init(6, 5, 9);
  EmbedderParams e2;
  ClassifierParams c2;
  checkpoint_from_json(nlohmann::json::parse(checkpoint_to_json(e, c).dump()), e2, c2);
  CHECK(e2.config.hidden == 12);
  CHECK(e2.config.embed_dim == 6);
  CHECK(e2.w3.vec() == e.w3.vec());
  CHECK(c2.weight.vec() == c.weight.vec());
  CHECK(c2.classes() == 5);
  nlohmann::json bad = checkpoint_to_json(e, c);
  bad["embedder"]["params"]["w2"]["shape"] = {3, 3};
  CHECK_THROWS(checkpoint_from_json(bad, e2, c2));
}

TEST_CASE("non-finite parameters are rejected") {
  EmbedderParams e = EmbedderParams::init({8, 4}, 1);
  e.b2[0] = std::nan("");
  CHECK_THROWS(e.validate());
  Graph g;
  CHECK_THROWS(bind(g, e));
}
