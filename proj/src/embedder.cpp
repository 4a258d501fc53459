#include "primseg/embedder.hpp"

#include <cmath>

#include "primseg/rng.hpp"

namespace primseg {
namespace {

Tensor uniform_tensor(std::size_t rows, std::size_t cols, double bound, Rng& rng) {
  Tensor t(rows, cols);
  for (double& v : t.flat()) v = uniform(rng, -bound, bound);
  return t;
}

void init_layer(Tensor& w, Tensor& b, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  w = uniform_tensor(fan_in, fan_out, bound, rng);
  b = uniform_tensor(1, fan_out, bound, rng);
}

Var dense(Var x, Var w, Var b) { return matmul(x, w) + broadcast_rows(b, x.rows()); }

nlohmann::json tensor_json(const Tensor& t) {
  return {{"shape", {t.rows(), t.cols()}}, {"data", t.vec()}};
}

Tensor tensor_from_json(const nlohmann::json& j) {
  const auto shape = j.at("shape").get<std::vector<std::size_t>>();
  if (shape.size() != 2) throw std::invalid_argument("checkpoint tensor shape must have 2 entries");
  return Tensor(shape[0], shape[1], j.at("data").get<std::vector<double>>());
}

void check_shape(const Tensor& t, std::size_t r, std::size_t c, const char* what) {
  if (t.rows() != r || t.cols() != c) {
    throw std::invalid_argument(std::string("parameter ") + what + " has shape " + t.shape_str() + ", expected [" +
                                std::to_string(r) + "x" + std::to_string(c) + "]");
  }
  if (!t.all_finite()) throw std::invalid_argument(std::string("parameter ") + what + " is not finite");
}

}  // namespace

EmbedderParams EmbedderParams::init(EmbedderConfig cfg, std::uint64_t seed) {
  if (cfg.hidden == 0 || cfg.embed_dim == 0) throw std::invalid_argument("embedder widths must be positive");
  Rng rng = make_rng(seed, "embed-init");
  EmbedderParams p;
  p.config = cfg;
  const std::size_t h = cfg.hidden;
  init_layer(p.w1, p.b1, 3, h, rng);
  init_layer(p.w2, p.b2, h, h, rng);
  init_layer(p.w3, p.b3, h, h, rng);
  init_layer(p.w4, p.b4, 2 * h, h, rng);
  init_layer(p.w5, p.b5, h, cfg.embed_dim, rng);
  return p;
}

void EmbedderParams::for_each(const std::function<void(const std::string&, Tensor&)>& fn) {
  fn("w1", w1); fn("b1", b1);
  fn("w2", w2); fn("b2", b2);
  fn("w3", w3); fn("b3", b3);
  fn("w4", w4); fn("b4", b4);
  fn("w5", w5); fn("b5", b5);
}

void EmbedderParams::for_each(const std::function<void(const std::string&, const Tensor&)>& fn) const {
  const_cast<EmbedderParams*>(this)->for_each([&](const std::string& n, Tensor& t) { fn(n, t); });
}

std::size_t EmbedderParams::parameter_count() const {
  std::size_t n = 0;
  for_each([&](const std::string&, const Tensor& t) { n += t.size(); });
  return n;
}

void EmbedderParams::validate() const {
  const std::size_t h = config.hidden, d = config.embed_dim;
  check_shape(w1, 3, h, "w1"); check_shape(b1, 1, h, "b1");
  check_shape(w2, h, h, "w2"); check_shape(b2, 1, h, "b2");
  check_shape(w3, h, h, "w3"); check_shape(b3, 1, h, "b3");
  check_shape(w4, 2 * h, h, "w4"); check_shape(b4, 1, h, "b4");
  check_shape(w5, h, d, "w5"); check_shape(b5, 1, d, "b5");
}

ClassifierParams ClassifierParams::init(std::size_t embed_dim, std::size_t classes, std::uint64_t seed) {
  if (classes == 0) throw std::invalid_argument("classifier needs at least one class");
  Rng rng = make_rng(seed, "classifier-init");
  ClassifierParams p;
  init_layer(p.weight, p.bias, embed_dim, classes, rng);
  return p;
}

void ClassifierParams::for_each(const std::function<void(const std::string&, Tensor&)>& fn) {
  fn("weight", weight);
  fn("bias", bias);
}

void ClassifierParams::for_each(const std::function<void(const std::string&, const Tensor&)>& fn) const {
  fn("weight", weight);
  fn("bias", bias);
}

void ClassifierParams::validate() const {
  check_shape(bias, 1, weight.cols(), "classifier.bias");
  check_shape(weight, weight.rows(), weight.cols(), "classifier.weight");
}

EmbedderVars bind(Graph& g, const EmbedderParams& p, bool as_inputs, const std::string& prefix) {
  p.validate();
  auto b = [&](const char* n, const Tensor& t) { return as_inputs ? g.input(prefix + n, t) : g.constant(t); };
  return EmbedderVars{b("w1", p.w1), b("b1", p.b1), b("w2", p.w2), b("b2", p.b2), b("w3", p.w3),
                      b("b3", p.b3), b("w4", p.w4), b("b4", p.b4), b("w5", p.w5), b("b5", p.b5)};
}

ClassifierVars bind(Graph& g, const ClassifierParams& p, bool as_inputs, const std::string& prefix) {
  p.validate();
  if (as_inputs) return ClassifierVars{g.input(prefix + "weight", p.weight), g.input(prefix + "bias", p.bias)};
  return ClassifierVars{g.constant(p.weight), g.constant(p.bias)};
}

Var embed(const EmbedderVars& p, Var points) {
  if (points.cols() != 3) throw ShapeError("embed expects Nx3 points, got " + points.value().shape_str());
  const std::size_t n = points.rows();
  Var h1 = tanh(dense(points, p.w1, p.b1));
  Var h2 = tanh(dense(h1, p.w2, p.b2));
  Var pooled = max_cols(tanh(dense(h2, p.w3, p.b3)));
  Var fused = concat_cols({h2, broadcast_rows(pooled, n)});
  Var h4 = tanh(dense(fused, p.w4, p.b4));
  return normalize_rows(dense(h4, p.w5, p.b5));
}

Var classify(const ClassifierVars& p, Var z) {
  if (z.cols() != p.weight.rows()) {
    throw ShapeError("classify: embedding dim " + std::to_string(z.cols()) + " vs classifier input " +
                     std::to_string(p.weight.rows()));
  }
  return softmax_rows(clamp(dense(z, p.weight, p.bias), -50.0, 50.0));
}

Tensor embed(const EmbedderParams& params, const Tensor& points) {
  Graph g;
  return embed(bind(g, params, false), g.constant(points)).value();
}

Tensor classify(const ClassifierParams& params, const Tensor& embeddings) {
  Graph g;
  return classify(bind(g, params, false), g.constant(embeddings)).value();
}

nlohmann::json checkpoint_to_json(const EmbedderParams& e, const ClassifierParams& c) {
  nlohmann::json ep = nlohmann::json::object();
  e.for_each([&](const std::string& n, const Tensor& t) { ep[n] = tensor_json(t); });
  nlohmann::json cp = nlohmann::json::object();
  c.for_each([&](const std::string& n, const Tensor& t) { cp[n] = tensor_json(t); });
  return {{"embedder", {{"hidden", e.config.hidden}, {"embed_dim", e.config.embed_dim}, {"params", ep}}},
          {"classifier", {{"classes", c.classes()}, {"params", cp}}}};
}

void checkpoint_from_json(const nlohmann::json& j, EmbedderParams& e, ClassifierParams& c) {
  const auto& je = j.at("embedder");
  EmbedderParams ne;
  ne.config.hidden = je.at("hidden").get<std::size_t>();
  ne.config.embed_dim = je.at("embed_dim").get<std::size_t>();
  ne.for_each([&](const std::string& n, Tensor& t) { t = tensor_from_json(je.at("params").at(n)); });
  ne.validate();
  ClassifierParams nc;
  nc.for_each([&](const std::string& n, Tensor& t) { t = tensor_from_json(j.at("classifier").at("params").at(n)); });
  nc.validate();
  if (nc.weight.rows() != ne.config.embed_dim) throw std::invalid_argument("checkpoint classifier/embedder mismatch");
  e = std::move(ne);
  c = std::move(nc);
}

}  // namespace primseg
