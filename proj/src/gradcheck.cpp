#include "primseg/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>

#include "primseg/embedder.hpp"
#include "primseg/fit.hpp"
#include "primseg/losses.hpp"
#include "primseg/meanshift.hpp"
#include "primseg/pipeline.hpp"
#include "primseg/rng.hpp"
#include "primseg/sdf.hpp"
#include "primseg/synthetic.hpp"

namespace primseg {

bool GradcheckReport::all_passed() const {
  return std::all_of(entries.begin(), entries.end(), [](const GradcheckEntry& e) { return e.passed; });
}

std::vector<std::string> GradcheckReport::failures() const {
  std::vector<std::string> out;
  for (const auto& e : entries)
    if (!e.passed) out.push_back(e.name);
  return out;
}

nlohmann::json GradcheckReport::to_json() const {
  nlohmann::json list = nlohmann::json::array();
  for (const auto& e : entries) {
    nlohmann::json j = {{"name", e.name}, {"passed", e.passed}, {"skipped", e.skipped}};
    j["max_rel_error"] = e.skipped ? nlohmann::json(nullptr) : nlohmann::json(e.max_rel_error);
    if (!e.note.empty()) j["note"] = e.note;
    list.push_back(j);
  }
  return {{"seed", seed}, {"tolerance", tolerance}, {"all_passed", all_passed()}, {"entries", list}};
}

namespace {

using Inputs = std::vector<Var>;
/// Builds the function under test; may set `skip` to a reason instead.
using Builder = std::function<Var(Graph&, const Inputs&, std::string& skip)>;

struct Case {
  std::string name;
  std::function<std::vector<Tensor>(Rng&)> make_inputs;
  Builder build;
  /// Multiplies the finite-difference step; large sums need a longer step to stay clear of roundoff.
  double step_scale = 1.0;
};

Tensor randn(Rng& rng, std::size_t r, std::size_t c, double scale = 1.0) {
  Tensor t(r, c);
  for (double& v : t.flat()) v = scale * normal01(rng);
  return t;
}

Tensor rand_uniform(Rng& rng, std::size_t r, std::size_t c, double lo, double hi) {
  Tensor t(r, c);
  for (double& v : t.flat()) v = uniform(rng, lo, hi);
  return t;
}

Tensor unit_rows(Tensor t) {
  for (std::size_t i = 0; i < t.rows(); ++i) {
    double n = 0.0;
    for (double v : t.row(i)) n += v * v;
    n = std::sqrt(n);
    for (double& v : t.row(i)) v /= n;
  }
  return t;
}

// Distinct values with a guaranteed gap of 0.1, in random order.
Tensor spread(Rng& rng, std::size_t r, std::size_t c) {
  std::vector<double> vals(r * c);
  for (std::size_t i = 0; i < vals.size(); ++i) vals[i] = 0.1 * static_cast<double>(i) + uniform(rng, 0.0, 0.02);
  for (std::size_t i = vals.size(); i > 1; --i) std::swap(vals[i - 1], vals[uniform_index(rng, i)]);
  for (double& v : vals) v -= 0.05 * static_cast<double>(r * c);
  return Tensor(r, c, vals);
}

// Points on a unit-spaced grid; queries near grid points have an unambiguous nearest target.
Tensor grid_targets() {
  Tensor t(12, 3);
  for (std::size_t i = 0; i < 12; ++i) {
    t(i, 0) = static_cast<double>(i % 3);
    t(i, 1) = static_cast<double>((i / 3) % 2);
    t(i, 2) = static_cast<double>(i / 6);
  }
  return t;
}

Tensor near_grid(Rng& rng, std::size_t n) {
  const Tensor t = grid_targets();
  Tensor q(n, 3);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t k = uniform_index(rng, t.rows());
    for (std::size_t d = 0; d < 3; ++d) q(i, d) = t(k, d) + uniform(rng, -0.2, 0.2);
  }
  return q;
}

std::function<Tensor(Rng&)> spread_fn() {
  return [](Rng& r) { return spread(r, 3, 4); };
}

// Scalar probe: sum of the output weighted by fixed pseudo-random coefficients,
// so every output entry contributes a distinct cotangent.
Var probe(Graph& g, Var out) {
  if (out.rows() == 1 && out.cols() == 1) return out;
  Tensor w(out.rows(), out.cols());
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = 0.5 + std::fmod(0.618033988749895 * static_cast<double>(i + 1), 1.0);
  return sum(mul(out, g.constant(w)));
}

double evaluate(const Case& c, const std::vector<Tensor>& inputs) {
  Graph g;
  Inputs vars;
  for (std::size_t k = 0; k < inputs.size(); ++k) vars.push_back(g.input("in" + std::to_string(k), inputs[k]));
  std::string skip;
  return probe(g, c.build(g, vars, skip)).value().item();
}

GradcheckEntry run_case(const Case& c, Rng& rng, const GradcheckOptions& opts) {
  GradcheckEntry e;
  e.name = c.name;
  const std::vector<Tensor> inputs = c.make_inputs(rng);

  Graph g;
  Inputs vars;
  for (std::size_t k = 0; k < inputs.size(); ++k) vars.push_back(g.input("in" + std::to_string(k), inputs[k]));
  std::string skip;
  Var root = probe(g, c.build(g, vars, skip));
  if (!skip.empty()) {
    e.skipped = true;
    e.note = "skipped (" + skip + ")";
    return e;
  }
  Gradients grads = g.backward(root);
  if (c.name == opts.break_op) {
    for (auto& [n, t] : grads)
      for (double& v : t.flat()) v = 1.01 * v + 1e-3;
  }

  const double h = opts.step * c.step_scale;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const Tensor& analytic = grads.at("in" + std::to_string(k));
    std::vector<std::size_t> idx(inputs[k].size());
    std::iota(idx.begin(), idx.end(), 0);
    if (idx.size() > opts.max_entries_per_input) {
      for (std::size_t i = 0; i < opts.max_entries_per_input; ++i)
        std::swap(idx[i], idx[i + uniform_index(rng, idx.size() - i)]);
      idx.resize(opts.max_entries_per_input);
    }
    double worst = 0.0, fd_norm = 0.0, an_norm = 0.0;
    for (std::size_t i : idx) {
      std::vector<Tensor> plus = inputs, minus = inputs;
      plus[k][i] += h;
      minus[k][i] -= h;
      const double fd = (evaluate(c, plus) - evaluate(c, minus)) / (2.0 * h);
      worst = std::max(worst, std::abs(fd - analytic[i]));
      fd_norm = std::max(fd_norm, std::abs(fd));
      an_norm = std::max(an_norm, std::abs(analytic[i]));
    }
    const double rel = worst / std::max({fd_norm, an_norm, 1e-8});
    e.max_rel_error = std::max(e.max_rel_error, std::isfinite(rel) ? rel : std::numeric_limits<double>::infinity());
  }
  e.passed = e.max_rel_error < opts.tolerance;
  return e;
}

PrimitiveVars prim_from(const Inputs& in, std::size_t offset, PrimitiveKind kind = PrimitiveKind::Ellipsoid) {
  return PrimitiveVars{kind, in[offset], in[offset + 1], in[offset + 2]};
}

// Random rotation as a plain 3x3 tensor.
Tensor random_rotation(Rng& rng) { return svd3(randn(rng, 3, 3)).v; }

EmbedderVars embedder_from(const Inputs& in, std::size_t o) {
  return EmbedderVars{in[o],     in[o + 1], in[o + 2], in[o + 3], in[o + 4],
                      in[o + 5], in[o + 6], in[o + 7], in[o + 8], in[o + 9]};
}

std::vector<Tensor> params_list(const EmbedderParams& ep) {
  std::vector<Tensor> out;
  ep.for_each([&](const std::string&, const Tensor& t) { out.push_back(t); });
  return out;
}

// Shape, model and frozen decomposition behind the full-objective case.
struct ObjectiveFixture {
  PointCloud cloud;
  std::vector<int> labels;
  EmbedderParams embedder;
  ClassifierParams classifier;
  PipelineConfig cfg;
  FrozenDecomposition frozen;
  std::uint64_t seed = 0;
};

ObjectiveFixture make_objective_fixture(std::uint64_t seed) {
  ObjectiveFixture f;
  f.seed = seed;
  f.cloud = normalize(generate_synthetic(random_separated_spec(3, seed, 64)));
  f.labels = *f.cloud.labels;
  f.cfg.bandwidth.neighbor_rank = 12;
  f.cfg.bandwidth.iterations = 5;
  f.cfg.surface_samples = 96;
  f.cfg.interior_samples = 16;
  // Look for an initialization whose decomposition has 2..4 primitives.
  for (std::uint64_t attempt = 0; attempt < 64; ++attempt) {
    const std::uint64_t s = derive_seed(seed, "gradcheck-model") + attempt;
    f.embedder = EmbedderParams::init({16, 8}, s);
    Graph g;
    Var z = embed(bind(g, f.embedder, false), g.constant(f.cloud.points));
    try {
      const Decomposition d = decompose(z, f.cloud.points, f.cfg, s);
      f.frozen = d.frozen;
      f.classifier = ClassifierParams::init(8, 3, s);
      if (d.prims.size() >= 2 && d.prims.size() <= 4) return f;
    } catch (const UnfittableShape&) {
    }
  }
  return f;
}

Var full_objective(const ObjectiveFixture& f, const Inputs& in, std::string& skip) {
  Graph& g = *in[0].graph;
  Var z = embed(embedder_from(in, 0), g.constant(f.cloud.points));
  DecomposeOptions opts;
  opts.replay = &f.frozen;
  Decomposition d = decompose(z, f.cloud.points, f.cfg, f.seed, opts);
  for (bool b : f.frozen.backward_enabled)
    if (!b) skip = "condition cutoff";
  d.terms.ce = cross_entropy(classify(ClassifierVars{in[10], in[11]}, z), f.labels);
  return *total_loss(d.terms, true, true, f.cfg.weights).total;
}

std::vector<Case> registry(std::uint64_t seed) {
  std::vector<Case> cs;
  auto unary = [&](std::string name, std::function<Tensor(Rng&)> gen, std::function<Var(Var)> op) {
    cs.push_back({std::move(name), [gen](Rng& r) { return std::vector<Tensor>{gen(r)}; },
                  [op](Graph&, const Inputs& in, std::string&) { return op(in[0]); }});
  };
  auto binary = [&](std::string name, std::function<Tensor(Rng&)> ga, std::function<Tensor(Rng&)> gb,
                    std::function<Var(Var, Var)> op) {
    cs.push_back({std::move(name), [ga, gb](Rng& r) { return std::vector<Tensor>{ga(r), gb(r)}; },
                  [op](Graph&, const Inputs& in, std::string&) { return op(in[0], in[1]); }});
  };
  auto normal34 = [](Rng& r) { return randn(r, 3, 4); };
  auto positive34 = [](Rng& r) { return rand_uniform(r, 3, 4, 0.5, 2.0); };
  auto away_from_zero = [](Rng& r) {
    Tensor t = rand_uniform(r, 3, 4, 0.3, 1.5);
    for (double& v : t.flat())
      if (uniform01(r) < 0.5) v = -v;
    return t;
  };

  binary("add", normal34, normal34, [](Var a, Var b) { return a + b; });
  binary("sub", normal34, normal34, [](Var a, Var b) { return a - b; });
  binary("mul", normal34, normal34, [](Var a, Var b) { return a * b; });
  binary("div", normal34, away_from_zero, [](Var a, Var b) { return a / b; });
  unary("neg", normal34, [](Var a) { return neg(a); });
  unary("scale", normal34, [](Var a) { return scale(a, -1.7); });
  unary("add_scalar", normal34, [](Var a) { return add_scalar(a, 0.3); });
  unary("square", normal34, [](Var a) { return square(a); });
  unary("exp", normal34, [](Var a) { return exp(a); });
  unary("log", positive34, [](Var a) { return log(a); });
  unary("sqrt", positive34, [](Var a) { return sqrt(a); });
  unary("abs", away_from_zero, [](Var a) { return abs(a); });
  unary("tanh", normal34, [](Var a) { return tanh(a); });
  unary("clamp", spread_fn(), [](Var a) { return clamp(a, -0.27, 0.33); });
  binary("matmul", normal34, [](Rng& r) { return randn(r, 4, 2); }, [](Var a, Var b) { return matmul(a, b); });
  unary("transpose", normal34, [](Var a) { return transpose(a); });
  unary("broadcast_rows", [](Rng& r) { return randn(r, 1, 4); }, [](Var a) { return broadcast_rows(a, 3); });
  unary("broadcast_cols", [](Rng& r) { return randn(r, 3, 1); }, [](Var a) { return broadcast_cols(a, 4); });
  unary("expand", [](Rng& r) { return randn(r, 1, 1); }, [](Var a) { return expand(a, 2, 3); });
  binary("concat_cols", normal34, [](Rng& r) { return randn(r, 3, 2); },
         [](Var a, Var b) { return concat_cols({a, b, a}); });
  binary("concat_rows", normal34, [](Rng& r) { return randn(r, 2, 4); },
         [](Var a, Var b) { return concat_rows({b, a}); });
  unary("slice_cols", normal34, [](Var a) { return slice_cols(a, 1, 3); });
  unary("slice_rows", normal34, [](Var a) { return slice_rows(a, 1, 3); });
  unary("gather_cols", normal34, [](Var a) { return gather_cols(a, {3, 0, 3}); });
  unary("gather_rows", normal34, [](Var a) { return gather_rows(a, {2, 0, 2, 1}); });
  unary("sum", normal34, [](Var a) { return sum(square(a)); });
  unary("mean", normal34, [](Var a) { return mean(square(a)); });
  unary("sum_rows", normal34, [](Var a) { return sum_rows(a); });
  unary("sum_cols", normal34, [](Var a) { return sum_cols(a); });
  unary("min_rows", spread_fn(), [](Var a) { return min_rows(a); });
  unary("max_rows", spread_fn(), [](Var a) { return max_rows(a); });
  unary("max_cols", spread_fn(), [](Var a) { return max_cols(a); });
  unary("softmax_rows", normal34, [](Var a) { return softmax_rows(a); });
  unary("normalize_rows", normal34, [](Var a) { return normalize_rows(a); });

  cs.push_back({"svd3",
                [](Rng& r) {
                  // Well separated singular values keep the gap term away from its stabilizer.
                  for (;;) {
                    Tensor m = randn(r, 3, 3);
                    const auto s = svd3(m).s;
                    if (s[2] > 0.1 && s[0] - s[1] > 0.1 && s[1] - s[2] > 0.1) return std::vector<Tensor>{m};
                  }
                },
                [](Graph&, const Inputs& in, std::string&) {
                  const Svd3Vars sv = svd3(in[0]);
                  return concat_rows({sv.s, sv.v});
                }});

  cs.push_back({"ellipsoid_sdf",
                [](Rng& r) {
                  return std::vector<Tensor>{randn(r, 6, 3, 1.2), rand_uniform(r, 1, 3, 0.5, 1.5)};
                },
                [](Graph&, const Inputs& in, std::string&) { return ellipsoid_sdf(in[0], in[1]); }});

  cs.push_back({"cuboid_sdf",
                [](Rng& r) {
                  const Tensor s = Tensor::from({{0.6, 0.9, 1.3}});
                  Tensor p(0, 3);
                  std::vector<double> rows;
                  std::size_t n = 0;
                  while (n < 8) {
                    std::array<double, 3> q{};
                    for (double& v : q) v = uniform(r, -2.0, 2.0);
                    // Reject points near the faces' planes or near ties between axes.
                    std::array<double, 3> d{};
                    bool ok = true;
                    for (std::size_t k = 0; k < 3; ++k) {
                      d[k] = std::abs(q[k]) - s[k];
                      if (std::abs(d[k]) < 0.05) ok = false;
                    }
                    for (std::size_t a = 0; a < 3; ++a)
                      for (std::size_t b = a + 1; b < 3; ++b)
                        if (std::abs(d[a] - d[b]) < 0.05) ok = false;
                    if (!ok) continue;
                    rows.insert(rows.end(), q.begin(), q.end());
                    ++n;
                  }
                  return std::vector<Tensor>{Tensor(8, 3, rows), s};
                },
                [](Graph&, const Inputs& in, std::string&) { return cuboid_sdf(in[0], in[1]); }});

  cs.push_back({"min_sqdist",
                [](Rng& r) { return std::vector<Tensor>{near_grid(r, 6)}; },
                [](Graph&, const Inputs& in, std::string&) {
                  return min_sqdist(in[0], grid_targets());
                }});

  cs.push_back({"meanshift",
                [](Rng& r) { return std::vector<Tensor>{randn(r, 12, 4)}; },
                [](Graph&, const Inputs& in, std::string&) {
                  return meanshift_iterate(normalize_rows(in[0]), 0.8, 3);
                }});

  cs.push_back({"soft_membership",
                [](Rng& r) { return std::vector<Tensor>{randn(r, 10, 4)}; },
                [centers = unit_rows(Tensor::from({{1, 0, 0, 0}, {0, 1, 1, 0}, {0, 0, -1, 1}}))](
                    Graph&, const Inputs& in, std::string&) {
                  return soft_membership(normalize_rows(in[0]), centers);
                }});

  auto fit_inputs = [](bool planar) {
    return [planar](Rng& r) {
      Tensor x = randn(r, 20, 3);
      for (std::size_t i = 0; i < 20; ++i) {
        x(i, 0) *= 1.5;
        x(i, 1) *= 0.8;
        x(i, 2) = planar ? 0.0 : 0.4 * x(i, 2);
      }
      return std::vector<Tensor>{matmul(x, random_rotation(r)), rand_uniform(r, 20, 1, 0.2, 1.0)};
    };
  };
  auto fit_builder = [](PrimitiveKind kind) {
    return [kind](Graph&, const Inputs& in, std::string& skip) {
      const FitResult fr = fit_ellipsoid(in[0], in[1]);
      if (!fr.backward_enabled) skip = "condition cutoff";
      const PrimitiveVars p = kind == PrimitiveKind::Cuboid ? ellipsoid_to_cuboid(fr.vars) : fr.vars;
      return concat_rows({p.center, p.semi_axes, p.rotation});
    };
  };
  cs.push_back({"weighted_fit", fit_inputs(false), fit_builder(PrimitiveKind::Ellipsoid)});
  cs.push_back({"weighted_fit_cuboid", fit_inputs(false), fit_builder(PrimitiveKind::Cuboid)});
  cs.push_back({"weighted_fit_degenerate", fit_inputs(true), fit_builder(PrimitiveKind::Ellipsoid)});

  auto prim_inputs = [](Rng& r, std::array<double, 3> c) {
    Tensor center = Tensor::from({{c[0], c[1], c[2]}});
    return std::vector<Tensor>{center, random_rotation(r), rand_uniform(r, 1, 3, 0.5, 1.2)};
  };

  cs.push_back({"surface_samples",
                [prim_inputs](Rng& r) {
                  auto a = prim_inputs(r, {0, 0, 0});
                  auto b = prim_inputs(r, {2, 0, 0});
                  a.insert(a.end(), b.begin(), b.end());
                  return a;
                },
                [seed](Graph&, const Inputs& in, std::string&) {
                  const std::vector<PrimitiveVars> prims{prim_from(in, 0), prim_from(in, 3, PrimitiveKind::Cuboid)};
                  std::vector<PrimitiveParams> vals;
                  for (const auto& p : prims) vals.push_back(p.params());
                  return realize_surface_samples(prims, plan_surface_samples(vals, 40, seed));
                }});

  cs.push_back({"coverage_loss",
                [prim_inputs](Rng& r) {
                  auto v = prim_inputs(r, {-1.0, 0, 0});
                  auto b = prim_inputs(r, {1.0, 0.2, 0});
                  v.insert(v.end(), b.begin(), b.end());
                  Tensor x = randn(r, 10, 3);
                  v.push_back(x);
                  return v;
                },
                [](Graph&, const Inputs& in, std::string&) {
                  return coverage_loss(in[6], {prim_from(in, 0), prim_from(in, 3, PrimitiveKind::Cuboid)});
                }});

  cs.push_back({"fit_loss",
                [](Rng& r) { return std::vector<Tensor>{near_grid(r, 8)}; },
                [](Graph&, const Inputs& in, std::string&) {
                  return fit_loss(grid_targets(), in[0]);
                }});

  cs.push_back({"intersection_loss",
                [prim_inputs](Rng& r) {
                  auto v = prim_inputs(r, {-0.4, 0, 0});
                  auto b = prim_inputs(r, {0.4, 0.1, 0});
                  v.insert(v.end(), b.begin(), b.end());
                  return v;
                },
                [seed, cache = std::make_shared<std::vector<Tensor>>()](Graph&, const Inputs& in, std::string&) {
                  const std::vector<PrimitiveVars> prims{prim_from(in, 0), prim_from(in, 3, PrimitiveKind::Cuboid)};
                  // Samples are drawn once at the unperturbed parameters and then held fixed.
                  if (!cache->empty()) return intersection_loss(prims, *cache);
                  std::vector<Tensor>& interior = *cache;
                  for (std::size_t m = 0; m < 2; ++m) {
                    // Keep only samples clear of the other primitive's surface.
                    const Tensor raw = sample_inside(prims[m].params(), 40, seed ^ m);
                    const PrimitiveParams other = prims[1 - m].params();
                    std::vector<double> keep;
                    for (std::size_t i = 0; i < raw.rows(); ++i) {
                      const double sd = signed_distance(other, {raw(i, 0), raw(i, 1), raw(i, 2)});
                      if (std::abs(sd) > 0.02) keep.insert(keep.end(), raw.row(i).begin(), raw.row(i).end());
                    }
                    interior.emplace_back(keep.size() / 3, 3, keep);
                  }
                  return intersection_loss(prims, interior);
                }});

  unary("similarity_loss", [](Rng& r) { return randn(r, 6, 4); },
        [](Var a) { return similarity_loss(normalize_rows(a)); });
  unary("cross_entropy", [](Rng& r) { return randn(r, 5, 3); },
        [](Var a) { return cross_entropy(softmax_rows(a), {0, 2, 1, 1, 0}); });

  cs.push_back({"embed",
                [](Rng& r) {
                  std::vector<Tensor> v = params_list(EmbedderParams::init({8, 4}, r()));
                  v.push_back(randn(r, 10, 3));
                  return v;
                },
                [](Graph&, const Inputs& in, std::string&) { return embed(embedder_from(in, 0), in[10]); }});
  cs.push_back({"classify",
                [](Rng& r) {
                  const ClassifierParams c = ClassifierParams::init(4, 3, r());
                  return std::vector<Tensor>{c.weight, c.bias, randn(r, 6, 4)};
                },
                [](Graph&, const Inputs& in, std::string&) {
                  return classify(ClassifierVars{in[0], in[1]}, normalize_rows(in[2]));
                }});

  auto fixture = std::make_shared<ObjectiveFixture>(make_objective_fixture(seed));
  cs.push_back({"full_objective",
                [fixture](Rng&) {
                  std::vector<Tensor> v = params_list(fixture->embedder);
                  v.push_back(fixture->classifier.weight);
                  v.push_back(fixture->classifier.bias);
                  return v;
                },
                [fixture](Graph&, const Inputs& in, std::string& skip) { return full_objective(*fixture, in, skip); },
                10.0});
  return cs;
}

}  // namespace

std::vector<std::string> gradcheck_case_names() {
  std::vector<std::string> out;
  for (const auto& c : registry(0)) out.push_back(c.name);
  return out;
}

GradcheckReport gradcheck_suite(std::uint64_t seed, const GradcheckOptions& opts) {
  GradcheckReport rep;
  rep.seed = seed;
  rep.tolerance = opts.tolerance;
  for (const Case& c : registry(seed)) {
    if (!opts.only.empty() && std::find(opts.only.begin(), opts.only.end(), c.name) == opts.only.end()) continue;
    Rng rng = make_rng(seed, "gradcheck:" + c.name);
    rep.entries.push_back(run_case(c, rng, opts));
  }
  return rep;
}

}  // namespace primseg
