#include "primseg/graph.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace primseg {

const Tensor& Var::value() const {
  if (!valid()) throw std::logic_error("use of an unbound Var");
  return graph->value(*this);
}

void Graph::check_owned(Var v) const {
  if (v.graph != this || v.id < 0 || static_cast<std::size_t>(v.id) >= nodes_.size()) {
    throw std::logic_error("Var does not belong to this graph");
  }
}

Var Graph::input(std::string name, Tensor value) {
  if (opts_.check_finite && !value.all_finite()) {
    throw NumericError("non-finite value bound to input '" + name + "'");
  }
  Node n;
  n.op = "input";
  n.name = std::move(name);
  n.value = std::move(value);
  n.requires_grad = true;
  nodes_.push_back(std::move(n));
  named_inputs_.push_back(static_cast<int>(nodes_.size()) - 1);
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Var Graph::constant(Tensor value) {
  Node n;
  n.op = "constant";
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

const Tensor& Graph::value(Var v) const {
  check_owned(v);
  return nodes_[v.id].value;
}

bool Graph::requires_grad(Var v) const {
  check_owned(v);
  return nodes_[v.id].requires_grad;
}

const std::string& Graph::op_name(Var v) const {
  check_owned(v);
  return nodes_[v.id].op;
}

Var Graph::record(std::string op, Tensor value, std::vector<Var> inputs, BackwardFn fn) {
  Node n;
  n.op = std::move(op);
  if (opts_.check_finite && !value.all_finite()) {
    throw NumericError("non-finite forward value in op '" + n.op + "'");
  }
  n.value = std::move(value);
  for (Var in : inputs) {
    check_owned(in);
    n.inputs.push_back(in.id);
    n.requires_grad = n.requires_grad || nodes_[in.id].requires_grad;
  }
  if (n.requires_grad) n.backward = std::move(fn);
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

void Graph::accumulate(Var v, const Tensor& g) {
  check_owned(v);
  Node& n = nodes_[v.id];
  if (!n.requires_grad) return;
  if (!g.same_shape(n.value)) {
    throw ShapeError("gradient shape " + g.shape_str() + " for node '" + n.op + "' of shape " +
                     n.value.shape_str());
  }
  if (n.grad.empty()) {
    n.grad = g;
  } else {
    for (std::size_t i = 0; i < g.size(); ++i) n.grad[i] += g[i];
  }
}

Gradients Graph::backward(Var root) {
  if (nodes_.empty() || !root.valid()) {
    throw std::logic_error("backward called before any forward computation");
  }
  check_owned(root);
  if (nodes_[root.id].value.size() != 1) {
    throw ShapeError("backward root must be scalar, got " + nodes_[root.id].value.shape_str());
  }
  for (Node& n : nodes_) n.grad = Tensor();
  nodes_[root.id].grad = Tensor::scalar(1.0);

  for (int id = root.id; id >= 0; --id) {
    Node& n = nodes_[id];
    if (!n.requires_grad || n.grad.empty() || !n.backward) continue;
    if (opts_.check_finite && !n.grad.all_finite()) {
      throw NumericError("non-finite gradient reaching op '" + n.op + "'");
    }
    // accumulate() only touches earlier nodes, so n.grad stays put.
    n.backward(*this, n.grad);
  }

  Gradients out;
  for (int id : named_inputs_) {
    const Node& n = nodes_[id];
    Tensor g = n.grad.empty() ? Tensor(n.value.rows(), n.value.cols()) : n.grad;
    if (opts_.check_finite && !g.all_finite()) {
      throw NumericError("non-finite gradient for input '" + n.name + "'");
    }
    out[n.name] = std::move(g);
  }
  return out;
}

Tensor Graph::grad(Var v) const {
  check_owned(v);
  const Node& n = nodes_[v.id];
  return n.grad.empty() ? Tensor(n.value.rows(), n.value.cols()) : n.grad;
}

// ---------------------------------------------------------------------------

namespace {

Graph& graph_of(Var a) {
  if (!a.valid()) throw std::logic_error("op on an unbound Var");
  return *a.graph;
}

void require_same(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(op) + ": shape mismatch " + a.shape_str() + " vs " + b.shape_str());
  }
}

template <class F, class D>
Var unary(const char* op, Var a, F f, D dfdx) {
  Graph& g = graph_of(a);
  const Tensor& x = a.value();
  Tensor y(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
  Tensor saved_y = y;
  return g.record(op, std::move(y), {a},
                  [a, dfdx, saved_y = std::move(saved_y)](Graph& gr, const Tensor& go) {
                    const Tensor& xv = gr.value(a);
                    Tensor gi(xv.rows(), xv.cols());
                    for (std::size_t i = 0; i < xv.size(); ++i) gi[i] = go[i] * dfdx(xv[i], saved_y[i]);
                    gr.accumulate(a, gi);
                  });
}

}  // namespace

Var add(Var a, Var b) {
  require_same(a.value(), b.value(), "add");
  Tensor y = a.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += b.value()[i];
  return graph_of(a).record("add", std::move(y), {a, b}, [a, b](Graph& g, const Tensor& go) {
    g.accumulate(a, go);
    g.accumulate(b, go);
  });
}

Var sub(Var a, Var b) {
  require_same(a.value(), b.value(), "sub");
  Tensor y = a.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] -= b.value()[i];
  return graph_of(a).record("sub", std::move(y), {a, b}, [a, b](Graph& g, const Tensor& go) {
    g.accumulate(a, go);
    if (g.requires_grad(b)) {
      Tensor n = go;
      for (double& v : n.flat()) v = -v;
      g.accumulate(b, n);
    }
  });
}

Var mul(Var a, Var b) {
  require_same(a.value(), b.value(), "mul");
  Tensor y = a.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] *= b.value()[i];
  return graph_of(a).record("mul", std::move(y), {a, b}, [a, b](Graph& g, const Tensor& go) {
    const Tensor& av = g.value(a);
    const Tensor& bv = g.value(b);
    if (g.requires_grad(a)) {
      Tensor ga(go.rows(), go.cols());
      for (std::size_t i = 0; i < go.size(); ++i) ga[i] = go[i] * bv[i];
      g.accumulate(a, ga);
    }
    if (g.requires_grad(b)) {
      Tensor gb(go.rows(), go.cols());
      for (std::size_t i = 0; i < go.size(); ++i) gb[i] = go[i] * av[i];
      g.accumulate(b, gb);
    }
  });
}

Var div(Var a, Var b) {
  require_same(a.value(), b.value(), "div");
  Tensor y = a.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] /= b.value()[i];
  return graph_of(a).record("div", std::move(y), {a, b}, [a, b](Graph& g, const Tensor& go) {
    const Tensor& av = g.value(a);
    const Tensor& bv = g.value(b);
    if (g.requires_grad(a)) {
      Tensor ga(go.rows(), go.cols());
      for (std::size_t i = 0; i < go.size(); ++i) ga[i] = go[i] / bv[i];
      g.accumulate(a, ga);
    }
    if (g.requires_grad(b)) {
      Tensor gb(go.rows(), go.cols());
      for (std::size_t i = 0; i < go.size(); ++i) gb[i] = -go[i] * av[i] / (bv[i] * bv[i]);
      g.accumulate(b, gb);
    }
  });
}

Var neg(Var a) { return scale(a, -1.0); }

Var scale(Var a, double k) {
  return unary("scale", a, [k](double x) { return k * x; }, [k](double, double) { return k; });
}

Var add_scalar(Var a, double k) {
  return unary("add_scalar", a, [k](double x) { return x + k; }, [](double, double) { return 1.0; });
}

Var square(Var a) {
  return unary("square", a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var exp(Var a) {
  return unary("exp", a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var log(Var a) {
  return unary("log", a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var sqrt(Var a) {
  return unary("sqrt", a, [](double x) { return std::sqrt(x); },
               [](double, double y) { return 0.5 / y; });
}

Var abs(Var a) {
  return unary("abs", a, [](double x) { return std::abs(x); },
               [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Var tanh(Var a) {
  return unary("tanh", a, [](double x) { return std::tanh(x); },
               [](double, double y) { return 1.0 - y * y; });
}

Var clamp(Var a, double lo, double hi) {
  return unary("clamp", a, [lo, hi](double x) { return std::clamp(x, lo, hi); },
               [lo, hi](double x, double) { return (x >= lo && x <= hi) ? 1.0 : 0.0; });
}

// ---------------------------------------------------------------------------

Var matmul(Var a, Var b) {
  Tensor y = matmul(a.value(), b.value());
  return graph_of(a).record("matmul", std::move(y), {a, b}, [a, b](Graph& g, const Tensor& go) {
    if (g.requires_grad(a)) g.accumulate(a, matmul_nt(go, g.value(b)));
    if (g.requires_grad(b)) g.accumulate(b, matmul_tn(g.value(a), go));
  });
}

Var transpose(Var a) {
  return graph_of(a).record("transpose", a.value().transposed(), {a},
                            [a](Graph& g, const Tensor& go) { g.accumulate(a, go.transposed()); });
}

Var broadcast_rows(Var row, std::size_t n) {
  const Tensor& r = row.value();
  if (r.rows() != 1) throw ShapeError("broadcast_rows expects 1xC, got " + r.shape_str());
  Tensor y(n, r.cols());
  for (std::size_t i = 0; i < n; ++i) std::copy(r.flat().begin(), r.flat().end(), y.row(i).begin());
  return graph_of(row).record("broadcast_rows", std::move(y), {row}, [row](Graph& g, const Tensor& go) {
    Tensor gr(1, go.cols());
    for (std::size_t i = 0; i < go.rows(); ++i)
      for (std::size_t j = 0; j < go.cols(); ++j) gr[j] += go(i, j);
    g.accumulate(row, gr);
  });
}

Var broadcast_cols(Var col, std::size_t c) {
  const Tensor& v = col.value();
  if (v.cols() != 1) throw ShapeError("broadcast_cols expects Nx1, got " + v.shape_str());
  Tensor y(v.rows(), c);
  for (std::size_t i = 0; i < v.rows(); ++i)
    for (std::size_t j = 0; j < c; ++j) y(i, j) = v[i];
  return graph_of(col).record("broadcast_cols", std::move(y), {col}, [col](Graph& g, const Tensor& go) {
    Tensor gc(go.rows(), 1);
    for (std::size_t i = 0; i < go.rows(); ++i)
      for (std::size_t j = 0; j < go.cols(); ++j) gc[i] += go(i, j);
    g.accumulate(col, gc);
  });
}

Var expand(Var s, std::size_t rows, std::size_t cols) {
  const double v = s.value().item();
  return graph_of(s).record("expand", Tensor(rows, cols, v), {s}, [s](Graph& g, const Tensor& go) {
    double total = 0.0;
    for (double x : go.flat()) total += x;
    g.accumulate(s, Tensor::scalar(total));
  });
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols of nothing");
  const std::size_t n = parts.front().rows();
  std::size_t total = 0;
  for (Var p : parts) {
    if (p.rows() != n) throw ShapeError("concat_cols: row count mismatch");
    total += p.cols();
  }
  Tensor y(n, total);
  std::size_t off = 0;
  for (Var p : parts) {
    const Tensor& v = p.value();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < v.cols(); ++j) y(i, off + j) = v(i, j);
    off += v.cols();
  }
  return graph_of(parts.front()).record("concat_cols", std::move(y), parts, [parts](Graph& g, const Tensor& go) {
    std::size_t o = 0;
    for (Var p : parts) {
      const std::size_t c = p.cols();
      if (g.requires_grad(p)) {
        Tensor gp(go.rows(), c);
        for (std::size_t i = 0; i < go.rows(); ++i)
          for (std::size_t j = 0; j < c; ++j) gp(i, j) = go(i, o + j);
        g.accumulate(p, gp);
      }
      o += c;
    }
  });
}

Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows of nothing");
  const std::size_t c = parts.front().cols();
  std::vector<double> data;
  for (Var p : parts) {
    if (p.cols() != c) throw ShapeError("concat_rows: column count mismatch");
    data.insert(data.end(), p.value().flat().begin(), p.value().flat().end());
  }
  const std::size_t rows = data.size() / std::max<std::size_t>(c, 1);
  Tensor y(c ? rows : 0, c, std::move(data));
  return graph_of(parts.front()).record("concat_rows", std::move(y), parts, [parts](Graph& g, const Tensor& go) {
    std::size_t o = 0;
    for (Var p : parts) {
      const std::size_t n = p.value().size();
      if (g.requires_grad(p)) {
        Tensor gp(p.rows(), p.cols());
        std::copy(go.flat().begin() + o, go.flat().begin() + o + n, gp.flat().begin());
        g.accumulate(p, gp);
      }
      o += n;
    }
  });
}

Var slice_cols(Var a, std::size_t begin, std::size_t end) {
  const Tensor& v = a.value();
  if (begin > end || end > v.cols()) throw ShapeError("slice_cols out of range");
  Tensor y(v.rows(), end - begin);
  for (std::size_t i = 0; i < v.rows(); ++i)
    for (std::size_t j = begin; j < end; ++j) y(i, j - begin) = v(i, j);
  return graph_of(a).record("slice_cols", std::move(y), {a}, [a, begin](Graph& g, const Tensor& go) {
    const Tensor& av = g.value(a);
    Tensor ga(av.rows(), av.cols());
    for (std::size_t i = 0; i < go.rows(); ++i)
      for (std::size_t j = 0; j < go.cols(); ++j) ga(i, begin + j) = go(i, j);
    g.accumulate(a, ga);
  });
}

Var slice_rows(Var a, std::size_t begin, std::size_t end) {
  const Tensor& v = a.value();
  if (begin > end || end > v.rows()) throw ShapeError("slice_rows out of range");
  Tensor y(end - begin, v.cols(),
           std::vector<double>(v.flat().begin() + begin * v.cols(), v.flat().begin() + end * v.cols()));
  return graph_of(a).record("slice_rows", std::move(y), {a}, [a, begin](Graph& g, const Tensor& go) {
    const Tensor& av = g.value(a);
    Tensor ga(av.rows(), av.cols());
    std::copy(go.flat().begin(), go.flat().end(), ga.flat().begin() + begin * av.cols());
    g.accumulate(a, ga);
  });
}

Var gather_cols(Var a, const std::vector<std::size_t>& idx) {
  const Tensor& v = a.value();
  if (idx.size() != v.rows()) throw ShapeError("gather_cols: index count != rows");
  Tensor y(v.rows(), 1);
  for (std::size_t i = 0; i < v.rows(); ++i) {
    if (idx[i] >= v.cols()) throw ShapeError("gather_cols: index out of range");
    y[i] = v(i, idx[i]);
  }
  return graph_of(a).record("gather_cols", std::move(y), {a}, [a, idx](Graph& g, const Tensor& go) {
    const Tensor& av = g.value(a);
    Tensor ga(av.rows(), av.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) ga(i, idx[i]) = go[i];
    g.accumulate(a, ga);
  });
}

Var gather_rows(Var a, const std::vector<std::size_t>& idx) {
  const Tensor& v = a.value();
  Tensor y(idx.size(), v.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= v.rows()) throw ShapeError("gather_rows: index out of range");
    std::copy(v.row(idx[i]).begin(), v.row(idx[i]).end(), y.row(i).begin());
  }
  return graph_of(a).record("gather_rows", std::move(y), {a}, [a, idx](Graph& g, const Tensor& go) {
    const Tensor& av = g.value(a);
    Tensor ga(av.rows(), av.cols());
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::size_t j = 0; j < av.cols(); ++j) ga(idx[i], j) += go(i, j);
    g.accumulate(a, ga);
  });
}

Var stop_gradient(Var a) { return graph_of(a).constant(a.value()); }

// ---------------------------------------------------------------------------

Var sum(Var a) {
  double s = 0.0;
  for (double v : a.value().flat()) s += v;
  return graph_of(a).record("sum", Tensor::scalar(s), {a}, [a](Graph& g, const Tensor& go) {
    const Tensor& av = g.value(a);
    g.accumulate(a, Tensor(av.rows(), av.cols(), go.item()));
  });
}

Var mean(Var a) {
  const std::size_t n = a.value().size();
  if (n == 0) throw ShapeError("mean of empty tensor");
  double s = 0.0;
  for (double v : a.value().flat()) s += v;
  return graph_of(a).record("mean", Tensor::scalar(s / static_cast<double>(n)), {a},
                            [a, n](Graph& g, const Tensor& go) {
                              const Tensor& av = g.value(a);
                              g.accumulate(a, Tensor(av.rows(), av.cols(), go.item() / static_cast<double>(n)));
                            });
}

Var sum_rows(Var a) {
  const Tensor& v = a.value();
  Tensor y(v.rows(), 1);
  for (std::size_t i = 0; i < v.rows(); ++i)
    for (double x : v.row(i)) y[i] += x;
  return graph_of(a).record("sum_rows", std::move(y), {a}, [a](Graph& g, const Tensor& go) {
    const Tensor& av = g.value(a);
    Tensor ga(av.rows(), av.cols());
    for (std::size_t i = 0; i < av.rows(); ++i)
      for (std::size_t j = 0; j < av.cols(); ++j) ga(i, j) = go[i];
    g.accumulate(a, ga);
  });
}

Var sum_cols(Var a) {
  const Tensor& v = a.value();
  Tensor y(1, v.cols());
  for (std::size_t i = 0; i < v.rows(); ++i)
    for (std::size_t j = 0; j < v.cols(); ++j) y[j] += v(i, j);
  return graph_of(a).record("sum_cols", std::move(y), {a}, [a](Graph& g, const Tensor& go) {
    const Tensor& av = g.value(a);
    Tensor ga(av.rows(), av.cols());
    for (std::size_t i = 0; i < av.rows(); ++i)
      for (std::size_t j = 0; j < av.cols(); ++j) ga(i, j) = go[j];
    g.accumulate(a, ga);
  });
}

namespace {

template <class Better>
Var select_rows(const char* op, Var a, Better better) {
  const Tensor& v = a.value();
  if (v.cols() == 0) throw ShapeError(std::string(op) + " over zero columns");
  Tensor y(v.rows(), 1);
  std::vector<std::size_t> arg(v.rows(), 0);
  for (std::size_t i = 0; i < v.rows(); ++i) {
    for (std::size_t j = 1; j < v.cols(); ++j)
      if (better(v(i, j), v(i, arg[i]))) arg[i] = j;
    y[i] = v(i, arg[i]);
  }
  return graph_of(a).record(op, std::move(y), {a}, [a, arg](Graph& g, const Tensor& go) {
    const Tensor& av = g.value(a);
    Tensor ga(av.rows(), av.cols());
    for (std::size_t i = 0; i < arg.size(); ++i) ga(i, arg[i]) = go[i];
    g.accumulate(a, ga);
  });
}

}  // namespace

Var min_rows(Var a) { return select_rows("min_rows", a, std::less<double>()); }
Var max_rows(Var a) { return select_rows("max_rows", a, std::greater<double>()); }

Var max_cols(Var a) {
  const Tensor& v = a.value();
  if (v.rows() == 0) throw ShapeError("max_cols over zero rows");
  Tensor y(1, v.cols());
  std::vector<std::size_t> arg(v.cols(), 0);
  for (std::size_t j = 0; j < v.cols(); ++j) {
    for (std::size_t i = 1; i < v.rows(); ++i)
      if (v(i, j) > v(arg[j], j)) arg[j] = i;
    y[j] = v(arg[j], j);
  }
  return graph_of(a).record("max_cols", std::move(y), {a}, [a, arg](Graph& g, const Tensor& go) {
    const Tensor& av = g.value(a);
    Tensor ga(av.rows(), av.cols());
    for (std::size_t j = 0; j < arg.size(); ++j) ga(arg[j], j) = go[j];
    g.accumulate(a, ga);
  });
}

// ---------------------------------------------------------------------------

Var softmax_rows(Var a) {
  const Tensor& v = a.value();
  Tensor y(v.rows(), v.cols());
  for (std::size_t i = 0; i < v.rows(); ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (double x : v.row(i)) mx = std::max(mx, x);
    double total = 0.0;
    for (std::size_t j = 0; j < v.cols(); ++j) {
      y(i, j) = std::exp(v(i, j) - mx);
      total += y(i, j);
    }
    for (std::size_t j = 0; j < v.cols(); ++j) y(i, j) /= total;
  }
  Tensor saved = y;
  return graph_of(a).record("softmax_rows", std::move(y), {a},
                            [a, saved = std::move(saved)](Graph& g, const Tensor& go) {
                              Tensor ga(saved.rows(), saved.cols());
                              for (std::size_t i = 0; i < saved.rows(); ++i) {
                                double dot = 0.0;
                                for (std::size_t j = 0; j < saved.cols(); ++j) dot += go(i, j) * saved(i, j);
                                for (std::size_t j = 0; j < saved.cols(); ++j)
                                  ga(i, j) = saved(i, j) * (go(i, j) - dot);
                              }
                              g.accumulate(a, ga);
                            });
}

Var normalize_rows(Var a) {
  Var norms = sqrt(sum_rows(square(a)));
  return div(a, broadcast_cols(norms, a.cols()));
}

// ---------------------------------------------------------------------------

Svd3Vars svd3(Var m) {
  Graph& g = graph_of(m);
  Svd3Result res = svd3(m.value());
  Tensor s = Tensor::row_vector(res.s);
  // S and V are separate nodes; their backward contributions add up to the
  // full formula because it is linear in (dS, dV).
  Var sv = g.record("svd3_s", s, {m}, [m, res](Graph& gr, const Tensor& go) {
    gr.accumulate(m, svd3_backward(res, go, Tensor(3, 3)));
  });
  Var vv = g.record("svd3_v", res.v, {m}, [m, res](Graph& gr, const Tensor& go) {
    gr.accumulate(m, svd3_backward(res, Tensor(1, 3), go));
  });
  return Svd3Vars{sv, vv, std::move(res)};
}

// ---------------------------------------------------------------------------

namespace {

constexpr double kSdfCenterK1 = 1e-6;
constexpr double kSdfK2Floor = 1e-12;

}  // namespace

Var ellipsoid_sdf(Var p, Var s) {
  const Tensor& pv = p.value();
  const Tensor& sv = s.value();
  if (pv.cols() != 3 || sv.rows() != 1 || sv.cols() != 3) {
    throw ShapeError("ellipsoid_sdf expects Px3 points and 1x3 semi-axes");
  }
  const double smin = std::min({sv[0], sv[1], sv[2]});
  Tensor y(pv.rows(), 1);
  for (std::size_t i = 0; i < pv.rows(); ++i) {
    double a = 0.0, b = 0.0;
    for (std::size_t k = 0; k < 3; ++k) {
      const double t = pv(i, k) / sv[k];
      a += t * t;
      b += (t / sv[k]) * (t / sv[k]);
    }
    const double k1 = std::sqrt(a);
    const double k2 = std::max(std::sqrt(b), kSdfK2Floor);
    y[i] = k1 < kSdfCenterK1 ? -smin : k1 * (k1 - 1.0) / k2;
  }
  return graph_of(p).record("ellipsoid_sdf", std::move(y), {p, s}, [p, s](Graph& g, const Tensor& go) {
    const Tensor& pv = g.value(p);
    const Tensor& sv = g.value(s);
    Tensor gp(pv.rows(), 3);
    Tensor gs(1, 3);
    for (std::size_t i = 0; i < pv.rows(); ++i) {
      double a = 0.0, b = 0.0;
      for (std::size_t k = 0; k < 3; ++k) {
        const double t = pv(i, k) / sv[k];
        a += t * t;
        b += (t / sv[k]) * (t / sv[k]);
      }
      const double k1 = std::sqrt(a);
      const double k2raw = std::sqrt(b);
      if (k1 < kSdfCenterK1) continue;
      const bool floored = k2raw < kSdfK2Floor;
      const double k2 = floored ? kSdfK2Floor : k2raw;
      // SD = (k1^2 - k1) / k2
      const double dsd_dk1 = (2.0 * k1 - 1.0) / k2;
      const double dsd_dk2 = floored ? 0.0 : -k1 * (k1 - 1.0) / (k2 * k2);
      for (std::size_t k = 0; k < 3; ++k) {
        const double x = pv(i, k), r = sv[k];
        const double dk1_dx = x / (r * r * k1);
        const double dk2_dx = x / (r * r * r * r * k2);
        const double dk1_dr = -x * x / (r * r * r * k1);
        const double dk2_dr = -2.0 * x * x / (r * r * r * r * r * k2);
        gp(i, k) = go[i] * (dsd_dk1 * dk1_dx + dsd_dk2 * dk2_dx);
        gs[k] += go[i] * (dsd_dk1 * dk1_dr + dsd_dk2 * dk2_dr);
      }
    }
    g.accumulate(p, gp);
    g.accumulate(s, gs);
  });
}

Var cuboid_sdf(Var p, Var s) {
  const Tensor& pv = p.value();
  const Tensor& sv = s.value();
  if (pv.cols() != 3 || sv.rows() != 1 || sv.cols() != 3) {
    throw ShapeError("cuboid_sdf expects Px3 points and 1x3 half-extents");
  }
  Tensor y(pv.rows(), 1);
  for (std::size_t i = 0; i < pv.rows(); ++i) {
    double outside = 0.0;
    double qmax = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < 3; ++k) {
      const double q = std::abs(pv(i, k)) - sv[k];
      if (q > 0.0) outside += q * q;
      qmax = std::max(qmax, q);
    }
    y[i] = std::sqrt(outside) + std::min(qmax, 0.0);
  }
  return graph_of(p).record("cuboid_sdf", std::move(y), {p, s}, [p, s](Graph& g, const Tensor& go) {
    const Tensor& pv = g.value(p);
    const Tensor& sv = g.value(s);
    Tensor gp(pv.rows(), 3);
    Tensor gs(1, 3);
    for (std::size_t i = 0; i < pv.rows(); ++i) {
      std::array<double, 3> q{};
      double outside = 0.0;
      std::size_t arg = 0;
      for (std::size_t k = 0; k < 3; ++k) {
        q[k] = std::abs(pv(i, k)) - sv[k];
        if (q[k] > 0.0) outside += q[k] * q[k];
        if (q[k] > q[arg]) arg = k;
      }
      std::array<double, 3> dq{};
      if (outside > 0.0) {
        const double n = std::sqrt(outside);
        for (std::size_t k = 0; k < 3; ++k) dq[k] = q[k] > 0.0 ? q[k] / n : 0.0;
      } else if (q[arg] < 0.0) {
        dq[arg] = 1.0;
      }
      for (std::size_t k = 0; k < 3; ++k) {
        const double x = pv(i, k);
        const double sgn = x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0);
        gp(i, k) = go[i] * dq[k] * sgn;
        gs[k] -= go[i] * dq[k];
      }
    }
    g.accumulate(p, gp);
    g.accumulate(s, gs);
  });
}

std::vector<std::size_t> nearest_rows(const Tensor& queries, const Tensor& targets,
                                      std::vector<double>* sqdist) {
  if (queries.cols() != targets.cols()) throw ShapeError("nearest_rows: dimension mismatch");
  if (targets.rows() == 0) throw ShapeError("nearest_rows: no targets");
  const std::size_t d = queries.cols();
  std::vector<std::size_t> arg(queries.rows(), 0);
  if (sqdist) sqdist->assign(queries.rows(), 0.0);
  for (std::size_t i = 0; i < queries.rows(); ++i) {
    const double* q = &queries(i, 0);
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < targets.rows(); ++j) {
      const double* t = &targets(j, 0);
      double dist = 0.0;
      for (std::size_t k = 0; k < d; ++k) {
        const double diff = q[k] - t[k];
        dist += diff * diff;
      }
      if (dist < best) {
        best = dist;
        arg[i] = j;
      }
    }
    if (sqdist) (*sqdist)[i] = best;
  }
  return arg;
}

Var min_sqdist(Var samples, const Tensor& targets) {
  const Tensor& sv = samples.value();
  if (sv.cols() != 3 || targets.cols() != 3) throw ShapeError("min_sqdist expects Px3 and Nx3");
  std::vector<double> dist;
  std::vector<std::size_t> arg = nearest_rows(sv, targets, &dist);
  Tensor y(sv.rows(), 1, std::move(dist));
  return graph_of(samples).record(
      "min_sqdist", std::move(y), {samples}, [samples, targets, arg](Graph& g, const Tensor& go) {
        const Tensor& sv = g.value(samples);
        Tensor gs(sv.rows(), 3);
        for (std::size_t i = 0; i < sv.rows(); ++i)
          for (std::size_t k = 0; k < 3; ++k) gs(i, k) = 2.0 * go[i] * (sv(i, k) - targets(arg[i], k));
        g.accumulate(samples, gs);
      });
}

}  // namespace primseg
