#include "primseg/train.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <thread>

#include "primseg/rng.hpp"

namespace primseg {

std::string to_string(Optimizer o) { return o == Optimizer::Sgd ? "sgd" : "momentum"; }

Optimizer optimizer_from_string(const std::string& s) {
  if (s == "sgd") return Optimizer::Sgd;
  if (s == "momentum") return Optimizer::Momentum;
  throw std::invalid_argument("unknown optimizer '" + s + "' (expected sgd or momentum)");
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate))
    throw std::invalid_argument("learning_rate must be > 0");
  if (!std::isfinite(ssl_learning_rate)) throw std::invalid_argument("ssl_learning_rate must be finite");
  if (batch_unlabeled < 1) throw std::invalid_argument("batch_unlabeled must be >= 1");
  if (!(warmup_fraction >= 0.0 && warmup_fraction <= 1.0))
    throw std::invalid_argument("warmup_fraction must lie in [0, 1]");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw std::invalid_argument("momentum must lie in [0, 1)");
  if (!(clip_norm >= 0.0)) throw std::invalid_argument("clip_norm must be >= 0");
  if (embedder.hidden < 1 || embedder.embed_dim < 2) throw std::invalid_argument("embedder too small");
  if (pipeline.bandwidth.neighbor_rank < 1) throw std::invalid_argument("neighbor_rank must be >= 1");
  if (!(pipeline.bandwidth.membership_scale > 0.0)) throw std::invalid_argument("membership_scale must be > 0");
  if (pipeline.surface_samples < 1) throw std::invalid_argument("surface_samples must be >= 1");
  if (threads < 1) throw std::invalid_argument("threads must be >= 1");
}

nlohmann::json TrainConfig::to_json() const {
  return {{"steps", steps},
          {"batch_unlabeled", batch_unlabeled},
          {"labeled_k", labeled_k},
          {"learning_rate", learning_rate},
          {"ssl_learning_rate", ssl_learning_rate},
          {"optimizer", to_string(optimizer)},
          {"momentum", momentum},
          {"clip_norm", clip_norm},
          {"seed", seed},
          {"warmup_fraction", warmup_fraction},
          {"primitive", to_string(primitive_kind)},
          {"self_supervised", self_supervised},
          {"classes", classes},
          {"hidden", embedder.hidden},
          {"embed_dim", embedder.embed_dim},
          {"neighbor_rank", pipeline.bandwidth.neighbor_rank},
          {"meanshift_iterations", pipeline.bandwidth.iterations},
          {"membership_scale", pipeline.bandwidth.membership_scale},
          {"kappa", pipeline.fit.kappa},
          {"surface_samples", pipeline.surface_samples},
          {"interior_samples", pipeline.interior_samples},
          {"lambda_inter", pipeline.weights.lambda_inter},
          {"lambda_sim", pipeline.weights.lambda_sim},
          {"threads", threads}};
}

void TrainConfig::merge_json(const nlohmann::json& j) {
  if (!j.is_object()) throw std::invalid_argument("config must be a JSON object");
  for (const auto& [key, v] : j.items()) {
    if (key == "steps") steps = v.get<std::size_t>();
    else if (key == "batch_unlabeled") batch_unlabeled = v.get<std::size_t>();
    else if (key == "labeled_k") labeled_k = v.get<std::size_t>();
    else if (key == "learning_rate") learning_rate = v.get<double>();
    else if (key == "ssl_learning_rate") ssl_learning_rate = v.get<double>();
    else if (key == "optimizer") optimizer = optimizer_from_string(v.get<std::string>());
    else if (key == "momentum") momentum = v.get<double>();
    else if (key == "clip_norm") clip_norm = v.get<double>();
    else if (key == "seed") seed = v.get<std::uint64_t>();
    else if (key == "warmup_fraction") warmup_fraction = v.get<double>();
    else if (key == "primitive") primitive_kind = primitive_kind_from_string(v.get<std::string>());
    else if (key == "self_supervised") self_supervised = v.get<bool>();
    else if (key == "classes") classes = v.get<std::size_t>();
    else if (key == "hidden") embedder.hidden = v.get<std::size_t>();
    else if (key == "embed_dim") embedder.embed_dim = v.get<std::size_t>();
    else if (key == "neighbor_rank") pipeline.bandwidth.neighbor_rank = v.get<std::size_t>();
    else if (key == "meanshift_iterations") pipeline.bandwidth.iterations = v.get<std::size_t>();
    else if (key == "membership_scale") pipeline.bandwidth.membership_scale = v.get<double>();
    else if (key == "kappa") pipeline.fit.kappa = v.get<double>();
    else if (key == "surface_samples") pipeline.surface_samples = v.get<std::size_t>();
    else if (key == "interior_samples") pipeline.interior_samples = v.get<std::size_t>();
    else if (key == "lambda_inter") pipeline.weights.lambda_inter = v.get<double>();
    else if (key == "lambda_sim") pipeline.weights.lambda_sim = v.get<double>();
    else if (key == "threads") threads = v.get<std::size_t>();
    else throw std::invalid_argument("unknown config key '" + key + "'");
  }
}

std::string shape_category(const PointCloud& pc) {
  const auto pos = pc.name.rfind('_');
  return pos == std::string::npos ? pc.name : pc.name.substr(0, pos);
}

std::vector<PointCloud> select_few_shot(const std::vector<PointCloud>& labeled, std::size_t k) {
  std::vector<std::size_t> order(labeled.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return labeled[a].name < labeled[b].name; });
  std::map<std::string, std::size_t> taken;
  std::vector<PointCloud> out;
  for (std::size_t i : order) {
    std::size_t& n = taken[shape_category(labeled[i])];
    if (k == 0 || n < k) {
      out.push_back(labeled[i]);
      ++n;
    }
  }
  return out;
}

void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn) {
  const std::size_t workers = std::min(std::max<std::size_t>(threads, 1), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(n);
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      for (std::size_t i = w; i < n; i += workers) {
        try {
          fn(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

namespace {

struct ShapeGrad {
  Gradients grads;
  LossBreakdown breakdown;
  bool skipped = false;
  std::string note;
  std::size_t primitives = 0;
};

double grad_norm(const Gradients& g) {
  double sq = 0.0;
  for (const auto& [name, t] : g)
    for (double v : t.flat()) sq += v * v;
  return std::sqrt(sq);
}

ShapeGrad ssl_gradient(const EmbedderParams& ep, const PointCloud& pc, const TrainConfig& cfg, bool warmup,
                       std::uint64_t seed) {
  ShapeGrad out;
  Graph g;
  const EmbedderVars ev = bind(g, ep);
  Var x = g.constant(pc.points);
  Var z = embed(ev, x);
  PipelineConfig pcfg = cfg.pipeline;
  pcfg.primitive_kind = cfg.primitive_kind;
  try {
    DecomposeOptions opts;
    opts.with_similarity = warmup;
    const Decomposition d = decompose(z, pc.points, pcfg, seed, opts);
    const TotalLoss t = total_loss(d.terms, false, warmup, pcfg.weights);
    out.breakdown = t.breakdown;
    out.primitives = d.prims.size();
    if (!std::isfinite(t.breakdown.total)) throw DivergenceError("non-finite loss on shape '" + pc.name + "'");
    out.grads = g.backward(*t.total);
  } catch (const UnfittableShape& e) {
    out.skipped = true;
    out.note = e.what();
  }
  return out;
}

ShapeGrad sl_gradient(const EmbedderParams& ep, const ClassifierParams& cp, const PointCloud& pc) {
  ShapeGrad out;
  Graph g;
  const EmbedderVars ev = bind(g, ep);
  const ClassifierVars cv = bind(g, cp);
  Var probs = classify(cv, embed(ev, g.constant(pc.points)));
  LossTerms terms;
  terms.ce = cross_entropy(probs, *pc.labels);
  const TotalLoss t = total_loss(terms, true, false);
  out.breakdown = t.breakdown;
  if (!std::isfinite(t.breakdown.total)) throw DivergenceError("non-finite loss on shape '" + pc.name + "'");
  out.grads = g.backward(*t.total);
  return out;
}

class Updater {
 public:
  Updater(const TrainConfig& cfg) : cfg_(cfg) {}

  void apply(EmbedderParams& ep, ClassifierParams* cp, const Gradients& grads, double lr) {
    double scale = 1.0;
    if (cfg_.clip_norm > 0.0) {
      const double norm = grad_norm(grads);
      if (norm > cfg_.clip_norm) scale = cfg_.clip_norm / norm;
    }
    auto step = [&](const std::string& name, Tensor& p) {
      const auto it = grads.find(name);
      if (it == grads.end()) return;
      const Tensor& gr = it->second;
      if (cfg_.optimizer == Optimizer::Sgd) {
        for (std::size_t i = 0; i < p.size(); ++i) p[i] -= lr * scale * gr[i];
        return;
      }
      Tensor& vel = velocity_.try_emplace(name, p.rows(), p.cols()).first->second;
      for (std::size_t i = 0; i < p.size(); ++i) {
        vel[i] = cfg_.momentum * vel[i] + scale * gr[i];
        p[i] -= lr * vel[i];
      }
    };
    ep.for_each([&](const std::string& n, Tensor& t) { step("embed." + n, t); });
    if (cp) cp->for_each([&](const std::string& n, Tensor& t) { step("classifier." + n, t); });
  }

 private:
  const TrainConfig& cfg_;
  std::map<std::string, Tensor> velocity_;
};

std::size_t infer_classes(const std::vector<PointCloud>& labeled) {
  int top = -1;
  for (const auto& pc : labeled)
    for (int l : *pc.labels) top = std::max(top, l);
  return static_cast<std::size_t>(top + 1);
}

void emit(TrainResult& r, std::ostream* os, nlohmann::json rec) {
  if (os) *os << rec.dump() << '\n';
  r.log.push_back(std::move(rec));
}

}  // namespace

TrainResult initial_model(const TrainConfig& cfg, std::size_t classes) {
  TrainResult r;
  r.embedder = EmbedderParams::init(cfg.embedder, cfg.seed);
  r.classifier = ClassifierParams::init(cfg.embedder.embed_dim, std::max<std::size_t>(classes, 1), cfg.seed);
  return r;
}

TrainResult train(const std::vector<PointCloud>& unlabeled, const std::vector<PointCloud>& labeled_all,
                  const TrainConfig& cfg, std::ostream* log_stream) {
  cfg.validate();
  for (const auto& pc : unlabeled) pc.validate();
  for (const auto& pc : labeled_all) {
    pc.validate();
    if (!pc.has_labels()) throw std::invalid_argument("labeled shape '" + pc.name + "' has no labels");
  }
  const std::vector<PointCloud> labeled = select_few_shot(labeled_all, cfg.labeled_k);
  // Without labeled shapes only the self-supervised half-steps run.
  if (cfg.steps > 0 && labeled.empty() && !cfg.self_supervised)
    throw std::invalid_argument("supervised training needs at least one labeled shape");
  if (cfg.steps > 0 && cfg.self_supervised && unlabeled.empty())
    throw std::invalid_argument("self-supervised training needs unlabeled shapes");
  for (const auto& u : unlabeled)
    for (const auto& l : labeled)
      if (u.name == l.name && u.points.vec() == l.points.vec())
        throw std::invalid_argument("shape '" + u.name + "' is in both the unlabeled and the labeled set");

  const std::size_t classes = cfg.classes > 0 ? cfg.classes : infer_classes(labeled);
  TrainResult r = initial_model(cfg, classes);
  for (const auto& pc : labeled)
    for (int l : *pc.labels)
      if (l < 0 || static_cast<std::size_t>(l) >= classes)
        throw std::invalid_argument("label " + std::to_string(l) + " outside [0, " + std::to_string(classes) + ")");

  Rng rng = make_rng(cfg.seed, "train-batch");
  // Separate optimizer state per phase: the two objectives have very different gradient scales.
  Updater ssl_updater(cfg), sl_updater(cfg);
  const double ssl_lr = cfg.ssl_learning_rate > 0.0 ? cfg.ssl_learning_rate : cfg.learning_rate;
  const auto warmup_steps = static_cast<std::size_t>(std::ceil(cfg.warmup_fraction * static_cast<double>(cfg.steps)));

  for (std::size_t step = 0; step < cfg.steps; ++step) {
    if (cfg.self_supervised) {
      const bool warmup = step < warmup_steps;
      std::vector<std::size_t> batch(cfg.batch_unlabeled);
      for (auto& b : batch) b = uniform_index(rng, unlabeled.size());
      const std::uint64_t step_seed = derive_seed(cfg.seed, "sampling") + step;
      std::vector<ShapeGrad> results(batch.size());
      parallel_for(batch.size(), cfg.threads, [&](std::size_t i) {
        results[i] = ssl_gradient(r.embedder, unlabeled[batch[i]], cfg, warmup, step_seed * 31 + i);
      });
      Gradients sum;
      std::size_t used = 0;
      for (std::size_t i = 0; i < batch.size(); ++i) {
        const ShapeGrad& sg = results[i];
        nlohmann::json rec = log_record(step, unlabeled[batch[i]].name, sg.breakdown);
        rec["phase"] = "ssl";
        if (sg.skipped) {
          rec["skipped"] = sg.note;
        } else {
          rec["primitives"] = sg.primitives;
          rec["grad_norm"] = grad_norm(sg.grads);
          ++used;
          r.final_ssl = sg.breakdown;
          for (const auto& [name, t] : sg.grads) {
            auto [it, fresh] = sum.try_emplace(name, t);
            if (!fresh)
              for (std::size_t k = 0; k < t.size(); ++k) it->second[k] += t[k];
          }
        }
        emit(r, log_stream, std::move(rec));
      }
      if (used > 0) {
        for (auto& [name, t] : sum)
          for (double& v : t.flat()) v /= static_cast<double>(used);
        ssl_updater.apply(r.embedder, nullptr, sum, ssl_lr);
      }
    }

    if (labeled.empty()) continue;
    const PointCloud& shape = labeled[uniform_index(rng, labeled.size())];
    const ShapeGrad sg = sl_gradient(r.embedder, r.classifier, shape);
    nlohmann::json rec = log_record(step, shape.name, sg.breakdown);
    rec["phase"] = "sl";
    rec["grad_norm"] = grad_norm(sg.grads);
    emit(r, log_stream, std::move(rec));
    r.final_sl = sg.breakdown;
    sl_updater.apply(r.embedder, &r.classifier, sg.grads, cfg.learning_rate);
  }
  return r;
}

std::vector<int> cluster_embeddings(const Tensor& embedding, const BandwidthConfig& cfg) {
  const double b = estimate_bandwidth(embedding, cfg.neighbor_rank);
  Graph g;
  Var grouped = g.constant(meanshift_iterate(embedding, b, cfg.iterations));
  const ClusterAssignment a = assign_clusters(grouped, b, kMaxClusters, cfg.membership_scale);
  return hard_assignment(a.membership.value());
}

EvalReport evaluate_segmentation(const EmbedderParams& embedder, const ClassifierParams& classifier,
                                 const std::vector<PointCloud>& test, const EvalOptions& opts) {
  if (test.empty()) throw std::invalid_argument("evaluation needs a non-empty test set");
  for (const auto& pc : test) {
    pc.validate();
    if (!pc.has_labels()) throw std::invalid_argument("test shape '" + pc.name + "' has no labels");
  }
  std::vector<std::vector<int>> predicted(test.size()), truth(test.size());
  std::vector<ClusteringScores> clusters(test.size());
  parallel_for(test.size(), opts.threads, [&](std::size_t s) {
    const Tensor z = embed(embedder, test[s].points);
    const Tensor probs = classify(classifier, z);
    predicted[s] = hard_assignment(probs);
    truth[s] = *test[s].labels;
    if (opts.with_clustering && test[s].size() >= 2) {
      clusters[s] = evaluate_clustering(cluster_embeddings(z, opts.bandwidth), truth[s]);
    }
  });
  EvalReport rep;
  const SegmentationScores seg = segmentation_iou(predicted, truth);
  rep.miou = seg.miou;
  rep.per_class_iou = seg.per_class_iou;
  if (opts.with_clustering) {
    double nmi = 0.0;
    for (const auto& c : clusters) {
      nmi += c.nmi;
      rep.precision_recall.push_back({c.precision, c.recall});
    }
    rep.nmi = nmi / static_cast<double>(clusters.size());
  }
  return rep;
}

}  // namespace primseg
