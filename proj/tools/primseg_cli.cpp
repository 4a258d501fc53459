// primseg: decomposition, training, evaluation, gradient checks and synthetic data.
//
// Exit codes: 0 ok, 1 usage/parse/IO error, 2 unfittable shape, 3 training
// diverged, 4 gradient check failed.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "primseg/embedder.hpp"
#include "primseg/export.hpp"
#include "primseg/gradcheck.hpp"
#include "primseg/pipeline.hpp"
#include "primseg/rng.hpp"
#include "primseg/synthetic.hpp"
#include "primseg/train.hpp"

namespace fs = std::filesystem;
using namespace primseg;

namespace {

constexpr int kExitIo = 1;
constexpr int kExitUnfittable = 2;
constexpr int kExitDiverged = 3;
constexpr int kExitGradcheck = 4;

// Thrown for anything that should exit with code 1.
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

nlohmann::json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("invalid JSON in '" + path.string() + "': " + e.what());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

std::vector<PointCloud> load_dir(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError("not a directory: '" + dir.string() + "'");
  try {
    return load_directory(dir);
  } catch (const ParseError& e) {
    throw IoError(e.what());
  }
}

void print_breakdown(const LossBreakdown& b) {
  std::printf("loss: l1=%.6g l2=%.6g recon=%.6g inter=%.6g sym=%.6g ce=%.6g total=%.6g\n", b.l1, b.l2, b.recon,
              b.inter, b.sym, b.ce, b.total);
}

// Flags shared by every subcommand that reads a TrainConfig. Optional values
// are only applied when given, so they override the config file.
struct ConfigFlags {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> threads;
  std::optional<std::string> primitive;

  void add(CLI::App* app, bool with_primitive = true) {
    app->add_option("--config", config_path, "JSON config file (flags override its values)")->check(CLI::ExistingFile);
    app->add_option("--seed", seed, "Random seed");
    app->add_option("--threads", threads, "Worker threads for per-shape loops")->check(CLI::PositiveNumber);
    if (with_primitive)
      app->add_option("--primitive", primitive, "Primitive kind")->check(CLI::IsMember({"ellipsoid", "cuboid"}));
  }

  TrainConfig resolve() const {
    TrainConfig cfg;
    if (!config_path.empty()) {
      try {
        cfg.merge_json(read_json(config_path));
      } catch (const nlohmann::json::exception& e) {
        throw IoError("bad config '" + config_path + "': " + e.what());
      } catch (const std::invalid_argument& e) {
        throw IoError("bad config '" + config_path + "': " + e.what());
      }
    }
    if (seed) cfg.seed = *seed;
    if (threads) cfg.threads = *threads;
    if (primitive) cfg.primitive_kind = primitive_kind_from_string(*primitive);
    return cfg;
  }
};

struct Model {
  EmbedderParams embedder;
  ClassifierParams classifier;
};

Model load_checkpoint(const fs::path& path) {
  Model m;
  try {
    checkpoint_from_json(read_json(path), m.embedder, m.classifier);
  } catch (const IoError&) {
    throw;
  } catch (const std::exception& e) {
    throw IoError("bad checkpoint '" + path.string() + "': " + e.what());
  }
  return m;
}

// ---- decompose ----

struct DecomposeArgs {
  ConfigFlags common;
  std::string input, checkpoint, out_obj, out_json;
};

int run_decompose(const DecomposeArgs& a) {
  const TrainConfig cfg = a.common.resolve();
  PointCloud pc;
  try {
    pc = load_pointcloud(a.input);
  } catch (const std::exception& e) {
    throw IoError(e.what());
  }
  Model m;
  if (!a.checkpoint.empty()) {
    m = load_checkpoint(a.checkpoint);
  } else {
    std::fprintf(stderr, "warning: no --checkpoint given, using a randomly initialized embedder\n");
    m.embedder = EmbedderParams::init(cfg.embedder, cfg.seed);
  }

  Graph g;
  Var z = embed(bind(g, m.embedder, false), g.constant(pc.points));
  PipelineConfig pcfg = cfg.pipeline;
  pcfg.primitive_kind = cfg.primitive_kind;
  Decomposition d;
  try {
    d = decompose(z, pc.points, pcfg, cfg.seed);
  } catch (const UnfittableShape& e) {
    std::fprintf(stderr, "error: unfittable shape '%s': %s\n", a.input.c_str(), e.what());
    return kExitUnfittable;
  } catch (const NumericError& e) {
    std::fprintf(stderr, "error: unfittable shape '%s': %s\n", a.input.c_str(), e.what());
    return kExitUnfittable;
  }
  const std::vector<PrimitiveParams> prims = d.primitives();
  const TotalLoss t = total_loss(d.terms, false, false, pcfg.weights);

  std::printf("%s: %zu points, %zu primitives\n", pc.name.c_str(), pc.size(), prims.size());
  for (std::size_t k = 0; k < prims.size(); ++k) {
    const auto& p = prims[k];
    std::printf("  [%zu] %s center=(%.4f, %.4f, %.4f) axes=(%.4f, %.4f, %.4f) weight=%.2f\n", k,
                to_string(p.kind).c_str(), p.center[0], p.center[1], p.center[2], p.semi_axes[0], p.semi_axes[1],
                p.semi_axes[2], d.fits[k].effective_weight);
  }
  print_breakdown(t.breakdown);

  try {
    if (!a.out_obj.empty()) export_primitives(prims, a.out_obj, ExportFormat::Obj);
    if (!a.out_json.empty()) export_primitives(prims, a.out_json, ExportFormat::Json);
  } catch (const std::exception& e) {
    throw IoError(e.what());
  }
  return 0;
}

// ---- train ----

struct TrainArgs {
  ConfigFlags common;
  std::string unlabeled, labeled, out, log;
  std::optional<std::size_t> k, steps, batch, classes;
  std::optional<double> lr, ssl_lr, clip;
  std::optional<std::string> optimizer;
  bool supervised_only = false;
};

int run_train(const TrainArgs& a) {
  TrainConfig cfg = a.common.resolve();
  if (a.k) cfg.labeled_k = *a.k;
  if (a.steps) cfg.steps = *a.steps;
  if (a.batch) cfg.batch_unlabeled = *a.batch;
  if (a.classes) cfg.classes = *a.classes;
  if (a.lr) cfg.learning_rate = *a.lr;
  if (a.ssl_lr) cfg.ssl_learning_rate = *a.ssl_lr;
  if (a.clip) cfg.clip_norm = *a.clip;
  if (a.optimizer) cfg.optimizer = optimizer_from_string(*a.optimizer);
  if (a.supervised_only) cfg.self_supervised = false;
  try {
    cfg.validate();
  } catch (const std::invalid_argument& e) {
    throw IoError(std::string("invalid configuration: ") + e.what());
  }

  const std::vector<PointCloud> unlabeled = a.unlabeled.empty() ? std::vector<PointCloud>{} : load_dir(a.unlabeled);
  const std::vector<PointCloud> labeled = a.labeled.empty() ? std::vector<PointCloud>{} : load_dir(a.labeled);
  for (const auto& pc : labeled)
    if (!pc.has_labels()) throw IoError("labeled shape '" + pc.name + "' has no label column");

  std::ofstream log_file;
  if (!a.log.empty()) {
    log_file.open(a.log, std::ios::binary);
    if (!log_file) throw IoError("cannot write '" + a.log + "'");
  }
  TrainResult r;
  try {
    r = train(unlabeled, labeled, cfg, a.log.empty() ? nullptr : &log_file);
  } catch (const DivergenceError& e) {
    std::fprintf(stderr, "error: training diverged: %s\n", e.what());
    return kExitDiverged;
  } catch (const std::invalid_argument& e) {
    throw IoError(e.what());
  }
  write_text(a.out, checkpoint_to_json(r.embedder, r.classifier).dump() + "\n");
  std::printf("trained %zu steps, checkpoint written to %s\n", cfg.steps, a.out.c_str());
  if (cfg.self_supervised) {
    std::printf("final self-supervised ");
    print_breakdown(r.final_ssl);
  }
  std::printf("final supervised ");
  print_breakdown(r.final_sl);
  return 0;
}

// ---- eval ----

struct EvalArgs {
  ConfigFlags common;
  std::string checkpoint, test, report;
  bool no_clustering = false;
};

int run_eval(const EvalArgs& a) {
  const TrainConfig cfg = a.common.resolve();
  const Model m = load_checkpoint(a.checkpoint);
  const std::vector<PointCloud> test = load_dir(a.test);
  if (test.empty()) throw IoError("no point clouds in '" + a.test + "'");
  for (const auto& pc : test)
    if (!pc.has_labels()) throw IoError("evaluation requires labels; '" + pc.name + "' has none");
  EvalOptions opts;
  opts.with_clustering = !a.no_clustering;
  opts.bandwidth = cfg.pipeline.bandwidth;
  opts.threads = cfg.threads;
  const EvalReport rep = evaluate_segmentation(m.embedder, m.classifier, test, opts);
  write_text(a.report, rep.to_json().dump(2) + "\n");
  if (opts.with_clustering)
    std::printf("shapes=%zu miou=%.4f nmi=%.4f\n", test.size(), rep.miou, rep.nmi);
  else
    std::printf("shapes=%zu miou=%.4f\n", test.size(), rep.miou);
  return 0;
}

// ---- gradcheck ----

struct GradcheckArgs {
  std::uint64_t seed = 0;
  double tolerance = 1e-4;
  std::string report, break_op;
};

int run_gradcheck(const GradcheckArgs& a) {
  GradcheckOptions opts;
  opts.tolerance = a.tolerance;
  opts.break_op = a.break_op;
  const GradcheckReport rep = gradcheck_suite(a.seed, opts);
  for (const auto& e : rep.entries) {
    if (e.skipped)
      std::printf("%-24s %s\n", e.name.c_str(), e.note.c_str());
    else
      std::printf("%-24s %.3e %s\n", e.name.c_str(), e.max_rel_error, e.passed ? "ok" : "FAIL");
  }
  if (!a.report.empty()) write_text(a.report, rep.to_json().dump(2) + "\n");
  if (!rep.all_passed()) {
    std::string names;
    for (const auto& n : rep.failures()) names += (names.empty() ? "" : ", ") + n;
    std::fprintf(stderr, "gradcheck failed: %s\n", names.c_str());
    return kExitGradcheck;
  }
  std::printf("all %zu components within %.0e\n", rep.entries.size(), rep.tolerance);
  return 0;
}

// ---- synth ----

struct SynthArgs {
  std::string out, spec, format = "xyz";
  std::size_t parts = 3, count = 1, points = 2048;
  std::uint64_t seed = 0;
  bool benchmark = false;
  std::size_t unlabeled = 200, labeled = 5, test = 10;
};

void save_all(const std::vector<PointCloud>& clouds, const fs::path& dir, const std::string& ext) {
  fs::create_directories(dir);
  for (const auto& pc : clouds) save_pointcloud(pc, dir / (pc.name + "." + ext));
}

int run_synth(const SynthArgs& a) {
  const std::string ext = a.format;
  std::vector<PointCloud> clouds;
  try {
    if (a.benchmark) {
      const BenchmarkSplit split = make_benchmark(a.unlabeled, a.labeled, a.test, a.points, a.seed);
      save_all(split.unlabeled, fs::path(a.out) / "unlabeled", ext);
      save_all(split.labeled, fs::path(a.out) / "labeled", ext);
      save_all(split.test, fs::path(a.out) / "test", ext);
      std::printf("wrote %zu unlabeled, %zu labeled and %zu test shapes to %s\n", split.unlabeled.size(),
                  split.labeled.size(), split.test.size(), a.out.c_str());
      return 0;
    }
    std::optional<SyntheticSpec> fixed;
    if (!a.spec.empty()) {
      const nlohmann::json j = read_json(a.spec);
      SyntheticSpec s;
      for (const auto& p : j.at("parts")) s.parts.push_back(primitive_from_json(p));
      if (j.contains("labels")) s.part_labels = j.at("labels").get<std::vector<int>>();
      s.separated = j.value("separated", true);
      s.points_per_shape = j.value("points", a.points);
      fixed = s;
    }
    const std::uint64_t base = derive_seed(a.seed, "synth");
    for (std::size_t i = 0; i < a.count; ++i) {
      SyntheticSpec s = fixed ? *fixed : random_separated_spec(a.parts, base + i, a.points);
      s.seed = base + i;
      PointCloud pc = generate_synthetic(s);
      char buf[32];
      std::snprintf(buf, sizeof buf, "shape_%04zu", i);
      pc.name = buf;
      clouds.push_back(std::move(pc));
    }
    save_all(clouds, a.out, ext);
  } catch (const IoError&) {
    throw;
  } catch (const std::exception& e) {
    throw IoError(e.what());
  }
  std::printf("wrote %zu shapes to %s\n", clouds.size(), a.out.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Primitive decomposition and few-shot part segmentation of point clouds"};
  app.require_subcommand(1);

  DecomposeArgs dec;
  auto* c_dec = app.add_subcommand("decompose", "Fit primitives to one point cloud");
  c_dec->add_option("input", dec.input, "Input point cloud (.xyz or .ply)")->required();
  c_dec->add_option("--checkpoint", dec.checkpoint, "Checkpoint JSON (random init when omitted)");
  c_dec->add_option("--out-obj", dec.out_obj, "Write primitives as an OBJ mesh");
  c_dec->add_option("--out-json", dec.out_json, "Write primitive parameters as JSON");
  dec.common.add(c_dec);

  TrainArgs tr;
  auto* c_tr = app.add_subcommand("train", "Alternating self-supervised / few-shot training");
  c_tr->add_option("--unlabeled", tr.unlabeled, "Directory of unlabeled shapes");
  c_tr->add_option("--labeled", tr.labeled, "Directory of labeled shapes (omit for self-supervised only)");
  c_tr->add_option("--k", tr.k, "Labeled shapes per category (0 = all)");
  c_tr->add_option("--steps", tr.steps, "Training steps");
  c_tr->add_option("--batch", tr.batch, "Unlabeled shapes per self-supervised step")->check(CLI::PositiveNumber);
  c_tr->add_option("--classes", tr.classes, "Number of part classes (default: max label + 1)");
  c_tr->add_option("--lr", tr.lr, "Learning rate")->check(CLI::PositiveNumber);
  c_tr->add_option("--ssl-lr", tr.ssl_lr, "Learning rate of self-supervised steps (default: --lr)");
  c_tr->add_option("--clip", tr.clip, "Gradient-norm clip (0 = off)")->check(CLI::NonNegativeNumber);
  c_tr->add_option("--optimizer", tr.optimizer, "sgd or momentum")->check(CLI::IsMember({"sgd", "momentum"}));
  c_tr->add_flag("--supervised-only", tr.supervised_only, "Skip the self-supervised steps");
  c_tr->add_option("--out", tr.out, "Checkpoint output path")->required();
  c_tr->add_option("--log", tr.log, "JSON-lines training log");
  tr.common.add(c_tr);

  EvalArgs ev;
  auto* c_ev = app.add_subcommand("eval", "Segmentation and clustering metrics on a labeled test set");
  c_ev->add_option("--checkpoint", ev.checkpoint, "Checkpoint JSON")->required();
  c_ev->add_option("--test", ev.test, "Directory of labeled test shapes")->required();
  c_ev->add_option("--report", ev.report, "Report JSON output path")->required();
  c_ev->add_flag("--no-clustering", ev.no_clustering, "Skip mean-shift clustering metrics");
  ev.common.add(c_ev, false);

  GradcheckArgs gc;
  auto* c_gc = app.add_subcommand("gradcheck", "Compare analytic gradients with central finite differences");
  c_gc->add_option("--seed", gc.seed, "Random seed");
  c_gc->add_option("--tolerance", gc.tolerance, "Maximum relative error")->check(CLI::PositiveNumber);
  c_gc->add_option("--report", gc.report, "Report JSON output path");
  c_gc->add_option("--break-op", gc.break_op, "Corrupt the analytic gradient of this case (tests the failure path)");

  SynthArgs sy;
  auto* c_sy = app.add_subcommand("synth", "Generate labeled synthetic point clouds");
  c_sy->add_option("--out", sy.out, "Output directory")->required();
  c_sy->add_option("--spec", sy.spec, "JSON spec {parts: [...], labels: [...], points, separated}")
      ->check(CLI::ExistingFile);
  c_sy->add_option("--parts", sy.parts, "Parts per random shape")->check(CLI::PositiveNumber);
  c_sy->add_option("--count", sy.count, "Number of shapes")->check(CLI::PositiveNumber);
  c_sy->add_option("--points", sy.points, "Points per shape")->check(CLI::PositiveNumber);
  c_sy->add_option("--format", sy.format, "xyz or ply")->check(CLI::IsMember({"xyz", "ply"}));
  c_sy->add_option("--seed", sy.seed, "Random seed");
  c_sy->add_flag("--benchmark", sy.benchmark, "Write the few-shot benchmark (unlabeled/, labeled/, test/)");
  c_sy->add_option("--unlabeled", sy.unlabeled, "Benchmark: unlabeled shapes in total");
  c_sy->add_option("--labeled", sy.labeled, "Benchmark: labeled shapes per category");
  c_sy->add_option("--test", sy.test, "Benchmark: test shapes per category");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitIo;
  }

  try {
    if (*c_dec) return run_decompose(dec);
    if (*c_tr) return run_train(tr);
    if (*c_ev) return run_eval(ev);
    if (*c_gc) return run_gradcheck(gc);
    if (*c_sy) return run_synth(sy);
  } catch (const IoError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitIo;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitIo;
  }
  return kExitIo;
}
