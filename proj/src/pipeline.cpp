#include "primseg/pipeline.hpp"

#include "primseg/rng.hpp"

namespace primseg {

std::vector<PrimitiveParams> Decomposition::primitives() const {
  std::vector<PrimitiveParams> out;
  for (const auto& p : prims) out.push_back(p.params());
  return out;
}

Decomposition decompose(Var embeddings, const Tensor& points, const PipelineConfig& cfg, std::uint64_t seed,
                        const DecomposeOptions& opts) {
  Graph& g = *embeddings.graph;
  if (points.rows() != embeddings.rows() || points.cols() != 3) {
    throw ShapeError("decompose: points " + points.shape_str() + " vs embeddings " + embeddings.value().shape_str());
  }
  const FrozenDecomposition* replay = opts.replay;
  Decomposition d;
  FrozenDecomposition& f = d.frozen;

  f.bandwidth = replay ? replay->bandwidth : estimate_bandwidth(embeddings.value(), cfg.bandwidth.neighbor_rank);
  d.grouped = meanshift_iterate(embeddings, f.bandwidth, cfg.bandwidth.iterations);

  if (replay) {
    f.center_indices = replay->center_indices;
    f.centers = replay->centers;
    d.membership = soft_membership(d.grouped, f.centers, cfg.bandwidth.membership_scale);
  } else {
    ClusterAssignment a = assign_clusters(d.grouped, f.bandwidth, kMaxClusters, cfg.bandwidth.membership_scale);
    f.center_indices = std::move(a.center_indices);
    f.centers = std::move(a.centers);
    d.membership = a.membership;
  }

  Var x = g.constant(points);
  d.fits = replay ? fit_all(x, d.membership, cfg.fit, &replay->kept_clusters, &replay->backward_enabled)
                  : fit_all(x, d.membership, cfg.fit);
  for (const auto& fit : d.fits) {
    f.kept_clusters.push_back(fit.cluster);
    f.backward_enabled.push_back(fit.backward_enabled);
    d.prims.push_back(cfg.primitive_kind == PrimitiveKind::Cuboid ? ellipsoid_to_cuboid(fit.vars) : fit.vars);
  }
  const std::vector<PrimitiveParams> values = d.primitives();

  if (!opts.with_losses) return d;

  f.surface_plan = replay ? replay->surface_plan
                          : plan_surface_samples(values, cfg.surface_samples, derive_seed(seed, "sampling"));
  d.surface_samples = realize_surface_samples(d.prims, f.surface_plan);

  if (replay) {
    f.interior = replay->interior;
  } else {
    const std::uint64_t inside_seed = derive_seed(seed, "inside");
    for (std::size_t m = 0; m < values.size(); ++m) {
      f.interior.push_back(values.size() > 1 && cfg.interior_samples > 0
                               ? sample_inside(values[m], cfg.interior_samples, inside_seed ^ m)
                               : Tensor(0, 3));
    }
  }

  d.terms.l1 = coverage_loss(x, d.prims);
  d.terms.l2 = fit_loss(points, d.surface_samples);
  d.terms.inter = intersection_loss(d.prims, f.interior);
  if (opts.with_similarity) d.terms.sym = similarity_loss(d.grouped);
  return d;
}

}  // namespace primseg
