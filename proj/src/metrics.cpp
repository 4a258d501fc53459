#include "primseg/metrics.hpp"

#include <cmath>
#include <limits>
#include <set>
#include <stdexcept>

#include "primseg/rng.hpp"

namespace primseg {
namespace {

std::map<int, double> counts(const std::vector<int>& a) {
  std::map<int, double> c;
  for (int v : a) c[v] += 1.0;
  return c;
}

double entropy(const std::map<int, double>& c, double n) {
  double h = 0.0;
  for (const auto& [k, v] : c) {
    const double p = v / n;
    if (p > 0.0) h -= p * std::log(p);
  }
  return h;
}

double pairs(double n) { return n * (n - 1.0) / 2.0; }

}  // namespace

double normalized_mutual_information(const std::vector<int>& a, const std::vector<int>& b) {
  if (a.size() != b.size()) throw std::invalid_argument("NMI: partitions differ in length");
  if (a.empty()) throw std::invalid_argument("NMI: empty partitions");
  const double n = static_cast<double>(a.size());
  std::map<std::pair<int, int>, double> joint;
  for (std::size_t i = 0; i < a.size(); ++i) joint[{a[i], b[i]}] += 1.0;
  const auto ca = counts(a), cb = counts(b);
  double mi = 0.0;
  for (const auto& [key, nij] : joint) {
    mi += nij / n * std::log(n * nij / (ca.at(key.first) * cb.at(key.second)));
  }
  const double denom = 0.5 * (entropy(ca, n) + entropy(cb, n));
  if (denom <= 0.0) return 1.0;
  return std::clamp(mi / denom, 0.0, 1.0);
}

PairCounts pair_precision_recall(const std::vector<int>& predicted, const std::vector<int>& truth) {
  if (predicted.size() != truth.size()) throw std::invalid_argument("pair counting: length mismatch");
  std::map<std::pair<int, int>, double> joint;
  for (std::size_t i = 0; i < predicted.size(); ++i) joint[{predicted[i], truth[i]}] += 1.0;
  double both = 0.0, pred_pairs = 0.0, true_pairs = 0.0;
  for (const auto& [k, v] : joint) both += pairs(v);
  for (const auto& [k, v] : counts(predicted)) pred_pairs += pairs(v);
  for (const auto& [k, v] : counts(truth)) true_pairs += pairs(v);
  PairCounts out;
  out.precision = pred_pairs > 0.0 ? both / pred_pairs : 1.0;
  out.recall = true_pairs > 0.0 ? both / true_pairs : 1.0;
  return out;
}

ClusteringScores evaluate_clustering(const std::vector<int>& predicted, const std::vector<int>& truth) {
  if (predicted.size() != truth.size()) throw std::invalid_argument("evaluate_clustering: length mismatch");
  if (predicted.size() < 2) throw std::invalid_argument("evaluate_clustering needs at least 2 points");
  const PairCounts pr = pair_precision_recall(predicted, truth);
  return {normalized_mutual_information(predicted, truth), pr.precision, pr.recall};
}

SegmentationScores segmentation_iou(const std::vector<std::vector<int>>& predicted,
                                    const std::vector<std::vector<int>>& truth) {
  if (predicted.size() != truth.size()) throw std::invalid_argument("segmentation_iou: shape count mismatch");
  if (truth.empty()) throw std::invalid_argument("segmentation_iou: empty test set");
  std::map<int, double> inter, uni;
  std::set<int> present;
  for (std::size_t s = 0; s < truth.size(); ++s) {
    if (predicted[s].size() != truth[s].size()) throw std::invalid_argument("segmentation_iou: point count mismatch");
    for (std::size_t i = 0; i < truth[s].size(); ++i) {
      const int p = predicted[s][i], t = truth[s][i];
      present.insert(t);
      if (p == t) {
        inter[t] += 1.0;
        uni[t] += 1.0;
      } else {
        uni[t] += 1.0;
        uni[p] += 1.0;
      }
    }
  }
  SegmentationScores out;
  for (const auto& [c, u] : uni) out.per_class_iou[c] = u > 0.0 ? inter[c] / u : 0.0;
  double total = 0.0;
  for (int c : present) total += out.per_class_iou[c];
  out.miou = total / static_cast<double>(present.size());
  return out;
}

nlohmann::json EvalReport::to_json() const {
  nlohmann::json pr = nlohmann::json::array();
  for (const auto& p : precision_recall) pr.push_back({{"precision", p.precision}, {"recall", p.recall}});
  nlohmann::json pc = nlohmann::json::object();
  for (const auto& [c, v] : per_class_iou) pc[std::to_string(c)] = v;
  return {{"nmi", nmi}, {"miou", miou}, {"per_class_iou", pc}, {"precision_recall", pr}};
}

std::vector<int> kmeans_points_baseline(const PointCloud& pc, std::size_t k, std::uint64_t seed) {
  pc.validate();
  const std::size_t n = pc.size();
  if (k < 1) throw std::invalid_argument("kmeans: k must be >= 1");
  if (k > n) throw std::invalid_argument("kmeans: k exceeds the number of points");
  const Tensor& x = pc.points;
  auto sq = [&](std::size_t i, const std::array<double, 3>& c) {
    double s = 0.0;
    for (std::size_t d = 0; d < 3; ++d) s += (x(i, d) - c[d]) * (x(i, d) - c[d]);
    return s;
  };
  Rng rng = make_rng(seed, "kmeans");

  // k-means++ seeding
  std::vector<std::array<double, 3>> centers;
  std::vector<bool> chosen(n, false);
  auto take = [&](std::size_t i) {
    chosen[i] = true;
    centers.push_back({x(i, 0), x(i, 1), x(i, 2)});
  };
  take(uniform_index(rng, n));
  std::vector<double> d2(n, std::numeric_limits<double>::infinity());
  while (centers.size() < k) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      d2[i] = std::min(d2[i], sq(i, centers.back()));
      if (!chosen[i]) total += d2[i];
    }
    std::size_t pick = n;
    if (total > 0.0) {
      double r = uniform01(rng) * total;
      for (std::size_t i = 0; i < n; ++i) {
        if (chosen[i]) continue;
        r -= d2[i];
        pick = i;
        if (r < 0.0) break;
      }
    } else {
      std::vector<std::size_t> rest;
      for (std::size_t i = 0; i < n; ++i)
        if (!chosen[i]) rest.push_back(i);
      pick = rest[uniform_index(rng, rest.size())];
    }
    take(pick);
  }

  std::vector<int> labels(n, -1);
  for (int iter = 0; iter < 100; ++iter) {
    bool changed = false;
    for (std::size_t i = 0; i < n; ++i) {
      int best = 0;
      double bd = sq(i, centers[0]);
      for (std::size_t c = 1; c < k; ++c) {
        const double d = sq(i, centers[c]);
        if (d < bd) {
          bd = d;
          best = static_cast<int>(c);
        }
      }
      if (labels[i] != best) {
        labels[i] = best;
        changed = true;
      }
    }
    if (!changed) break;
    std::vector<std::array<double, 3>> acc(k, {0.0, 0.0, 0.0});
    std::vector<double> cnt(k, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t d = 0; d < 3; ++d) acc[labels[i]][d] += x(i, d);
      cnt[labels[i]] += 1.0;
    }
    for (std::size_t c = 0; c < k; ++c)
      if (cnt[c] > 0.0)
        for (std::size_t d = 0; d < 3; ++d) centers[c][d] = acc[c][d] / cnt[c];
  }
  return labels;
}

}  // namespace primseg
