#include "pillarseg/groundtruth.hpp"

#include <algorithm>
#include <cmath>

#include "pillarseg/errors.hpp"

namespace pillarseg {

GtWeights default_gt_weights() {
  GtWeights w;
  w.fill(1.0);
  w[kVehicle] = 5.0;
  w[kPerson] = 5.0;
  w[kTwoWheel] = 5.0;
  w[kRider] = 5.0;
  return w;
}

CellCounts count_cells(const PointCloud& cloud, const LabelSet& labels, const GridSpec& spec) {
  if (cloud.points.size() != labels.class_id.size()) {
    throw PairMismatch("count_cells: cloud and labels differ in length");
  }
  CellCounts counts(spec.width(), spec.height());
  for (std::size_t idx = 0; idx < cloud.points.size(); ++idx) {
    const std::uint8_t k = labels.class_id[idx];
    if (k == kUnlabeled) continue;
    if (auto cell = cell_of(cloud.points[idx].xyz(), spec)) {
      ++counts.counts[(std::size_t(cell->j) * counts.width + cell->i) * kNumClasses + k];
    }
  }
  return counts;
}

SemanticGrid weighted_argmax(const CellCounts& counts, const GtWeights& weights) {
  SemanticGrid grid(counts.width, counts.height);
  for (std::size_t cell = 0; cell < std::size_t(counts.width) * counts.height; ++cell) {
    double best = 0.0;
    int best_k = kUnlabeled;
    for (int k = 0; k < int(kNumClasses); ++k) {
      const double score = weights[k] * double(counts.counts[cell * kNumClasses + k]);
      if (score > best) {  // strict: ties keep the earlier (smaller) class id
        best = score;
        best_k = k;
      }
    }
    grid.class_id[cell] = std::uint8_t(best_k);
  }
  return grid;
}

SemanticGrid sparse_gt(const PointCloud& cloud, const LabelSet& labels, const GridSpec& spec,
                       const GtWeights& weights) {
  return weighted_argmax(count_cells(cloud, labels, spec), weights);
}

std::vector<std::size_t> select_neighbors(const std::vector<Pose>& poses, std::size_t idx,
                                          const NeighborConfig& cfg) {
  const Pose inverse_ref = poses[idx].inverse();
  std::vector<std::pair<double, std::size_t>> candidates;
  for (std::size_t j = 0; j < poses.size(); ++j) {
    double dist;
    if (cfg.distance == NeighborConfig::Distance::kEuclidean) {
      dist = (poses[j].translation - poses[idx].translation).norm();
    } else {
      dist = std::abs(inverse_ref.apply(poses[j].translation).x());
    }
    // The reference scan sorts ahead of everything so truncation can never
    // drop it, even when another pose sits at the exact same spot.
    if (j == idx) {
      candidates.emplace_back(-1.0, j);
    } else if (dist < 2.0 * cfg.d) {
      candidates.emplace_back(dist, j);
    }
  }
  std::sort(candidates.begin(), candidates.end());
  if (candidates.size() > cfg.max_scans) candidates.resize(cfg.max_scans);

  std::vector<std::size_t> result;
  result.reserve(candidates.size());
  for (const auto& [dist, j] : candidates) result.push_back(j);
  return result;
}

AggregateResult aggregate_cloud(const std::vector<PointCloud>& scans,
                                const std::vector<LabelSet>& labels,
                                const std::vector<Pose>& poses, std::size_t idx,
                                const NeighborConfig& cfg) {
  if (scans.size() != labels.size() || scans.size() != poses.size()) {
    throw PairMismatch("aggregate_cloud: scans, labels and poses differ in length");
  }
  const Pose inverse_ref = poses[idx].inverse();

  AggregateResult out;
  out.cloud.frame_id = scans[idx].frame_id;
  for (std::size_t j : select_neighbors(poses, idx, cfg)) {
    if (scans[j].points.size() != labels[j].class_id.size()) {
      throw PairMismatch("aggregate_cloud: scan and label lengths differ");
    }
    const Pose to_ref = inverse_ref * poses[j];
    for (std::size_t n = 0; n < scans[j].points.size(); ++n) {
      if (j != idx && labels[j].moving[n]) continue;
      const Point& p = scans[j].points[n];
      const Vec3 q = to_ref.apply(p.xyz());
      out.cloud.points.push_back(Point{q.x(), q.y(), q.z(), p.r});
      out.labels.class_id.push_back(labels[j].class_id[n]);
      out.labels.moving.push_back(labels[j].moving[n]);
      out.labels.raw_words.push_back(labels[j].raw_words[n]);
    }
  }
  return out;
}

SemanticGrid dense_gt(const std::vector<PointCloud>& scans, const std::vector<LabelSet>& labels,
                      const std::vector<Pose>& poses, std::size_t idx, const GridSpec& spec,
                      const GtWeights& weights, const NeighborConfig& cfg) {
  AggregateResult aggregate = aggregate_cloud(scans, labels, poses, idx, cfg);
  return sparse_gt(aggregate.cloud, aggregate.labels, spec, weights);
}

}  // namespace pillarseg
