#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "pillarseg/grid.hpp"
#include "pillarseg/types.hpp"

namespace pillarseg {

// Per-cell class histogram over the top-view grid.
struct CellCounts {
  int width = 0;
  int height = 0;
  std::vector<std::uint32_t> counts;  // index = (j * width + i) * kNumClasses + k

  CellCounts() = default;
  CellCounts(int w, int h)
      : width(w), height(h), counts(std::size_t(w) * h * kNumClasses, 0) {}

  std::uint32_t at(int i, int j, int k) const {
    return counts[(std::size_t(j) * width + i) * kNumClasses + k];
  }
};

using GtWeights = std::array<double, kNumClasses>;

// Rasterization weights: 5 for the traffic participants (vehicle, person,
// two-wheel, rider), 1 for everything else.
GtWeights default_gt_weights();

// Histogram of merged classes per cell over in-crop points; unlabeled
// points are counted nowhere. Throws PairMismatch.
CellCounts count_cells(const PointCloud& cloud, const LabelSet& labels, const GridSpec& spec);

// Cell class = argmax_k weight[k] * count[k]; all-zero scores leave the 255
// sentinel; score ties resolve to the smallest class id.
SemanticGrid weighted_argmax(const CellCounts& counts, const GtWeights& weights);

SemanticGrid sparse_gt(const PointCloud& cloud, const LabelSet& labels, const GridSpec& spec,
                       const GtWeights& weights);

struct NeighborConfig {
  // Farthest point distance d; scans whose sensor moved less than 2*d from
  // the reference scan qualify for aggregation.
  double d = 80.0;
  std::size_t max_scans = 40;
  // Distance between poses: full Euclidean by default, or only the
  // along-track component (x in the reference scan's frame).
  enum class Distance { kEuclidean, kAlongX } distance = Distance::kEuclidean;
};

// Indices of the scans aggregated for scan `idx`: every candidate closer
// than 2*d, nearest first (ties by index), truncated to max_scans. The
// reference scan itself is always part of the result.
std::vector<std::size_t> select_neighbors(const std::vector<Pose>& poses, std::size_t idx,
                                          const NeighborConfig& cfg);

// All aggregated points in scan idx's sensor frame: the reference scan
// keeps every labelled point (movers contribute with their merged class);
// neighbors drop points flagged moving.
struct AggregateResult {
  PointCloud cloud;
  LabelSet labels;
};
AggregateResult aggregate_cloud(const std::vector<PointCloud>& scans,
                                const std::vector<LabelSet>& labels,
                                const std::vector<Pose>& poses, std::size_t idx,
                                const NeighborConfig& cfg);

// sparse_gt of the multi-scan aggregate.
SemanticGrid dense_gt(const std::vector<PointCloud>& scans, const std::vector<LabelSet>& labels,
                      const std::vector<Pose>& poses, std::size_t idx, const GridSpec& spec,
                      const GtWeights& weights, const NeighborConfig& cfg);

}  // namespace pillarseg
