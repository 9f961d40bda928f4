#pragma once

#include <cstdint>
#include <vector>

#include "pillarseg/grid.hpp"
#include "pillarseg/types.hpp"

namespace pillarseg {

// Every cell the open segment [origin -> endpoint) crosses with positive
// length, in traversal order, after clipping to the grid box. The cell
// containing the endpoint is excluded; if the endpoint lies outside the grid
// the walk continues to the boundary. When the segment passes exactly
// through a cell corner the axis with the smaller index advances first.
// Throws DegenerateRay when origin == endpoint.
std::vector<CellIndex> traverse_2d(const Eigen::Vector2d& origin, const Eigen::Vector2d& endpoint,
                                   const GridSpec& spec);

// 3D analogue (incremental grid traversal). Unlike traverse_2d the endpoint
// voxel is included as the final element when it lies inside the grid;
// callers mark it as the hit.
std::vector<VoxelIndex> traverse_3d(const Vec3& origin, const Vec3& endpoint, const GridSpec& spec);

// Per-cell LiDAR free-space evidence: how many rays passed through a cell
// (transmissions) and how many ended in it (hits).
struct ObservabilityMap {
  int width = 0;
  int height = 0;
  std::vector<std::uint32_t> transmissions;  // index = j * width + i
  std::vector<std::uint32_t> hits;
  std::size_t degenerate_rays = 0;

  ObservabilityMap() = default;
  ObservabilityMap(int w, int h)
      : width(w), height(h), transmissions(std::size_t(w) * h, 0), hits(std::size_t(w) * h, 0) {}

  std::size_t index(int i, int j) const { return std::size_t(j) * width + i; }
};

// Hit-ratio inverse sensor model over the 3D voxel grid; 0.5 prior for
// voxels never touched by a ray.
struct VoxelOccupancy {
  int width = 0;
  int height = 0;
  int depth = 0;
  std::vector<float> probability;  // index = (k * height + j) * width + i

  std::size_t index(int i, int j, int k) const {
    return (std::size_t(k) * height + j) * width + i;
  }
};

struct ObservedMask {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> observed;

  std::size_t index(int i, int j) const { return std::size_t(j) * width + i; }
};

// Casts one 2D ray per point from the sensor origin (z dropped) and
// accumulates transmissions along the way plus a hit at the endpoint cell.
// Rays whose 2D projection is degenerate are skipped and counted.
ObservabilityMap observability_map(const PointCloud& cloud, const Vec3& sensor_origin,
                                   const GridSpec& spec);

VoxelOccupancy voxel_occupancy(const PointCloud& cloud, const Vec3& sensor_origin,
                               const GridSpec& spec);

// observed <=> transmissions >= 1 or hits >= 1.
ObservedMask observed_mask(const ObservabilityMap& map);

}  // namespace pillarseg
