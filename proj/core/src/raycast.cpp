#include "pillarseg/raycast.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>

#include "pillarseg/errors.hpp"

namespace pillarseg {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Cell index along one axis in scaled coordinates (cell edge length 1),
// honouring the half-open convention and the snap tolerance used by
// cell_index. A ray sitting exactly on a boundary and moving in the
// negative direction starts in the lower cell.
int entry_cell(double u, double dir, int dim) {
  double f = std::floor(u);
  double frac = u - f;
  int c;
  if (frac > 1.0 - 1e-9) {
    c = int(f) + 1;
    frac = 0.0;
  } else {
    c = int(f);
  }
  if (frac < 1e-9 && dir < 0.0) --c;
  return std::clamp(c, 0, dim - 1);
}

template <int Dim>
std::vector<std::array<int, Dim>> traverse(const std::array<double, Dim>& origin,
                                           const std::array<double, Dim>& endpoint,
                                           const std::array<int, Dim>& dims) {
  bool same = true;
  for (int a = 0; a < Dim; ++a) same = same && origin[a] == endpoint[a];
  if (same) throw DegenerateRay("ray origin equals endpoint");

  std::array<double, Dim> d;
  for (int a = 0; a < Dim; ++a) d[a] = endpoint[a] - origin[a];

  // Clip the parametric segment t in [0,1] to the grid box.
  double t0 = 0.0;
  double t1 = 1.0;
  for (int a = 0; a < Dim; ++a) {
    if (d[a] == 0.0) {
      if (origin[a] < 0.0 || origin[a] >= double(dims[a])) return {};
      continue;
    }
    double ta = (0.0 - origin[a]) / d[a];
    double tb = (double(dims[a]) - origin[a]) / d[a];
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
  }
  if (!(t0 < t1)) return {};  // missed the box, or touches it in a single point

  std::array<double, Dim> pos;
  std::array<int, Dim> cell{};
  std::array<int, Dim> step{};
  std::array<double, Dim> t_max;
  std::array<double, Dim> t_delta;
  for (int a = 0; a < Dim; ++a) {
    pos[a] = origin[a] + t0 * d[a];
    cell[a] = entry_cell(pos[a], d[a], dims[a]);
    if (d[a] > 0.0) {
      step[a] = 1;
      t_delta[a] = 1.0 / d[a];
      t_max[a] = t0 + (double(cell[a] + 1) - pos[a]) / d[a];
    } else if (d[a] < 0.0) {
      step[a] = -1;
      t_delta[a] = -1.0 / d[a];
      t_max[a] = t0 + (double(cell[a]) - pos[a]) / d[a];
    } else {
      step[a] = 0;
      t_delta[a] = kInf;
      t_max[a] = kInf;
    }
  }

  std::vector<std::array<int, Dim>> cells;
  cells.push_back(cell);
  while (true) {
    int axis = 0;
    for (int a = 1; a < Dim; ++a) {
      if (t_max[a] < t_max[axis]) axis = a;  // ties advance the smaller axis first
    }
    if (!(t_max[axis] < t1)) break;  // next boundary lies at or past the segment end
    cell[axis] += step[axis];
    if (cell[axis] < 0 || cell[axis] >= dims[axis]) break;
    t_max[axis] += t_delta[axis];
    cells.push_back(cell);
  }
  return cells;
}

}  // namespace

std::vector<CellIndex> traverse_2d(const Eigen::Vector2d& origin, const Eigen::Vector2d& endpoint,
                                   const GridSpec& spec) {
  const std::array<double, 2> o{(origin.x() - spec.x_min) / spec.cell_xy,
                                (origin.y() - spec.y_min) / spec.cell_xy};
  const std::array<double, 2> e{(endpoint.x() - spec.x_min) / spec.cell_xy,
                                (endpoint.y() - spec.y_min) / spec.cell_xy};
  auto raw = traverse<2>(o, e, {spec.width(), spec.height()});

  std::vector<CellIndex> cells;
  cells.reserve(raw.size());
  for (const auto& c : raw) cells.push_back({c[0], c[1]});

  // The endpoint's own cell carries the hit, not a transmission.
  if (!cells.empty()) {
    if (auto end_cell = cell_of_2d(endpoint.x(), endpoint.y(), spec);
        end_cell && cells.back() == *end_cell) {
      cells.pop_back();
    }
  }
  return cells;
}

std::vector<VoxelIndex> traverse_3d(const Vec3& origin, const Vec3& endpoint, const GridSpec& spec) {
  const std::array<double, 3> o{(origin.x() - spec.x_min) / spec.cell_xy,
                                (origin.y() - spec.y_min) / spec.cell_xy,
                                (origin.z() - spec.z_min) / spec.cell_z};
  const std::array<double, 3> e{(endpoint.x() - spec.x_min) / spec.cell_xy,
                                (endpoint.y() - spec.y_min) / spec.cell_xy,
                                (endpoint.z() - spec.z_min) / spec.cell_z};
  auto raw = traverse<3>(o, e, {spec.width(), spec.height(), spec.depth()});

  std::vector<VoxelIndex> voxels;
  voxels.reserve(raw.size());
  for (const auto& c : raw) voxels.push_back({c[0], c[1], c[2]});
  return voxels;
}

ObservabilityMap observability_map(const PointCloud& cloud, const Vec3& sensor_origin,
                                   const GridSpec& spec) {
  ObservabilityMap map(spec.width(), spec.height());
  const Eigen::Vector2d origin(sensor_origin.x(), sensor_origin.y());
  for (const Point& p : cloud.points) {
    const Eigen::Vector2d endpoint(p.x, p.y);
    if (endpoint == origin) {
      ++map.degenerate_rays;
      continue;
    }
    for (const CellIndex& c : traverse_2d(origin, endpoint, spec)) {
      ++map.transmissions[map.index(c.i, c.j)];
    }
    if (auto end_cell = cell_of_2d(p.x, p.y, spec)) {
      ++map.hits[map.index(end_cell->i, end_cell->j)];
    }
  }
  return map;
}

VoxelOccupancy voxel_occupancy(const PointCloud& cloud, const Vec3& sensor_origin,
                               const GridSpec& spec) {
  VoxelOccupancy occ;
  occ.width = spec.width();
  occ.height = spec.height();
  occ.depth = spec.depth();
  const std::size_t n = std::size_t(occ.width) * occ.height * occ.depth;
  std::vector<std::uint32_t> hits(n, 0);
  std::vector<std::uint32_t> misses(n, 0);

  for (const Point& p : cloud.points) {
    const Vec3 endpoint = p.xyz();
    if (endpoint == sensor_origin) continue;  // degenerate ray carries no evidence
    auto voxels = traverse_3d(sensor_origin, endpoint, spec);
    if (voxels.empty()) continue;
    auto end_voxel = voxel_of(endpoint, spec);
    std::size_t misses_until = voxels.size();
    if (end_voxel && voxels.back() == *end_voxel) {
      ++hits[occ.index(end_voxel->i, end_voxel->j, end_voxel->k)];
      misses_until -= 1;
    }
    for (std::size_t v = 0; v < misses_until; ++v) {
      ++misses[occ.index(voxels[v].i, voxels[v].j, voxels[v].k)];
    }
  }

  occ.probability.assign(n, 0.5f);
  for (std::size_t v = 0; v < n; ++v) {
    const std::uint32_t h = hits[v];
    const std::uint32_t m = misses[v];
    if (h + m > 0) occ.probability[v] = float(double(h) / double(h + m));
  }
  return occ;
}

ObservedMask observed_mask(const ObservabilityMap& map) {
  ObservedMask mask;
  mask.width = map.width;
  mask.height = map.height;
  mask.observed.resize(map.transmissions.size());
  for (std::size_t v = 0; v < map.transmissions.size(); ++v) {
    mask.observed[v] = (map.transmissions[v] >= 1 || map.hits[v] >= 1) ? 1 : 0;
  }
  return mask;
}

}  // namespace pillarseg
