#pragma once

#include <array>
#include <optional>
#include <utility>

#include "pillarseg/types.hpp"

namespace pillarseg {

struct LabelSet;

// Shared top-view / 3D discretization. All modules that rasterize, traverse
// or scatter agree on this spec and on the half-open [min, max) convention
// per axis: a point exactly at max falls outside.
struct GridSpec {
  double x_min = -50.0, x_max = 50.0;
  double y_min = -25.0, y_max = 25.0;
  double z_min = -2.5, z_max = 1.5;
  double cell_xy = 0.1;
  double cell_z = 0.2;

  int width() const;    // cells along x
  int height() const;   // cells along y
  int depth() const;    // voxels along z

  // Throws InvalidGridSpec unless ranges are ordered, cells positive and
  // every extent is an integral number of cells (within 1e-9).
  void validate() const;

  bool operator==(const GridSpec&) const = default;
};

GridSpec default_spec();

// floor((x - lo) / cell) with a snap: values within 1e-9 cells below a
// boundary are treated as being on it, so representable coordinates such as
// 0.0 in a (-50, 50) range land in the intended cell.
int cell_index(double x, double lo, double cell);

struct CellIndex {
  int i = 0;
  int j = 0;
  bool operator==(const CellIndex&) const = default;
  auto operator<=>(const CellIndex&) const = default;
};

struct VoxelIndex {
  int i = 0;
  int j = 0;
  int k = 0;
  bool operator==(const VoxelIndex&) const = default;
  auto operator<=>(const VoxelIndex&) const = default;
};

// Cell under p when p lies inside the 3D crop box; nullopt otherwise.
std::optional<CellIndex> cell_of(const Vec3& p, const GridSpec& spec);

std::optional<VoxelIndex> voxel_of(const Vec3& p, const GridSpec& spec);

// Planar cell test ignoring z, used by the 2D ray-casting stage.
std::optional<CellIndex> cell_of_2d(double x, double y, const GridSpec& spec);

// Center of cell (i, j) in meters. Throws IndexOutOfGrid.
Eigen::Vector2d center_of(int i, int j, const GridSpec& spec);

// Midpoint of the z crop; reference height for pillar-center z offsets.
double z_mid(const GridSpec& spec);

// Keeps exactly the points inside the crop box, preserving order and the
// label pairing. Throws PairMismatch when labels are present with a
// different length.
struct CropResult {
  PointCloud cloud;
  std::optional<LabelSet> labels;
};
CropResult crop_cloud(const PointCloud& cloud, const LabelSet* labels, const GridSpec& spec);

}  // namespace pillarseg
