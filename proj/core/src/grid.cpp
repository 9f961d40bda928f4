#include "pillarseg/grid.hpp"

#include <cmath>
#include <string>

#include "pillarseg/errors.hpp"
#include "pillarseg/types.hpp"

namespace pillarseg {

namespace {

int axis_cells(double lo, double hi, double cell) {
  return static_cast<int>(std::llround((hi - lo) / cell));
}

void check_axis(const char* name, double lo, double hi, double cell) {
  if (!(lo < hi)) throw InvalidGridSpec(std::string(name) + " range not increasing");
  if (!(cell > 0.0)) throw InvalidGridSpec(std::string(name) + " cell size not positive");
  const double n = (hi - lo) / cell;
  if (std::abs(n - std::llround(n)) > 1e-9)
    throw InvalidGridSpec(std::string(name) + " extent not an integral number of cells");
}

}  // namespace

int GridSpec::width() const { return axis_cells(x_min, x_max, cell_xy); }
int GridSpec::height() const { return axis_cells(y_min, y_max, cell_xy); }
int GridSpec::depth() const { return axis_cells(z_min, z_max, cell_z); }

void GridSpec::validate() const {
  check_axis("x", x_min, x_max, cell_xy);
  check_axis("y", y_min, y_max, cell_xy);
  check_axis("z", z_min, z_max, cell_z);
}

GridSpec default_spec() { return GridSpec{}; }

int cell_index(double x, double lo, double cell) {
  const double q = (x - lo) / cell;
  double f = std::floor(q);
  if (q - f > 1.0 - 1e-9) f += 1.0;
  return static_cast<int>(f);
}

std::optional<CellIndex> cell_of(const Vec3& p, const GridSpec& spec) {
  auto v = voxel_of(p, spec);
  if (!v) return std::nullopt;
  return CellIndex{v->i, v->j};
}

std::optional<VoxelIndex> voxel_of(const Vec3& p, const GridSpec& spec) {
  const int i = cell_index(p.x(), spec.x_min, spec.cell_xy);
  const int j = cell_index(p.y(), spec.y_min, spec.cell_xy);
  const int k = cell_index(p.z(), spec.z_min, spec.cell_z);
  if (i < 0 || i >= spec.width() || j < 0 || j >= spec.height() || k < 0 || k >= spec.depth())
    return std::nullopt;
  return VoxelIndex{i, j, k};
}

std::optional<CellIndex> cell_of_2d(double x, double y, const GridSpec& spec) {
  const int i = cell_index(x, spec.x_min, spec.cell_xy);
  const int j = cell_index(y, spec.y_min, spec.cell_xy);
  if (i < 0 || i >= spec.width() || j < 0 || j >= spec.height()) return std::nullopt;
  return CellIndex{i, j};
}

Eigen::Vector2d center_of(int i, int j, const GridSpec& spec) {
  if (i < 0 || i >= spec.width() || j < 0 || j >= spec.height())
    throw IndexOutOfGrid("cell (" + std::to_string(i) + ", " + std::to_string(j) + ")");
  return {spec.x_min + (i + 0.5) * spec.cell_xy, spec.y_min + (j + 0.5) * spec.cell_xy};
}

double z_mid(const GridSpec& spec) { return 0.5 * (spec.z_min + spec.z_max); }

CropResult crop_cloud(const PointCloud& cloud, const LabelSet* labels, const GridSpec& spec) {
  if (labels && labels->size() != cloud.size())
    throw PairMismatch("labels (" + std::to_string(labels->size()) + ") vs points (" +
                       std::to_string(cloud.size()) + ")");
  CropResult out;
  out.cloud.frame_id = cloud.frame_id;
  if (labels) out.labels.emplace();
  for (std::size_t n = 0; n < cloud.size(); ++n) {
    const Point& p = cloud.points[n];
    if (!voxel_of(p.xyz(), spec)) continue;
    out.cloud.points.push_back(p);
    if (labels) {
      out.labels->class_id.push_back(labels->class_id[n]);
      out.labels->moving.push_back(labels->moving[n]);
      if (n < labels->raw_words.size()) out.labels->raw_words.push_back(labels->raw_words[n]);
    }
  }
  return out;
}

}  // namespace pillarseg
