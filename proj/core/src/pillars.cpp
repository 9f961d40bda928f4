#include "pillarseg/pillars.hpp"

#include <algorithm>
#include <map>

#include "pillarseg/errors.hpp"

namespace pillarseg {

namespace {

// Sum in ascending value order: permutation-invariant at the bit level, so
// reordering the input cloud cannot perturb downstream features.
double sorted_sum(std::vector<double>& values) {
  std::sort(values.begin(), values.end());
  double acc = 0.0;
  for (double v : values) acc += v;
  return acc;
}

}  // namespace

std::vector<std::uint8_t> PillarTensor::point_mask() const {
  const std::size_t pillars = coords.size();
  const std::size_t points = pillars == 0 ? 0 : data.dim(1);
  std::vector<std::uint8_t> mask(pillars * points, 0);
  for (std::size_t p = 0; p < pillars; ++p) {
    for (std::int32_t n = 0; n < valid_points[p]; ++n) mask[p * points + n] = 1;
  }
  return mask;
}

PillarTensor build_pillars(const PointCloud& cloud, const GridSpec& spec, std::size_t max_pillars,
                           std::size_t max_points, Rng& rng) {
  // std::map keys iterate sorted, which is exactly the lexicographic (i, j)
  // pillar order the output promises.
  std::map<std::pair<int, int>, std::vector<std::size_t>> groups;
  for (std::size_t idx = 0; idx < cloud.points.size(); ++idx) {
    const Point& p = cloud.points[idx];
    auto cell = cell_of(p.xyz(), spec);
    if (!cell) throw NotCropped("build_pillars: point outside the crop box");
    groups[{cell->i, cell->j}].push_back(idx);
  }

  PillarTensor out;
  out.data = ad::Tensor::zeros({max_pillars, max_points, kPointFeatureDim});
  out.coords.assign(max_pillars, CellIndex{-1, -1});
  out.valid_points.assign(max_pillars, 0);

  std::vector<const std::pair<const std::pair<int, int>, std::vector<std::size_t>>*> kept;
  kept.reserve(std::min(groups.size(), max_pillars));
  if (groups.size() > max_pillars) {
    std::vector<const std::pair<const std::pair<int, int>, std::vector<std::size_t>>*> all;
    all.reserve(groups.size());
    for (const auto& g : groups) all.push_back(&g);
    for (std::size_t idx : sample_without_replacement(rng, groups.size(), max_pillars)) {
      kept.push_back(all[idx]);
    }
    out.dropped_pillars = groups.size() - max_pillars;
  } else {
    for (const auto& g : groups) kept.push_back(&g);
  }
  out.valid_pillars = kept.size();

  const double zm = z_mid(spec);
  for (std::size_t pi = 0; pi < kept.size(); ++pi) {
    const auto& [cell_key, members] = *kept[pi];
    std::vector<std::size_t> retained;
    if (members.size() > max_points) {
      for (std::size_t pos : sample_without_replacement(rng, members.size(), max_points)) {
        retained.push_back(members[pos]);
      }
      out.dropped_points += members.size() - max_points;
    } else {
      retained = members;
    }

    std::vector<double> xs, ys, zs;
    xs.reserve(retained.size());
    ys.reserve(retained.size());
    zs.reserve(retained.size());
    for (std::size_t idx : retained) {
      xs.push_back(cloud.points[idx].x);
      ys.push_back(cloud.points[idx].y);
      zs.push_back(cloud.points[idx].z);
    }
    const double inv_n = 1.0 / double(retained.size());
    const double mean_x = sorted_sum(xs) * inv_n;
    const double mean_y = sorted_sum(ys) * inv_n;
    const double mean_z = sorted_sum(zs) * inv_n;
    const Eigen::Vector2d center = center_of(cell_key.first, cell_key.second, spec);

    for (std::size_t n = 0; n < retained.size(); ++n) {
      const Point& p = cloud.points[retained[n]];
      double* row = out.data.value().data() + (pi * max_points + n) * kPointFeatureDim;
      row[0] = p.x;
      row[1] = p.y;
      row[2] = p.z;
      row[3] = p.r;
      row[4] = p.x - mean_x;
      row[5] = p.y - mean_y;
      row[6] = p.z - mean_z;
      row[7] = p.x - center.x();
      row[8] = p.y - center.y();
      row[9] = p.z - zm;
    }
    out.coords[pi] = CellIndex{cell_key.first, cell_key.second};
    out.valid_points[pi] = std::int32_t(retained.size());
  }
  return out;
}

ad::Tensor pointnet_pillar_features(const PillarTensor& pillars, PointNetParams& params,
                                    ad::Mode mode, ad::Tape* tape) {
  const std::vector<std::uint8_t> mask = pillars.point_mask();
  ad::Tensor activated = ad::linear(pillars.data, params.weight, params.bias, tape);
  activated = ad::batchnorm(activated, params.gamma, params.beta, params.running_mean,
                            params.running_var, &mask, mode, kBatchNormMomentum, kBatchNormEps,
                            tape);
  activated = ad::relu(activated, tape);
  return ad::masked_max(activated, mask, tape);
}

ad::Tensor scatter(const ad::Tensor& features, const std::vector<CellIndex>& coords,
                   const GridSpec& spec, ad::Tape* tape) {
  return ad::scatter_to_grid(features, coords, spec.width(), spec.height(), tape);
}

}  // namespace pillarseg
