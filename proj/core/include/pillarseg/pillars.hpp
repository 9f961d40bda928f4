#pragma once

#include <cstdint>
#include <vector>

#include "pillarseg/autodiff.hpp"
#include "pillarseg/grid.hpp"
#include "pillarseg/rng.hpp"
#include "pillarseg/types.hpp"

namespace pillarseg {

// Point features per retained point: x, y, z, r, offsets from the pillar's
// arithmetic mean (x, y, z) and offsets from the cell center (x, y) plus the
// crop's z midpoint.
inline constexpr std::size_t kPointFeatureDim = 10;

// Batchnorm defaults shared by every normalized layer in the network.
inline constexpr double kBatchNormMomentum = 0.1;
inline constexpr double kBatchNormEps = 1e-5;

struct PillarTensor {
  ad::Tensor data;                         // (P, N, 10); padding rows all-zero
  std::vector<CellIndex> coords;           // P entries; (-1, -1) beyond valid_pillars
  std::vector<std::int32_t> valid_points;  // per pillar; 0 for padding pillars
  std::size_t valid_pillars = 0;
  std::size_t dropped_pillars = 0;  // pillar count beyond capacity P
  std::size_t dropped_points = 0;  // per-pillar points beyond capacity N

  // Row mask of length P*N marking rows backed by a real point.
  std::vector<std::uint8_t> point_mask() const;
};

// Groups the cropped cloud into pillars ordered lexicographically by (i, j)
// and emits the fixed-size tensor. Overflow beyond P pillars (or N points in
// a pillar) is resolved by uniform sampling without replacement; pillars are
// sampled first, then points pillar by pillar in output order, so a seed
// fixes the result. The per-pillar mean is accumulated in sorted value order
// to make it independent of point order. Throws NotCropped when any point
// lies outside the crop box.
PillarTensor build_pillars(const PointCloud& cloud, const GridSpec& spec, std::size_t max_pillars,
                           std::size_t max_points, Rng& rng);

struct PointNetParams {
  ad::Tensor weight;  // (10, C)
  ad::Tensor bias;    // (C)
  ad::Tensor gamma;
  ad::Tensor beta;
  ad::Tensor running_mean;
  ad::Tensor running_var;
};

// Per point ReLU(BatchNorm(linear(row))), then a masked max over the N axis.
// Padding rows never win the max; pillars with no valid point output zeros.
ad::Tensor pointnet_pillar_features(const PillarTensor& pillars, PointNetParams& params,
                                    ad::Mode mode, ad::Tape* tape);

// Places per-pillar feature rows at their cells of a zero (W, H, C) canvas.
ad::Tensor scatter(const ad::Tensor& features, const std::vector<CellIndex>& coords,
                   const GridSpec& spec, ad::Tape* tape);

}  // namespace pillarseg
