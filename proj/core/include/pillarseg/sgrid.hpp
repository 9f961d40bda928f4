#pragma once

#include <cstdint>
#include <vector>

#include "pillarseg/kitti_io.hpp"
#include "pillarseg/raycast.hpp"
#include "pillarseg/types.hpp"

namespace pillarseg {

// Container for every grid artifact written to disk: class-id grids, count
// planes and probability volumes. Header: magic "SGRD", version, dtype,
// flags, reserved, then W, H, Z as u32 little-endian. Payload is linearized
// as index = (k*H + j)*W + i with i fastest.
enum class SgridType : std::uint8_t {
  kClassId = 0,  // u8 per cell
  kReal = 1,     // f32 little-endian per cell
  kCount = 2,    // u32 little-endian per cell
};

struct SgridFile {
  std::uint8_t version = 1;
  SgridType dtype = SgridType::kClassId;
  std::uint8_t flags = 0;
  std::uint32_t width = 0;
  std::uint32_t height = 0;
  std::uint32_t depth = 1;
  std::vector<std::uint8_t> payload;  // raw little-endian elements

  std::size_t element_size() const;

  bool operator==(const SgridFile&) const = default;
};

Bytes serialize_sgrid(const SgridFile& file);

// Throws FormatError on bad magic, unsupported version/dtype, or a payload
// length that disagrees with the header.
SgridFile parse_sgrid(const Bytes& bytes);

// --- conversions between in-memory grids and the container ---

SgridFile sgrid_from_semantic(const SemanticGrid& grid);
SemanticGrid semantic_from_sgrid(const SgridFile& file);

// Two u32 planes: k=0 transmissions, k=1 hits.
SgridFile sgrid_from_observability(const ObservabilityMap& map);
ObservabilityMap observability_from_sgrid(const SgridFile& file);

SgridFile sgrid_from_voxels(const VoxelOccupancy& occupancy);
VoxelOccupancy voxels_from_sgrid(const SgridFile& file);

// Generic f32 volume, e.g. per-class probability planes (Z = K).
SgridFile sgrid_from_reals(int width, int height, int depth, const std::vector<float>& values);
std::vector<float> reals_from_sgrid(const SgridFile& file);

}  // namespace pillarseg
