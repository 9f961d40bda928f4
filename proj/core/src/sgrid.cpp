#include "pillarseg/sgrid.hpp"

#include <bit>
#include <cstring>

#include "pillarseg/errors.hpp"

namespace pillarseg {

namespace {

constexpr char kMagic[4] = {'S', 'G', 'R', 'D'};
constexpr std::size_t kHeaderSize = 8 + 3 * 4;

void put_u32(Bytes& out, std::uint32_t v) {
  out.push_back(std::uint8_t(v));
  out.push_back(std::uint8_t(v >> 8));
  out.push_back(std::uint8_t(v >> 16));
  out.push_back(std::uint8_t(v >> 24));
}

std::uint32_t get_u32(const Bytes& in, std::size_t offset) {
  return std::uint32_t(in[offset]) | std::uint32_t(in[offset + 1]) << 8 |
         std::uint32_t(in[offset + 2]) << 16 | std::uint32_t(in[offset + 3]) << 24;
}

void put_f32(std::uint8_t* dst, float v) {
  const std::uint32_t bits = std::bit_cast<std::uint32_t>(v);
  dst[0] = std::uint8_t(bits);
  dst[1] = std::uint8_t(bits >> 8);
  dst[2] = std::uint8_t(bits >> 16);
  dst[3] = std::uint8_t(bits >> 24);
}

float get_f32(const std::uint8_t* src) {
  const std::uint32_t bits = std::uint32_t(src[0]) | std::uint32_t(src[1]) << 8 |
                             std::uint32_t(src[2]) << 16 | std::uint32_t(src[3]) << 24;
  return std::bit_cast<float>(bits);
}

}  // namespace

std::size_t SgridFile::element_size() const {
  switch (dtype) {
    case SgridType::kClassId:
      return 1;
    case SgridType::kReal:
    case SgridType::kCount:
      return 4;
  }
  throw FormatError("sgrid: unsupported dtype");
}

Bytes serialize_sgrid(const SgridFile& file) {
  const std::size_t expected =
      std::size_t(file.width) * file.height * file.depth * file.element_size();
  if (file.payload.size() != expected) {
    throw FormatError("sgrid: payload length disagrees with header dimensions");
  }
  Bytes out;
  out.reserve(kHeaderSize + file.payload.size());
  out.insert(out.end(), kMagic, kMagic + 4);
  out.push_back(file.version);
  out.push_back(std::uint8_t(file.dtype));
  out.push_back(file.flags);
  out.push_back(0);  // reserved
  put_u32(out, file.width);
  put_u32(out, file.height);
  put_u32(out, file.depth);
  out.insert(out.end(), file.payload.begin(), file.payload.end());
  return out;
}

SgridFile parse_sgrid(const Bytes& bytes) {
  if (bytes.size() < kHeaderSize) throw FormatError("sgrid: truncated header");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw FormatError("sgrid: bad magic");
  SgridFile file;
  file.version = bytes[4];
  if (file.version != 1) throw FormatError("sgrid: unsupported version");
  const std::uint8_t dtype = bytes[5];
  if (dtype > 2) throw FormatError("sgrid: unsupported dtype");
  file.dtype = SgridType(dtype);
  file.flags = bytes[6];
  file.width = get_u32(bytes, 8);
  file.height = get_u32(bytes, 12);
  file.depth = get_u32(bytes, 16);
  const std::size_t expected =
      std::size_t(file.width) * file.height * file.depth * file.element_size();
  if (bytes.size() - kHeaderSize != expected) {
    throw FormatError("sgrid: payload length disagrees with header dimensions");
  }
  file.payload.assign(bytes.begin() + kHeaderSize, bytes.end());
  return file;
}

SgridFile sgrid_from_semantic(const SemanticGrid& grid) {
  SgridFile file;
  file.dtype = SgridType::kClassId;
  file.width = std::uint32_t(grid.width);
  file.height = std::uint32_t(grid.height);
  file.depth = 1;
  file.payload.assign(grid.class_id.begin(), grid.class_id.end());
  return file;
}

SemanticGrid semantic_from_sgrid(const SgridFile& file) {
  if (file.dtype != SgridType::kClassId || file.depth != 1) {
    throw FormatError("sgrid: expected a single-plane class-id grid");
  }
  SemanticGrid grid(int(file.width), int(file.height));
  grid.class_id.assign(file.payload.begin(), file.payload.end());
  return grid;
}

SgridFile sgrid_from_observability(const ObservabilityMap& map) {
  SgridFile file;
  file.dtype = SgridType::kCount;
  file.width = std::uint32_t(map.width);
  file.height = std::uint32_t(map.height);
  file.depth = 2;
  const std::size_t plane = map.transmissions.size();
  file.payload.resize(2 * plane * 4);
  for (std::size_t v = 0; v < plane; ++v) {
    const std::uint32_t t = map.transmissions[v];
    const std::uint32_t h = map.hits[v];
    file.payload[v * 4] = std::uint8_t(t);
    file.payload[v * 4 + 1] = std::uint8_t(t >> 8);
    file.payload[v * 4 + 2] = std::uint8_t(t >> 16);
    file.payload[v * 4 + 3] = std::uint8_t(t >> 24);
    const std::size_t off = (plane + v) * 4;
    file.payload[off] = std::uint8_t(h);
    file.payload[off + 1] = std::uint8_t(h >> 8);
    file.payload[off + 2] = std::uint8_t(h >> 16);
    file.payload[off + 3] = std::uint8_t(h >> 24);
  }
  return file;
}

ObservabilityMap observability_from_sgrid(const SgridFile& file) {
  if (file.dtype != SgridType::kCount || file.depth != 2) {
    throw FormatError("sgrid: expected the two-plane transmissions/hits layout");
  }
  ObservabilityMap map(int(file.width), int(file.height));
  const std::size_t plane = map.transmissions.size();
  for (std::size_t v = 0; v < plane; ++v) {
    map.transmissions[v] = get_u32(file.payload, v * 4);
    map.hits[v] = get_u32(file.payload, (plane + v) * 4);
  }
  return map;
}

SgridFile sgrid_from_voxels(const VoxelOccupancy& occupancy) {
  SgridFile file;
  file.dtype = SgridType::kReal;
  file.width = std::uint32_t(occupancy.width);
  file.height = std::uint32_t(occupancy.height);
  file.depth = std::uint32_t(occupancy.depth);
  file.payload.resize(occupancy.probability.size() * 4);
  for (std::size_t v = 0; v < occupancy.probability.size(); ++v) {
    put_f32(file.payload.data() + v * 4, occupancy.probability[v]);
  }
  return file;
}

VoxelOccupancy voxels_from_sgrid(const SgridFile& file) {
  if (file.dtype != SgridType::kReal) throw FormatError("sgrid: expected f32 payload");
  VoxelOccupancy occupancy;
  occupancy.width = int(file.width);
  occupancy.height = int(file.height);
  occupancy.depth = int(file.depth);
  occupancy.probability.resize(std::size_t(file.width) * file.height * file.depth);
  for (std::size_t v = 0; v < occupancy.probability.size(); ++v) {
    occupancy.probability[v] = get_f32(file.payload.data() + v * 4);
  }
  return occupancy;
}

SgridFile sgrid_from_reals(int width, int height, int depth, const std::vector<float>& values) {
  if (values.size() != std::size_t(width) * height * depth) {
    throw FormatError("sgrid: value count disagrees with dimensions");
  }
  SgridFile file;
  file.dtype = SgridType::kReal;
  file.width = std::uint32_t(width);
  file.height = std::uint32_t(height);
  file.depth = std::uint32_t(depth);
  file.payload.resize(values.size() * 4);
  for (std::size_t v = 0; v < values.size(); ++v) {
    put_f32(file.payload.data() + v * 4, values[v]);
  }
  return file;
}

std::vector<float> reals_from_sgrid(const SgridFile& file) {
  if (file.dtype != SgridType::kReal) throw FormatError("sgrid: expected f32 payload");
  std::vector<float> values(file.payload.size() / 4);
  for (std::size_t v = 0; v < values.size(); ++v) {
    values[v] = get_f32(file.payload.data() + v * 4);
  }
  return values;
}

}  // namespace pillarseg
