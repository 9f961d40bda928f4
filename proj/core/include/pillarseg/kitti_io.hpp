#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "pillarseg/class_table.hpp"
#include "pillarseg/types.hpp"

namespace pillarseg {

using Bytes = std::vector<std::uint8_t>;

// Scan container: consecutive little-endian float32 quadruples (x, y, z, r),
// no header. Throws TruncatedScan / NonFiniteValue.
PointCloud parse_scan(const Bytes& bytes);
Bytes serialize_scan(const PointCloud& cloud);

// Label container: little-endian uint32 words; lower 16 bits carry the raw
// semantic id, upper 16 the instance id (ignored). Throws TruncatedLabels /
// UnknownRawId.
LabelSet parse_labels(const Bytes& bytes, const ClassTable& table);
Bytes serialize_labels(const LabelSet& labels);

// Builds the raw words for synthesized labels (instance bits zero).
std::vector<std::uint32_t> raw_words_for(const std::vector<std::uint8_t>& class_id,
                                         const std::vector<std::uint8_t>& moving);

// Poses file: 12 whitespace-separated decimals per line, the top 3 rows of a
// camera-frame homogeneous matrix. The calib text must contain a "Tr:" line
// (LiDAR -> camera). Returned poses map LiDAR coordinates to world:
// T_w_velo = T_w_cam * Tr. Rotations are re-orthonormalized when drift
// exceeds 1e-6. Throws MalformedPoseLine / MissingCalibTr.
std::vector<Pose> parse_poses(const std::string& pose_text, const std::string& calib_text);

std::string serialize_poses(const std::vector<Pose>& poses);

// p' = R p + t per point; reflectance unchanged.
PointCloud transform_cloud(const PointCloud& cloud, const Pose& pose);

// File helpers. Throw IoFailure.
Bytes read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const Bytes& bytes);
void write_file_atomic(const std::filesystem::path& path, const Bytes& bytes);
std::string read_text_file(const std::filesystem::path& path);

// KITTI odometry sequence directory: velodyne/*.bin, labels/*.label,
// poses.txt, calib.txt.
struct SequencePaths {
  std::vector<std::filesystem::path> scans;   // sorted
  std::vector<std::filesystem::path> labels;  // sorted, may be empty
  std::filesystem::path poses;
  std::filesystem::path calib;
};
SequencePaths discover_sequence(const std::filesystem::path& dir, bool require_labels,
                                bool require_poses);

}  // namespace pillarseg
