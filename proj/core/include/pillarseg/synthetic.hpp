#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "pillarseg/rng.hpp"
#include "pillarseg/types.hpp"

namespace pillarseg {

// Analytic scene primitives; every LiDAR return carries the exact class of
// the primitive it lies on, so generated corpora need no label tolerances.
struct Primitive {
  enum class Shape { kPlane, kBox };
  Shape shape = Shape::kBox;
  std::uint8_t class_id = kRoad;
  bool moving = false;
  Vec3 center = Vec3::Zero();
  // kPlane: horizontal rectangle at z = center.z with x/y half-extents
  // size.x/2, size.y/2 (size.z ignored). kBox: axis-aligned, full edge
  // lengths size.
  Vec3 size = Vec3::Zero();
};

struct SceneSpec {
  std::uint64_t seed = 0;
  double extent = 10.0;  // primitives stay within +/- extent in x and y
  std::vector<Primitive> primitives;
  // Regular ray lattice in the sensor frame: azimuth_count full turns of
  // azimuth, elevation_count rows between the two elevation angles.
  int azimuth_count = 180;
  int elevation_count = 8;
  double elevation_min = -0.55;  // radians
  double elevation_max = 0.0;
  double max_range = 120.0;
};

// Signed distance from the closest surface; <= tol accepts the point as
// lying on the primitive (world coordinates).
bool point_on_primitive(const Primitive& primitive, const Vec3& world_point, double tol);

// Casts the scene's ray lattice from the given sensor pose; the first
// primitive hit per ray yields one point in the sensor frame labelled with
// the primitive's class. Reflectance is the per-class constant
// (class_id + 1) / 16. Fully deterministic.
struct RenderedScan {
  PointCloud cloud;  // sensor frame
  LabelSet labels;
};
RenderedScan render_scan(const SceneSpec& scene, const Pose& sensor_pose);

struct SequenceData {
  std::vector<PointCloud> scans;  // sensor frame per pose
  std::vector<LabelSet> labels;
  std::vector<Pose> poses;  // sensor-to-world
};
SequenceData render_sequence(const SceneSpec& scene, const std::vector<Pose>& trajectory);

// Writes velodyne/%06d.bin, labels/%06d.label, poses.txt and calib.txt (with
// an identity Tr line) under dir, in the exact on-disk dataset formats.
void write_sequence(const SequenceData& data, const std::filesystem::path& dir);

// Poses spaced along +x at z = 0, identity orientation.
std::vector<Pose> straight_trajectory(std::size_t count, double spacing);

// Ground plane plus a handful of class-varied boxes, laid out from the
// seed's random stream within the given extent.
SceneSpec random_scene(std::uint64_t seed, double extent, std::size_t box_count);

// Fixed hand-sized scenes (index 0..3) for overfit-style experiments on a
// few-meter grid: road ground plane plus vehicle / building / vegetation /
// person boxes in per-index arrangements.
SceneSpec toy_scene(int index);

}  // namespace pillarseg
