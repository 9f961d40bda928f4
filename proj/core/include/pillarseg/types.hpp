#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

namespace pillarseg {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

inline constexpr int kNumClasses = 12;
inline constexpr std::uint8_t kUnlabeled = 255;

// Merged class ids, ordered as reported (vehicle first, terrain last).
enum ClassId : std::uint8_t {
  kVehicle = 0,
  kPerson = 1,
  kTwoWheel = 2,
  kRider = 3,
  kRoad = 4,
  kSidewalk = 5,
  kOtherGround = 6,
  kBuilding = 7,
  kObject = 8,
  kVegetation = 9,
  kTrunk = 10,
  kTerrain = 11,
};

struct Point {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;
  double r = 0.0;  // reflectance, kept as stored (no clamping)

  Vec3 xyz() const { return Vec3(x, y, z); }
};

struct PointCloud {
  std::vector<Point> points;
  int frame_id = -1;

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
};

// Per-point merged semantic labels paired with a PointCloud.
// raw_words retains the original 32-bit label words so a parsed label file
// can be re-serialized byte-exactly.
struct LabelSet {
  std::vector<std::uint8_t> class_id;  // {0..11} or kUnlabeled
  std::vector<std::uint8_t> moving;    // 0/1
  std::vector<std::uint32_t> raw_words;

  std::size_t size() const { return class_id.size(); }
};

// Rigid transform, rotation orthonormal with det +1.
struct Pose {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  Pose inverse() const {
    Pose inv;
    inv.rotation = rotation.transpose();
    inv.translation = -(inv.rotation * translation);
    return inv;
  }

  Pose operator*(const Pose& other) const {
    Pose out;
    out.rotation = rotation * other.rotation;
    out.translation = rotation * other.translation + translation;
    return out;
  }

  Vec3 apply(const Vec3& p) const { return rotation * p + translation; }
};

// (W,H) class-id grid; kUnlabeled marks cells with no class.
struct SemanticGrid {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> class_id;  // index = j * width + i

  SemanticGrid() = default;
  SemanticGrid(int w, int h) : width(w), height(h), class_id(static_cast<std::size_t>(w) * h, kUnlabeled) {}

  std::uint8_t& at(int i, int j) { return class_id[static_cast<std::size_t>(j) * width + i]; }
  std::uint8_t at(int i, int j) const { return class_id[static_cast<std::size_t>(j) * width + i]; }

  bool operator==(const SemanticGrid& other) const = default;
};

}  // namespace pillarseg
