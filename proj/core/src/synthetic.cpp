#include "pillarseg/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <iterator>
#include <limits>
#include <numbers>
#include <optional>

#include "pillarseg/errors.hpp"
#include "pillarseg/kitti_io.hpp"

namespace pillarseg {

namespace {

// Entry distance along o + t*d, or nothing. A tiny positive lower bound
// skips self-intersections at the sensor.
constexpr double kMinHit = 1e-9;

std::optional<double> hit_plane(const Primitive& prim, const Vec3& o, const Vec3& d) {
  if (std::abs(d.z()) < 1e-12) return std::nullopt;
  const double t = (prim.center.z() - o.z()) / d.z();
  if (t <= kMinHit) return std::nullopt;
  const Vec3 p = o + t * d;
  if (std::abs(p.x() - prim.center.x()) <= prim.size.x() / 2.0 &&
      std::abs(p.y() - prim.center.y()) <= prim.size.y() / 2.0) {
    return t;
  }
  return std::nullopt;
}

std::optional<double> hit_box(const Primitive& prim, const Vec3& o, const Vec3& d) {
  double t_enter = -std::numeric_limits<double>::infinity();
  double t_exit = std::numeric_limits<double>::infinity();
  for (int a = 0; a < 3; ++a) {
    const double lo = prim.center[a] - prim.size[a] / 2.0;
    const double hi = prim.center[a] + prim.size[a] / 2.0;
    if (std::abs(d[a]) < 1e-12) {
      if (o[a] < lo || o[a] > hi) return std::nullopt;
      continue;
    }
    double ta = (lo - o[a]) / d[a];
    double tb = (hi - o[a]) / d[a];
    if (ta > tb) std::swap(ta, tb);
    t_enter = std::max(t_enter, ta);
    t_exit = std::min(t_exit, tb);
  }
  if (t_enter > t_exit || t_enter <= kMinHit) return std::nullopt;  // miss, or origin inside
  return t_enter;
}

std::optional<double> hit_primitive(const Primitive& prim, const Vec3& o, const Vec3& d) {
  return prim.shape == Primitive::Shape::kPlane ? hit_plane(prim, o, d) : hit_box(prim, o, d);
}

// Snap to what a scan file can hold, so rendered data and its on-disk round
// trip are the same doubles.
double f32_exact(double v) { return double(float(v)); }

double class_reflectance(std::uint8_t class_id) { return (double(class_id) + 1.0) / 16.0; }

}  // namespace

bool point_on_primitive(const Primitive& primitive, const Vec3& world_point, double tol) {
  const Vec3 rel = world_point - primitive.center;
  if (primitive.shape == Primitive::Shape::kPlane) {
    return std::abs(rel.z()) <= tol && std::abs(rel.x()) <= primitive.size.x() / 2.0 + tol &&
           std::abs(rel.y()) <= primitive.size.y() / 2.0 + tol;
  }
  // Signed distance to the box surface.
  Vec3 q;
  for (int a = 0; a < 3; ++a) q[a] = std::abs(rel[a]) - primitive.size[a] / 2.0;
  const double outside = Vec3(std::max(q.x(), 0.0), std::max(q.y(), 0.0), std::max(q.z(), 0.0)).norm();
  const double inside = std::min(std::max({q.x(), q.y(), q.z()}), 0.0);
  return std::abs(outside + inside) <= tol;
}

RenderedScan render_scan(const SceneSpec& scene, const Pose& sensor_pose) {
  RenderedScan out;
  const Pose to_sensor = sensor_pose.inverse();
  const int rows = std::max(1, scene.elevation_count);
  for (int e = 0; e < rows; ++e) {
    const double span = rows > 1 ? double(e) / double(rows - 1) : 0.0;
    const double el = scene.elevation_min + (scene.elevation_max - scene.elevation_min) * span;
    for (int a = 0; a < scene.azimuth_count; ++a) {
      const double az = 2.0 * std::numbers::pi * double(a) / double(scene.azimuth_count);
      const Vec3 dir_sensor(std::cos(az) * std::cos(el), std::sin(az) * std::cos(el), std::sin(el));
      const Vec3 dir = sensor_pose.rotation * dir_sensor;

      double best_t = scene.max_range;
      const Primitive* best = nullptr;
      for (const Primitive& prim : scene.primitives) {
        if (auto t = hit_primitive(prim, sensor_pose.translation, dir); t && *t < best_t) {
          best_t = *t;
          best = &prim;
        }
      }
      if (!best) continue;

      const Vec3 p = to_sensor.apply(sensor_pose.translation + best_t * dir);
      out.cloud.points.push_back(Point{f32_exact(p.x()), f32_exact(p.y()), f32_exact(p.z()),
                                       class_reflectance(best->class_id)});
      out.labels.class_id.push_back(best->class_id);
      out.labels.moving.push_back(best->moving ? 1 : 0);
      out.labels.raw_words.push_back(representative_raw_id(best->class_id, best->moving));
    }
  }
  return out;
}

SequenceData render_sequence(const SceneSpec& scene, const std::vector<Pose>& trajectory) {
  if (trajectory.empty()) throw EmptyDataset("render_sequence: empty trajectory");
  SequenceData data;
  for (std::size_t idx = 0; idx < trajectory.size(); ++idx) {
    RenderedScan scan = render_scan(scene, trajectory[idx]);
    scan.cloud.frame_id = int(idx);
    data.scans.push_back(std::move(scan.cloud));
    data.labels.push_back(std::move(scan.labels));
    data.poses.push_back(trajectory[idx]);
  }
  return data;
}

void write_sequence(const SequenceData& data, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir / "velodyne", ec);
  fs::create_directories(dir / "labels", ec);
  if (ec) throw IoFailure("cannot create sequence directories under " + dir.string());

  char name[16];
  for (std::size_t idx = 0; idx < data.scans.size(); ++idx) {
    std::snprintf(name, sizeof name, "%06zu", idx);
    write_file_atomic(dir / "velodyne" / (std::string(name) + ".bin"),
                      serialize_scan(data.scans[idx]));
    write_file_atomic(dir / "labels" / (std::string(name) + ".label"),
                      serialize_labels(data.labels[idx]));
  }
  const std::string poses = serialize_poses(data.poses);
  write_file_atomic(dir / "poses.txt", Bytes(poses.begin(), poses.end()));
  // Identity Tr keeps the pose file directly in sensor coordinates.
  const std::string calib = "Tr: 1 0 0 0 0 1 0 0 0 0 1 0\n";
  write_file_atomic(dir / "calib.txt", Bytes(calib.begin(), calib.end()));
}

std::vector<Pose> straight_trajectory(std::size_t count, double spacing) {
  std::vector<Pose> poses(count);
  for (std::size_t idx = 0; idx < count; ++idx) {
    poses[idx].translation = Vec3(double(idx) * spacing, 0.0, 0.0);
  }
  return poses;
}

SceneSpec random_scene(std::uint64_t seed, double extent, std::size_t box_count) {
  SceneSpec scene;
  scene.seed = seed;
  scene.extent = extent;

  Primitive ground;
  ground.shape = Primitive::Shape::kPlane;
  ground.class_id = kRoad;
  ground.center = Vec3(0.0, 0.0, -1.7);
  ground.size = Vec3(2.0 * extent + 8.0, 2.0 * extent + 8.0, 0.0);
  scene.primitives.push_back(ground);

  static constexpr std::uint8_t kBoxClasses[] = {kVehicle, kBuilding, kVegetation,
                                                 kPerson,  kObject,   kTrunk};
  Rng rng(seed);
  for (std::size_t b = 0; b < box_count; ++b) {
    Primitive box;
    box.class_id = kBoxClasses[b % std::size(kBoxClasses)];
    for (int attempt = 0; attempt < 64; ++attempt) {
      box.center.x() = uniform_range(rng, -extent, extent);
      box.center.y() = uniform_range(rng, -extent, extent);
      if (box.center.head<2>().norm() > 1.0) break;  // keep the sensor outside every box
    }
    box.size = Vec3(uniform_range(rng, 0.4, 2.0), uniform_range(rng, 0.4, 2.0),
                    uniform_range(rng, 0.5, 1.8));
    box.center.z() = ground.center.z() + box.size.z() / 2.0;
    scene.primitives.push_back(box);
  }
  return scene;
}

SceneSpec toy_scene(int index) {
  SceneSpec scene;
  scene.seed = std::uint64_t(index);
  scene.extent = 3.2;
  scene.azimuth_count = 240;
  scene.elevation_count = 7;
  scene.elevation_min = -0.85;
  scene.elevation_max = -0.05;
  scene.max_range = 50.0;

  Primitive ground;
  ground.shape = Primitive::Shape::kPlane;
  ground.class_id = kRoad;
  ground.center = Vec3(0.0, 0.0, -1.0);
  ground.size = Vec3(9.0, 9.0, 0.0);
  scene.primitives.push_back(ground);

  auto box = [&](std::uint8_t class_id, double x, double y, double sx, double sy, double sz) {
    Primitive prim;
    prim.class_id = class_id;
    prim.center = Vec3(x, y, ground.center.z() + sz / 2.0);
    prim.size = Vec3(sx, sy, sz);
    scene.primitives.push_back(prim);
  };

  switch (index % 4) {
    case 0:
      box(kVehicle, 1.55, 0.45, 1.1, 0.7, 0.6);
      box(kBuilding, 2.45, -0.75, 0.9, 0.9, 1.4);
      box(kVegetation, -1.65, 0.85, 0.8, 0.8, 1.0);
      box(kPerson, -1.15, -0.75, 0.35, 0.35, 1.2);
      break;
    case 1:
      box(kVehicle, -1.75, -0.55, 1.1, 0.7, 0.6);
      box(kBuilding, -2.35, 0.75, 0.9, 0.9, 1.4);
      box(kVegetation, 1.85, -0.85, 0.8, 0.8, 1.0);
      box(kPerson, 1.15, 0.85, 0.35, 0.35, 1.2);
      break;
    case 2:
      box(kVehicle, 0.95, 1.05, 1.0, 0.6, 0.6);
      box(kBuilding, -2.55, -0.65, 1.0, 0.8, 1.4);
      box(kVegetation, 2.35, 0.55, 0.7, 0.7, 1.0);
      box(kPerson, -0.95, 0.95, 0.35, 0.35, 1.2);
      break;
    default:
      box(kVehicle, -1.05, 0.95, 1.0, 0.6, 0.6);
      box(kBuilding, 2.15, 0.85, 1.0, 0.8, 1.4);
      box(kVegetation, -2.25, -0.75, 0.7, 0.7, 1.0);
      box(kPerson, 1.35, -0.85, 0.35, 0.35, 1.2);
      break;
  }
  return scene;
}

}  // namespace pillarseg
