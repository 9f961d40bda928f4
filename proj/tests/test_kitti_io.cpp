#include "pillarseg/kitti_io.hpp"

#include <cmath>
#include <cstring>
#include <filesystem>
#include <numbers>

#include "doctest.h"
#include "pillarseg/errors.hpp"
#include "pillarseg/rng.hpp"

using namespace pillarseg;

namespace {

Bytes f32le(std::initializer_list<float> values) {
  Bytes out;
  for (float v : values) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    for (int b = 0; b < 4; ++b) out.push_back(std::uint8_t(bits >> (8 * b)));
  }
  return out;
}

Bytes u32le(std::initializer_list<std::uint32_t> values) {
  Bytes out;
  for (std::uint32_t v : values)
    for (int b = 0; b < 4; ++b) out.push_back(std::uint8_t(v >> (8 * b)));
  return out;
}

}  // namespace

TEST_CASE("parse_scan reads little-endian float quadruples") {
  Bytes bytes = f32le({1.5f, -2.0f, 0.25f, 0.9f, 10.0f, 20.0f, -1.0f, 0.0f});
  PointCloud cloud = parse_scan(bytes);
  REQUIRE(cloud.size() == 2);
  CHECK(cloud.points[0].x == 1.5);
  CHECK(cloud.points[0].r == doctest::Approx(0.9).epsilon(1e-7));
  CHECK(cloud.points[1].y == 20.0);
}

TEST_CASE("parse_scan rejects bad input") {
  CHECK_THROWS_AS(parse_scan(f32le({1.0f, 2.0f, 3.0f})), TruncatedScan);
  Bytes nan_bytes = f32le({1.0f, 2.0f, std::nanf(""), 0.5f});
  CHECK_THROWS_AS(parse_scan(nan_bytes), NonFiniteValue);
}

TEST_CASE("scan serialization round-trips byte-exactly") {
  Rng rng(3);
  PointCloud cloud;
  for (int n = 0; n < 257; ++n) {
    // Values quantized to f32 so double -> f32 -> double is lossless.
    Point p;
    p.x = double(float(uniform_range(rng, -80.0, 80.0)));
    p.y = double(float(uniform_range(rng, -80.0, 80.0)));
    p.z = double(float(uniform_range(rng, -3.0, 2.0)));
    p.r = double(float(uniform01(rng)));
    cloud.points.push_back(p);
  }
  Bytes bytes = serialize_scan(cloud);
  CHECK(bytes.size() == 257 * 16);
  PointCloud back = parse_scan(bytes);
  REQUIRE(back.size() == cloud.size());
  for (std::size_t n = 0; n < cloud.size(); ++n) {
    CHECK(back.points[n].x == cloud.points[n].x);
    CHECK(back.points[n].r == cloud.points[n].r);
  }
  CHECK(serialize_scan(back) == bytes);

  SUBCASE("empty scan") {
    Bytes empty = serialize_scan(PointCloud{});
    CHECK(empty.empty());
    CHECK(parse_scan(empty).size() == 0);
  }
}

TEST_CASE("label words map through the class table") {
  ClassTable table = ClassTable::default_table();
  // 10 = car -> vehicle; 252 = moving-car -> vehicle with moving flag;
  // 40 = road. Upper 16 bits are an instance id and must be ignored for the
  // class but preserved in the raw word.
  Bytes bytes = u32le({10, 252 | (7u << 16), 40});
  LabelSet labels = parse_labels(bytes, table);
  REQUIRE(labels.size() == 3);
  CHECK(labels.class_id == std::vector<std::uint8_t>{kVehicle, kVehicle, kRoad});
  CHECK(labels.moving == std::vector<std::uint8_t>{0, 1, 0});
  CHECK(labels.raw_words[1] == (252 | (7u << 16)));
  CHECK(serialize_labels(labels) == bytes);
}

TEST_CASE("labels with unknown ids and truncation fail loudly") {
  ClassTable table = ClassTable::default_table();
  CHECK_THROWS_AS(parse_labels(u32le({65535}), table), UnknownRawId);
  Bytes odd = u32le({10});
  odd.pop_back();
  CHECK_THROWS_AS(parse_labels(odd, table), TruncatedLabels);
}

TEST_CASE("raw_words_for picks representative ids") {
  std::vector<std::uint32_t> words =
      raw_words_for({kVehicle, kRoad, kPerson}, {false, false, true});
  ClassTable table = ClassTable::default_table();
  LabelSet back = parse_labels(u32le({words[0], words[1], words[2]}), table);
  CHECK(back.class_id == std::vector<std::uint8_t>{kVehicle, kRoad, kPerson});
  CHECK(back.moving == std::vector<std::uint8_t>{0, 0, 1});
}

TEST_CASE("pose parsing composes the calib transform") {
  // Identity camera pose and an identity Tr give an identity LiDAR pose.
  std::string pose_text = "1 0 0 0 0 1 0 0 0 0 1 0\n";
  std::string calib_text = "P0: 1 0 0 0 0 1 0 0 0 0 1 0\nTr: 1 0 0 0 0 1 0 0 0 0 1 0\n";
  std::vector<Pose> poses = parse_poses(pose_text, calib_text);
  REQUIRE(poses.size() == 1);
  CHECK(poses[0].rotation.isApprox(Mat3::Identity(), 1e-12));
  CHECK(poses[0].translation.norm() == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("pose parsing applies T_w_velo = T_w_cam * Tr") {
  // Camera pose translates by (1, 2, 3); Tr translates by (0.1, 0, 0).
  std::string pose_text = "1 0 0 1 0 1 0 2 0 0 1 3\n";
  std::string calib_text = "Tr: 1 0 0 0.1 0 1 0 0 0 0 1 0\n";
  std::vector<Pose> poses = parse_poses(pose_text, calib_text);
  REQUIRE(poses.size() == 1);
  Vec3 mapped = poses[0].apply(Vec3::Zero());
  CHECK(mapped.isApprox(Vec3(1.1, 2.0, 3.0), 1e-12));
}

TEST_CASE("malformed poses and missing calib throw") {
  CHECK_THROWS_AS(parse_poses("1 0 0\n", "Tr: 1 0 0 0 0 1 0 0 0 0 1 0\n"), MalformedPoseLine);
  CHECK_THROWS_AS(parse_poses("1 0 0 0 0 1 0 0 0 0 1 0\n", "P0: 1 0\n"), MissingCalibTr);
}

TEST_CASE("slightly denormalized rotations are re-orthonormalized") {
  // Rotation rows scaled by 1 + 5e-4: drift well above the 1e-6 gate.
  std::string pose_text = "1.0005 0 0 0 0 1.0005 0 0 0 0 1.0005 0\n";
  std::string calib_text = "Tr: 1 0 0 0 0 1 0 0 0 0 1 0\n";
  std::vector<Pose> poses = parse_poses(pose_text, calib_text);
  REQUIRE(poses.size() == 1);
  Mat3 gram = poses[0].rotation.transpose() * poses[0].rotation;
  CHECK(gram.isApprox(Mat3::Identity(), 1e-9));
}

TEST_CASE("poses serialize and re-parse to the same transforms") {
  Rng rng(5);
  std::vector<Pose> poses;
  for (int n = 0; n < 8; ++n) {
    double angle = uniform_range(rng, -3.0, 3.0);
    Pose p;
    p.rotation = Eigen::AngleAxisd(angle, Vec3::UnitZ()).toRotationMatrix();
    p.translation = Vec3(uniform_range(rng, -50.0, 50.0), uniform_range(rng, -50.0, 50.0),
                         uniform_range(rng, -2.0, 2.0));
    poses.push_back(p);
  }
  std::string text = serialize_poses(poses);
  std::vector<Pose> back = parse_poses(text, "Tr: 1 0 0 0 0 1 0 0 0 0 1 0\n");
  REQUIRE(back.size() == poses.size());
  for (std::size_t n = 0; n < poses.size(); ++n) {
    CHECK(back[n].rotation.isApprox(poses[n].rotation, 1e-12));
    CHECK(back[n].translation.isApprox(poses[n].translation, 1e-12));
  }
}

TEST_CASE("transform_cloud applies the rigid map per point") {
  Pose pose;
  pose.rotation = Eigen::AngleAxisd(std::numbers::pi / 2.0, Vec3::UnitZ()).toRotationMatrix();
  pose.translation = Vec3(1.0, 0.0, 0.0);
  PointCloud cloud;
  cloud.points.push_back({1.0, 0.0, 0.5, 0.7});
  PointCloud out = transform_cloud(cloud, pose);
  REQUIRE(out.size() == 1);
  CHECK(out.points[0].x == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(out.points[0].y == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(out.points[0].z == 0.5);
  CHECK(out.points[0].r == 0.7);
}

TEST_CASE("atomic writes land complete or not at all") {
  namespace fs = std::filesystem;
  fs::path dir = fs::temp_directory_path() / "pillarseg_io_test";
  fs::create_directories(dir);
  fs::path target = dir / "scan.bin";
  Bytes payload = f32le({1.0f, 2.0f, 3.0f, 0.5f});
  write_file_atomic(target, payload);
  CHECK(read_file(target) == payload);
  // Overwrite with different content; no partial state observable afterward.
  Bytes payload2 = f32le({4.0f, 5.0f, 6.0f, 0.25f});
  write_file_atomic(target, payload2);
  CHECK(read_file(target) == payload2);
  fs::remove_all(dir);
  CHECK_THROWS_AS(read_file(dir / "missing.bin"), IoFailure);
}

TEST_CASE("discover_sequence lists scans in index order") {
  namespace fs = std::filesystem;
  fs::path dir = fs::temp_directory_path() / "pillarseg_seq_test";
  fs::create_directories(dir / "velodyne");
  fs::create_directories(dir / "labels");
  for (const char* name : {"000002.bin", "000000.bin", "000001.bin"})
    write_file(dir / "velodyne" / name, {});
  for (const char* name : {"000000.label", "000001.label", "000002.label"})
    write_file(dir / "labels" / name, {});
  write_file(dir / "poses.txt", {});
  write_file(dir / "calib.txt", {});

  SequencePaths paths = discover_sequence(dir, true, true);
  REQUIRE(paths.scans.size() == 3);
  CHECK(paths.scans[0].filename() == "000000.bin");
  CHECK(paths.scans[2].filename() == "000002.bin");
  REQUIRE(paths.labels.size() == 3);
  CHECK(paths.labels[1].filename() == "000001.label");
  fs::remove_all(dir);
}
