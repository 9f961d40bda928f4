#include "pillarseg/kitti_io.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <optional>
#include <sstream>

#include "pillarseg/errors.hpp"

namespace pillarseg {

namespace {

float read_f32_le(const std::uint8_t* p) {
  std::uint32_t u = std::uint32_t(p[0]) | std::uint32_t(p[1]) << 8 | std::uint32_t(p[2]) << 16 |
                    std::uint32_t(p[3]) << 24;
  return std::bit_cast<float>(u);
}

void write_f32_le(Bytes& out, float v) {
  std::uint32_t u = std::bit_cast<std::uint32_t>(v);
  out.push_back(static_cast<std::uint8_t>(u & 0xFF));
  out.push_back(static_cast<std::uint8_t>((u >> 8) & 0xFF));
  out.push_back(static_cast<std::uint8_t>((u >> 16) & 0xFF));
  out.push_back(static_cast<std::uint8_t>((u >> 24) & 0xFF));
}

std::uint32_t read_u32_le(const std::uint8_t* p) {
  return std::uint32_t(p[0]) | std::uint32_t(p[1]) << 8 | std::uint32_t(p[2]) << 16 |
         std::uint32_t(p[3]) << 24;
}

void write_u32_le(Bytes& out, std::uint32_t u) {
  out.push_back(static_cast<std::uint8_t>(u & 0xFF));
  out.push_back(static_cast<std::uint8_t>((u >> 8) & 0xFF));
  out.push_back(static_cast<std::uint8_t>((u >> 16) & 0xFF));
  out.push_back(static_cast<std::uint8_t>((u >> 24) & 0xFF));
}

Mat3 reorthonormalize(const Mat3& r) {
  Eigen::JacobiSVD<Mat3> svd(r, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 out = svd.matrixU() * svd.matrixV().transpose();
  if (out.determinant() < 0.0) {
    Mat3 flip = Mat3::Identity();
    flip(2, 2) = -1.0;
    out = svd.matrixU() * flip * svd.matrixV().transpose();
  }
  return out;
}

Pose pose_from_12(const std::array<double, 12>& v) {
  Pose p;
  p.rotation << v[0], v[1], v[2], v[4], v[5], v[6], v[8], v[9], v[10];
  p.translation << v[3], v[7], v[11];
  return p;
}

}  // namespace

PointCloud parse_scan(const Bytes& bytes) {
  if (bytes.size() % 16 != 0)
    throw TruncatedScan(std::to_string(bytes.size()) + " bytes is not a multiple of 16");
  PointCloud cloud;
  cloud.points.reserve(bytes.size() / 16);
  for (std::size_t off = 0; off < bytes.size(); off += 16) {
    Point p;
    p.x = read_f32_le(&bytes[off]);
    p.y = read_f32_le(&bytes[off + 4]);
    p.z = read_f32_le(&bytes[off + 8]);
    p.r = read_f32_le(&bytes[off + 12]);
    if (!std::isfinite(p.x) || !std::isfinite(p.y) || !std::isfinite(p.z) || !std::isfinite(p.r))
      throw NonFiniteValue("point " + std::to_string(off / 16));
    cloud.points.push_back(p);
  }
  return cloud;
}

Bytes serialize_scan(const PointCloud& cloud) {
  Bytes out;
  out.reserve(cloud.size() * 16);
  for (const Point& p : cloud.points) {
    write_f32_le(out, static_cast<float>(p.x));
    write_f32_le(out, static_cast<float>(p.y));
    write_f32_le(out, static_cast<float>(p.z));
    write_f32_le(out, static_cast<float>(p.r));
  }
  return out;
}

LabelSet parse_labels(const Bytes& bytes, const ClassTable& table) {
  if (bytes.size() % 4 != 0)
    throw TruncatedLabels(std::to_string(bytes.size()) + " bytes is not a multiple of 4");
  LabelSet out;
  const std::size_t n = bytes.size() / 4;
  out.class_id.reserve(n);
  out.moving.reserve(n);
  out.raw_words.reserve(n);
  for (std::size_t idx = 0; idx < n; ++idx) {
    const std::uint32_t word = read_u32_le(&bytes[idx * 4]);
    const auto raw = static_cast<std::uint16_t>(word & 0xFFFF);
    const ClassTable::Entry entry = table.lookup(raw);
    out.class_id.push_back(entry.merged);
    out.moving.push_back(entry.moving ? 1 : 0);
    out.raw_words.push_back(word);
  }
  return out;
}

Bytes serialize_labels(const LabelSet& labels) {
  Bytes out;
  out.reserve(labels.raw_words.size() * 4);
  for (std::uint32_t word : labels.raw_words) write_u32_le(out, word);
  return out;
}

std::vector<std::uint32_t> raw_words_for(const std::vector<std::uint8_t>& class_id,
                                         const std::vector<std::uint8_t>& moving) {
  if (class_id.size() != moving.size()) throw PairMismatch("class_id vs moving length");
  std::vector<std::uint32_t> words(class_id.size());
  for (std::size_t i = 0; i < class_id.size(); ++i)
    words[i] = representative_raw_id(class_id[i], moving[i] != 0);
  return words;
}

std::vector<Pose> parse_poses(const std::string& pose_text, const std::string& calib_text) {
  // Locate the Tr line.
  std::optional<Pose> tr;
  {
    std::istringstream in(calib_text);
    std::string line;
    while (std::getline(in, line)) {
      if (line.rfind("Tr:", 0) != 0) continue;
      std::istringstream fields(line.substr(3));
      std::array<double, 12> v{};
      for (double& x : v)
        if (!(fields >> x)) throw MissingCalibTr("Tr line has fewer than 12 values");
      tr = pose_from_12(v);
      break;
    }
  }
  if (!tr) throw MissingCalibTr("no line starting with \"Tr:\"");

  std::vector<Pose> poses;
  std::istringstream in(pose_text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream fields(line);
    std::array<double, 12> v{};
    for (double& x : v)
      if (!(fields >> x)) throw MalformedPoseLine("line " + std::to_string(line_no));
    double extra;
    if (fields >> extra) throw MalformedPoseLine("line " + std::to_string(line_no) + ": extra values");
    Pose cam = pose_from_12(v);
    Pose velo = cam * *tr;
    const double drift = (velo.rotation.transpose() * velo.rotation - Mat3::Identity()).norm();
    if (drift > 1e-6 || std::abs(velo.rotation.determinant() - 1.0) > 1e-6)
      velo.rotation = reorthonormalize(velo.rotation);
    poses.push_back(velo);
  }
  return poses;
}

std::string serialize_poses(const std::vector<Pose>& poses) {
  std::ostringstream out;
  out.precision(17);
  for (const Pose& p : poses) {
    for (int row = 0; row < 3; ++row) {
      for (int col = 0; col < 4; ++col) {
        if (row != 0 || col != 0) out << " ";
        out << (col < 3 ? p.rotation(row, col) : p.translation(row));
      }
    }
    out << "\n";
  }
  return out.str();
}

PointCloud transform_cloud(const PointCloud& cloud, const Pose& pose) {
  PointCloud out;
  out.frame_id = cloud.frame_id;
  out.points.reserve(cloud.size());
  for (const Point& p : cloud.points) {
    const Vec3 q = pose.apply(p.xyz());
    out.points.push_back(Point{q.x(), q.y(), q.z(), p.r});
  }
  return out;
}

Bytes read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoFailure("cannot open " + path.string());
  Bytes bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoFailure("read error on " + path.string());
  return bytes;
}

void write_file(const std::filesystem::path& path, const Bytes& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoFailure("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoFailure("write error on " + path.string());
}

void write_file_atomic(const std::filesystem::path& path, const Bytes& bytes) {
  const std::filesystem::path tmp = path.string() + ".tmp";
  write_file(tmp, bytes);
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoFailure("rename " + tmp.string() + " -> " + path.string() + ": " + ec.message());
}

std::string read_text_file(const std::filesystem::path& path) {
  const Bytes bytes = read_file(path);
  return std::string(bytes.begin(), bytes.end());
}

SequencePaths discover_sequence(const std::filesystem::path& dir, bool require_labels,
                                bool require_poses) {
  namespace fs = std::filesystem;
  SequencePaths out;
  const fs::path velodyne = dir / "velodyne";
  if (!fs::is_directory(velodyne)) throw FormatError("missing directory " + velodyne.string());
  for (const auto& entry : fs::directory_iterator(velodyne))
    if (entry.path().extension() == ".bin") out.scans.push_back(entry.path());
  std::sort(out.scans.begin(), out.scans.end());
  if (out.scans.empty()) throw FormatError("no .bin scans in " + velodyne.string());

  const fs::path labels = dir / "labels";
  if (fs::is_directory(labels)) {
    for (const auto& entry : fs::directory_iterator(labels))
      if (entry.path().extension() == ".label") out.labels.push_back(entry.path());
    std::sort(out.labels.begin(), out.labels.end());
  }
  if (require_labels && out.labels.size() != out.scans.size())
    throw FormatError("expected " + std::to_string(out.scans.size()) + " label files in " +
                      labels.string() + ", found " + std::to_string(out.labels.size()));

  out.poses = dir / "poses.txt";
  out.calib = dir / "calib.txt";
  if (require_poses) {
    if (!fs::is_regular_file(out.poses)) throw FormatError("missing file " + out.poses.string());
    if (!fs::is_regular_file(out.calib)) throw FormatError("missing file " + out.calib.string());
  }
  return out;
}

}  // namespace pillarseg
