#include "pillarseg/config.hpp"

#include <array>
#include <cstdio>
#include <stdexcept>
#include <string>
#include <vector>

#include "pillarseg/errors.hpp"
#include "pillarseg/kitti_io.hpp"

namespace pillarseg {
namespace {

// Loss/weight keys, hyphens replaced so they parse as bare words.
const std::array<std::string, kNumClasses> kClassKeys = {
    "vehicle",  "person", "two_wheel",  "rider", "road",     "sidewalk",
    "other_ground", "building", "object", "vegetation", "trunk", "terrain"};

std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double parse_double(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    double v = std::stod(value, &used);
    if (used != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("bad number for " + key + ": '" + value + "'");
  }
}

long long parse_int(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    long long v = std::stoll(value, &used);
    if (used != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("bad integer for " + key + ": '" + value + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw ConfigError("bad boolean for " + key + ": '" + value + "'");
}

struct Entry {
  std::string section;
  std::string key;
  std::string value;
};

std::vector<Entry> scan_entries(const std::string& text) {
  std::vector<Entry> entries;
  std::string section;
  std::size_t pos = 0;
  int line_no = 0;
  while (pos <= text.size()) {
    std::size_t nl = text.find('\n', pos);
    std::string line = text.substr(pos, nl == std::string::npos ? nl : nl - pos);
    pos = nl == std::string::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    std::size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError("unterminated section at line " +
                                                std::to_string(line_no));
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("expected key = value at line " + std::to_string(line_no));
    if (section.empty())
      throw ConfigError("key outside any section at line " + std::to_string(line_no));
    entries.push_back({section, trim(line.substr(0, eq)), trim(line.substr(eq + 1))});
  }
  return entries;
}

int class_key_index(const std::string& key) {
  for (int k = 0; k < kNumClasses; ++k)
    if (key == kClassKeys[k]) return k;
  return -1;
}

void apply_entry(PipelineConfig& cfg, const Entry& e) {
  const std::string& k = e.key;
  const std::string& v = e.value;
  if (e.section == "grid") {
    if (k == "x_min") cfg.grid.x_min = parse_double(k, v);
    else if (k == "x_max") cfg.grid.x_max = parse_double(k, v);
    else if (k == "y_min") cfg.grid.y_min = parse_double(k, v);
    else if (k == "y_max") cfg.grid.y_max = parse_double(k, v);
    else if (k == "z_min") cfg.grid.z_min = parse_double(k, v);
    else if (k == "z_max") cfg.grid.z_max = parse_double(k, v);
    else if (k == "cell_xy") cfg.grid.cell_xy = parse_double(k, v);
    else if (k == "cell_z") cfg.grid.cell_z = parse_double(k, v);
    else throw ConfigError("unknown [grid] key: " + k);
  } else if (e.section == "model") {
    if (k == "pillar_channels") cfg.model.pillar_channels = int(parse_int(k, v));
    else if (k == "occupancy_channels") cfg.model.occupancy_channels = int(parse_int(k, v));
    else if (k == "occupancy_mode") {
      if (v == "none") cfg.model.occupancy_mode = OccupancyMode::kNone;
      else if (v == "2d") cfg.model.occupancy_mode = OccupancyMode::k2d;
      else if (v == "3d") cfg.model.occupancy_mode = OccupancyMode::k3d;
      else throw ConfigError("occupancy_mode must be none, 2d or 3d");
    } else if (k == "unet_depth") cfg.model.unet_depth = int(parse_int(k, v));
    else if (k == "base_channels") cfg.model.base_channels = int(parse_int(k, v));
    else if (k == "num_classes") cfg.model.num_classes = int(parse_int(k, v));
    else if (k == "max_pillars") cfg.model.max_pillars = std::size_t(parse_int(k, v));
    else if (k == "max_points") cfg.model.max_points = std::size_t(parse_int(k, v));
    else throw ConfigError("unknown [model] key: " + k);
  } else if (e.section == "train") {
    if (k == "mode") {
      if (v == "sparse") cfg.train.mode = TrainMode::kSparse;
      else if (v == "dense") cfg.train.mode = TrainMode::kDense;
      else throw ConfigError("train mode must be sparse or dense");
    } else if (k == "epochs") cfg.train.epochs = int(parse_int(k, v));
    else if (k == "batch_size") cfg.train.batch_size = int(parse_int(k, v));
    else if (k == "lr") cfg.train.lr = parse_double(k, v);
    else if (k == "weight_decay") cfg.train.weight_decay = parse_double(k, v);
    else if (k == "seed") cfg.train.seed = std::uint64_t(parse_int(k, v));
    else throw ConfigError("unknown [train] key: " + k);
  } else if (e.section == "augment") {
    if (k == "flip") cfg.train.augment.flip = parse_bool(k, v);
    else if (k == "rotate") cfg.train.augment.rotate = parse_bool(k, v);
    else if (k == "scale") cfg.train.augment.scale = parse_bool(k, v);
    else if (k == "translate") cfg.train.augment.translate = parse_bool(k, v);
    else if (k == "seed") cfg.train.augment.seed = std::uint64_t(parse_int(k, v));
    else throw ConfigError("unknown [augment] key: " + k);
  } else if (e.section == "loss") {
    int id = class_key_index(k);
    if (id < 0) throw ConfigError("unknown [loss] key: " + k);
    cfg.train.loss_weights[id] = parse_double(k, v);
  } else if (e.section == "gt") {
    if (k == "d") cfg.neighbors.d = parse_double(k, v);
    else if (k == "max_scans") cfg.neighbors.max_scans = std::size_t(parse_int(k, v));
    else if (k == "distance") {
      if (v == "euclidean") cfg.neighbors.distance = NeighborConfig::Distance::kEuclidean;
      else if (v == "along_x") cfg.neighbors.distance = NeighborConfig::Distance::kAlongX;
      else throw ConfigError("gt distance must be euclidean or along_x");
    } else throw ConfigError("unknown [gt] key: " + k);
  } else {
    throw ConfigError("unknown section: [" + e.section + "]");
  }
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

PipelineConfig default_config() {
  PipelineConfig cfg;
  cfg.grid = default_spec();
  cfg.model.grid = cfg.grid;
  return cfg;
}

PipelineConfig parse_config(const std::string& text) {
  std::vector<Entry> entries = scan_entries(text);

  PipelineConfig cfg = default_config();
  // Mode decides the default loss weights, so resolve it before anything in
  // [loss] overrides them.
  for (const Entry& e : entries)
    if (e.section == "train" && e.key == "mode") apply_entry(cfg, e);
  cfg.train.loss_weights = default_loss_weights(cfg.train.mode);

  for (const Entry& e : entries) apply_entry(cfg, e);
  cfg.model.grid = cfg.grid;

  cfg.grid.validate();
  cfg.model.validate();
  cfg.train.validate();
  if (!(cfg.neighbors.d > 0.0)) throw ConfigError("gt d must be positive");
  if (cfg.neighbors.max_scans == 0) throw ConfigError("gt max_scans must be positive");
  return cfg;
}

std::string serialize_config(const PipelineConfig& cfg) {
  std::string out;
  out += "[grid]\n";
  out += "x_min = " + fmt(cfg.grid.x_min) + "\n";
  out += "x_max = " + fmt(cfg.grid.x_max) + "\n";
  out += "y_min = " + fmt(cfg.grid.y_min) + "\n";
  out += "y_max = " + fmt(cfg.grid.y_max) + "\n";
  out += "z_min = " + fmt(cfg.grid.z_min) + "\n";
  out += "z_max = " + fmt(cfg.grid.z_max) + "\n";
  out += "cell_xy = " + fmt(cfg.grid.cell_xy) + "\n";
  out += "cell_z = " + fmt(cfg.grid.cell_z) + "\n";
  out += "\n[model]\n";
  out += "pillar_channels = " + std::to_string(cfg.model.pillar_channels) + "\n";
  out += "occupancy_channels = " + std::to_string(cfg.model.occupancy_channels) + "\n";
  const char* mode = cfg.model.occupancy_mode == OccupancyMode::kNone ? "none"
                     : cfg.model.occupancy_mode == OccupancyMode::k2d ? "2d"
                                                                      : "3d";
  out += std::string("occupancy_mode = ") + mode + "\n";
  out += "unet_depth = " + std::to_string(cfg.model.unet_depth) + "\n";
  out += "base_channels = " + std::to_string(cfg.model.base_channels) + "\n";
  out += "num_classes = " + std::to_string(cfg.model.num_classes) + "\n";
  out += "max_pillars = " + std::to_string(cfg.model.max_pillars) + "\n";
  out += "max_points = " + std::to_string(cfg.model.max_points) + "\n";
  out += "\n[train]\n";
  out += std::string("mode = ") + (cfg.train.mode == TrainMode::kDense ? "dense" : "sparse") + "\n";
  out += "epochs = " + std::to_string(cfg.train.epochs) + "\n";
  out += "batch_size = " + std::to_string(cfg.train.batch_size) + "\n";
  out += "lr = " + fmt(cfg.train.lr) + "\n";
  out += "weight_decay = " + fmt(cfg.train.weight_decay) + "\n";
  out += "seed = " + std::to_string(cfg.train.seed) + "\n";
  out += "\n[augment]\n";
  out += std::string("flip = ") + (cfg.train.augment.flip ? "true" : "false") + "\n";
  out += std::string("rotate = ") + (cfg.train.augment.rotate ? "true" : "false") + "\n";
  out += std::string("scale = ") + (cfg.train.augment.scale ? "true" : "false") + "\n";
  out += std::string("translate = ") + (cfg.train.augment.translate ? "true" : "false") + "\n";
  out += "seed = " + std::to_string(cfg.train.augment.seed) + "\n";
  out += "\n[loss]\n";
  for (int k = 0; k < kNumClasses; ++k)
    out += kClassKeys[k] + " = " + fmt(cfg.train.loss_weights[k]) + "\n";
  out += "\n[gt]\n";
  out += "d = " + fmt(cfg.neighbors.d) + "\n";
  out += "max_scans = " + std::to_string(cfg.neighbors.max_scans) + "\n";
  out += std::string("distance = ") +
         (cfg.neighbors.distance == NeighborConfig::Distance::kAlongX ? "along_x" : "euclidean") +
         "\n";
  return out;
}

PipelineConfig load_config(const std::string& path) {
  Bytes bytes = read_file(path);
  return parse_config(std::string(bytes.begin(), bytes.end()));
}

}  // namespace pillarseg
