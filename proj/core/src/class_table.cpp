#include "pillarseg/class_table.hpp"

#include <sstream>

#include "pillarseg/errors.hpp"

namespace pillarseg {

ClassTable::Entry ClassTable::lookup(std::uint16_t raw) const {
  auto it = raw_to_merged.find(raw);
  if (it == raw_to_merged.end()) throw UnknownRawId("raw id " + std::to_string(raw));
  return it->second;
}

ClassTable ClassTable::default_table() {
  ClassTable t;
  t.names = {"vehicle", "person",   "two-wheel",  "rider",      "road",  "sidewalk",
             "other-ground", "building", "object", "vegetation", "trunk", "terrain"};
  t.palette = {{{100, 150, 245},
                {255, 30, 30},
                {100, 230, 245},
                {255, 40, 200},
                {255, 0, 255},
                {255, 150, 255},
                {50, 120, 255},
                {255, 200, 0},
                {255, 120, 50},
                {0, 175, 0},
                {135, 60, 60},
                {150, 240, 80}}};

  auto set = [&t](std::uint16_t raw, std::uint8_t merged, bool moving = false) {
    t.raw_to_merged[raw] = Entry{merged, moving};
  };
  // Static classes.
  set(0, kUnlabeled);   // unlabeled
  set(1, kUnlabeled);   // outlier
  set(10, kVehicle);    // car
  set(11, kTwoWheel);   // bicycle
  set(13, kUnlabeled);  // bus
  set(15, kTwoWheel);   // motorcycle
  set(16, kUnlabeled);  // on-rails
  set(18, kVehicle);    // truck
  set(20, kVehicle);    // other-vehicle
  set(30, kPerson);     // person
  set(31, kRider);      // bicyclist
  set(32, kRider);      // motorcyclist
  set(40, kRoad);
  set(44, kOtherGround);  // parking
  set(48, kSidewalk);
  set(49, kOtherGround);  // other-ground
  set(50, kBuilding);
  set(51, kObject);  // fence
  set(52, kUnlabeled);
  set(60, kUnlabeled);  // lane-marking
  set(70, kVegetation);
  set(71, kTrunk);
  set(72, kTerrain);
  set(80, kObject);  // pole
  set(81, kObject);  // traffic-sign
  set(99, kUnlabeled);
  // Moving classes map to their static counterpart's merged class.
  set(252, kVehicle, true);    // moving-car
  set(253, kRider, true);      // moving-bicyclist
  set(254, kPerson, true);     // moving-person
  set(255, kRider, true);      // moving-motorcyclist
  set(256, kUnlabeled, true);  // moving-on-rails
  set(257, kUnlabeled, true);  // moving-bus
  set(258, kVehicle, true);    // moving-truck
  set(259, kVehicle, true);    // moving-other-vehicle
  return t;
}

ClassTable ClassTable::from_mapping_text(const std::string& text) {
  ClassTable t = default_table();
  t.raw_to_merged.clear();
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    std::istringstream fields(line);
    long raw = -1, merged = -1, moving = 0;
    if (!(fields >> raw)) continue;  // blank line
    if (!(fields >> merged >> moving))
      throw FormatError("mapping line " + std::to_string(line_no) + ": expected 3 fields");
    if (raw < 0 || raw > 0xFFFF || (merged != kUnlabeled && (merged < 0 || merged >= kNumClasses)))
      throw FormatError("mapping line " + std::to_string(line_no) + ": id out of range");
    t.raw_to_merged[static_cast<std::uint16_t>(raw)] =
        Entry{static_cast<std::uint8_t>(merged), moving != 0};
  }
  return t;
}

std::string ClassTable::to_mapping_text() const {
  std::ostringstream out;
  out << "# raw_id merged_id moving_flag\n";
  for (const auto& [raw, entry] : raw_to_merged)
    out << raw << " " << int(entry.merged) << " " << int(entry.moving) << "\n";
  return out.str();
}

std::uint16_t representative_raw_id(std::uint8_t merged, bool moving) {
  if (moving) {
    switch (merged) {
      case kVehicle: return 252;
      case kPerson: return 254;
      case kRider: return 253;
      default: throw FormatError("class " + std::to_string(merged) + " has no moving raw id");
    }
  }
  switch (merged) {
    case kVehicle: return 10;
    case kPerson: return 30;
    case kTwoWheel: return 11;
    case kRider: return 31;
    case kRoad: return 40;
    case kSidewalk: return 48;
    case kOtherGround: return 44;
    case kBuilding: return 50;
    case kObject: return 51;
    case kVegetation: return 70;
    case kTrunk: return 71;
    case kTerrain: return 72;
    case kUnlabeled: return 0;
    default: throw FormatError("unknown merged class " + std::to_string(merged));
  }
}

}  // namespace pillarseg
