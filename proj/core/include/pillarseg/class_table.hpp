#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>

#include "pillarseg/types.hpp"

namespace pillarseg {

// Raw dataset id -> merged class mapping plus display names and palette.
// The default table hard-codes the published raw ids; a mapping file with
// "raw_id merged_id moving_flag" lines can override it.
struct ClassTable {
  struct Entry {
    std::uint8_t merged = kUnlabeled;
    bool moving = false;
  };

  std::map<std::uint16_t, Entry> raw_to_merged;
  std::array<std::string, kNumClasses> names;
  std::array<std::array<std::uint8_t, 3>, kNumClasses> palette;

  bool contains(std::uint16_t raw) const { return raw_to_merged.count(raw) != 0; }
  Entry lookup(std::uint16_t raw) const;  // throws UnknownRawId

  static ClassTable default_table();

  // Parses mapping-file text ("raw merged moving" per line, '#' comments).
  // Names and palette keep their defaults.
  static ClassTable from_mapping_text(const std::string& text);

  std::string to_mapping_text() const;
};

// Representative raw id for a merged class, used when synthesizing label
// files. moving=true picks the moving-class id and is only defined for
// classes that have one (vehicle, person, rider).
std::uint16_t representative_raw_id(std::uint8_t merged, bool moving);

}  // namespace pillarseg
