#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pillarseg/adam.hpp"
#include "pillarseg/kitti_io.hpp"
#include "pillarseg/model.hpp"

namespace pillarseg {

// One named tensor inside a checkpoint. Rank-0 records carry exactly one
// value (the empty product), used for scalar optimizer state.
struct TensorRecord {
  std::string name;
  std::vector<std::uint32_t> shape;
  std::vector<double> values;

  bool operator==(const TensorRecord&) const = default;
};

// Binary layout: magic "PSNC", version u8 (currently 1), then for each
// record a u32 name length + name bytes + u32 rank + u32 dims + f64 values,
// all little-endian, until the buffer ends. Throws FormatError on anything
// that does not parse back exactly.
Bytes serialize_records(const std::vector<TensorRecord>& records);
std::vector<TensorRecord> parse_records(const Bytes& bytes);

// Full training state: every parameter and batchnorm running statistic
// under its network name, optimizer moments as adam.m.<name> / adam.v.<name>
// plus the scalar adam.t, and the config text as a rank-1 record of char
// codes under "config.text" so inference needs no side files. Optimizer and
// config records are optional on both ends.
Bytes save_checkpoint(NetworkParams& params, Adam* optimizer, const std::string& config_text);

// Copies values back into an already-built network of the same
// architecture. Missing names or shape disagreements throw FormatError.
void restore_params(NetworkParams& params, const std::vector<TensorRecord>& records);

// Restores adam.m.* / adam.v.* / adam.t for the optimizer built over
// params.parameters(). Throws FormatError when any piece is absent.
void restore_optimizer(Adam& optimizer, NetworkParams& params,
                       const std::vector<TensorRecord>& records);

bool has_optimizer_state(const std::vector<TensorRecord>& records);

// The embedded config text; empty string when the record is absent.
std::string checkpoint_config_text(const std::vector<TensorRecord>& records);

}  // namespace pillarseg
