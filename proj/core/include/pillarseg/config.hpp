#pragma once

#include <string>

#include "pillarseg/grid.hpp"
#include "pillarseg/groundtruth.hpp"
#include "pillarseg/model.hpp"
#include "pillarseg/trainer.hpp"

namespace pillarseg {

// Everything the pipeline reads from a config file. The grid block is
// shared: model.grid always mirrors the top-level spec.
struct PipelineConfig {
  GridSpec grid;
  ModelConfig model;
  TrainConfig train;
  NeighborConfig neighbors;  // dense ground-truth aggregation
};

PipelineConfig default_config();

// Plain-text "key = value" lines under [grid] / [model] / [train] /
// [augment] / [loss] / [gt] headers; '#' starts a comment. Unknown sections
// or keys throw ConfigError, as do malformed values. Loss weights default
// per training mode before per-class overrides apply, so key order in the
// file does not matter.
PipelineConfig parse_config(const std::string& text);

// Full round-trippable dump (every key, shortest exact float form).
std::string serialize_config(const PipelineConfig& cfg);

// Reads and parses a file; throws IoFailure when unreadable.
PipelineConfig load_config(const std::string& path);

}  // namespace pillarseg
