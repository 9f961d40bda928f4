#pragma once

#include <string>
#include <utility>
#include <vector>

#include "pillarseg/autodiff.hpp"
#include "pillarseg/grid.hpp"
#include "pillarseg/pillars.hpp"
#include "pillarseg/rng.hpp"
#include "pillarseg/types.hpp"

namespace pillarseg {

enum class OccupancyMode { kNone, k2d, k3d };

struct ModelConfig {
  int pillar_channels = 64;     // C: pillar feature width
  int occupancy_channels = 16;  // Q: occupancy feature width
  OccupancyMode occupancy_mode = OccupancyMode::kNone;
  int unet_depth = 4;
  int base_channels = 16;
  int num_classes = kNumClasses;
  GridSpec grid;
  std::size_t max_pillars = 30000;  // P
  std::size_t max_points = 20;      // N per pillar

  // Throws ConfigError on non-positive sizes.
  void validate() const;
};

// One conv (or the pointnet linear) followed by batchnorm.
struct ConvBlock {
  ad::Tensor weight;
  ad::Tensor bias;
  ad::Tensor gamma;
  ad::Tensor beta;
  ad::Tensor running_mean;
  ad::Tensor running_var;
};

struct NetworkParams {
  struct DoubleConv {
    ConvBlock a;
    ConvBlock b;
  };
  struct DecoderLevel {
    ConvBlock up;  // 3x3 conv after upsampling, halves the channel count
    DoubleConv conv;
  };

  PointNetParams pointnet;
  ConvBlock occupancy;  // present only when the occupancy stream is active
  std::vector<DoubleConv> encoder;
  DoubleConv bottleneck;
  std::vector<DecoderLevel> decoder;  // deepest level first
  ad::Tensor head_weight;             // (1, 1, base, K)
  ad::Tensor head_bias;

  bool has_occupancy = false;

  // Trainable tensors in a fixed traversal order (the checkpoint and
  // optimizer orders).
  std::vector<ad::Tensor> parameters();
  // Batchnorm running statistics, same traversal order.
  std::vector<ad::Tensor> buffers();
  std::vector<std::pair<std::string, ad::Tensor>> named_tensors();
};

// Uniform(-a, a) weights with a = sqrt(6 / (fan_in + fan_out)), zero biases,
// batchnorm gamma 1 / beta 0 / running stats (0, 1). Tensors are drawn in
// named_tensors() order from the single rng stream.
NetworkParams init_params(const ModelConfig& cfg, Rng& rng);

// ReLU(BatchNorm(conv3x3(input))); input is (W, H, 1) transmissions in 2d
// mode or the (W, H, Z) probability volume in 3d mode.
ad::Tensor occupancy_features(const ad::Tensor& input, ConvBlock& block, ad::Mode mode,
                              ad::Tape* tape);

// Full pass: pillars -> pointnet -> scatter; optional occupancy stream
// concatenated; encoder/decoder with skip connections operating directly on
// the aggregate (no stem block); 1x1 head. The canvas is zero-padded
// symmetrically up to a multiple of 2^depth and the logits cropped back, so
// the result is always (W, H, K). The cloud must already be cropped.
ad::Tensor forward(const PointCloud& cloud, const Vec3& sensor_origin, const ModelConfig& cfg,
                   NetworkParams& params, Rng& rng, ad::Mode mode, ad::Tape* tape);

struct Prediction {
  SemanticGrid grid;
  // Softmax probabilities in grid-file plane order: index = (k*H + j)*W + i.
  std::vector<float> probabilities;
};

// Per-cell softmax and argmax (ties to the smallest class id).
Prediction predict(const ad::Tensor& logits);

}  // namespace pillarseg
