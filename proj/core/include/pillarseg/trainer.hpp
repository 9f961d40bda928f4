#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <vector>

#include "pillarseg/adam.hpp"
#include "pillarseg/groundtruth.hpp"
#include "pillarseg/model.hpp"
#include "pillarseg/rng.hpp"
#include "pillarseg/types.hpp"

namespace pillarseg {

using LossWeights = std::array<double, kNumClasses>;

enum class TrainMode { kSparse, kDense };

// Sparse targets: vehicle 2, person / two-wheel / rider 8, rest 1. Dense
// targets raise vehicle to 5.
LossWeights default_loss_weights(TrainMode mode);

struct AugmentConfig {
  bool flip = false;
  bool rotate = false;
  bool scale = false;
  bool translate = false;
  std::uint64_t seed = 0;
};

struct TrainConfig {
  TrainMode mode = TrainMode::kSparse;
  int epochs = 30;
  int batch_size = 2;
  double lr = 0.001;
  double weight_decay = 0.01;
  std::uint64_t seed = 1;  // pillar sampling and parameter init stream
  AugmentConfig augment;
  LossWeights loss_weights = default_loss_weights(TrainMode::kSparse);
  GtWeights gt_weights = default_gt_weights();

  void validate() const;  // ConfigError on non-positive numerics
};

// Mean over labelled cells of -lambda[k] * log softmax(logits)[k]; cells at
// the 255 sentinel are skipped, and an all-sentinel target yields loss 0
// with zero gradients.
ad::Tensor weighted_ce_loss(const ad::Tensor& logits, const SemanticGrid& target,
                            const LossWeights& weights, ad::Tape* tape);

// Random flip (x and y, 50% each), rotation about z by U(-pi/4, pi/4),
// scaling by U(0.95, 1.05) and translation by per-axis N(0, sigma) with
// sigma = (5, 5, 0.05), applied in that order to the points and the sensor
// origin alike. Disabled toggles draw nothing from the stream.
struct Augmented {
  PointCloud cloud;
  Vec3 origin;
};
Augmented augment(const PointCloud& cloud, const Vec3& origin, const AugmentConfig& cfg, Rng& rng);

// One training example: the raw (uncropped) labelled cloud in the sensor
// frame. In dense mode this is the pose-aligned multi-scan aggregate.
struct TrainSample {
  PointCloud cloud;
  LabelSet labels;
};

struct EpochLog {
  int epoch = 0;
  double loss = 0.0;
  double miou = 0.0;
};

struct TrainResult {
  std::vector<EpochLog> log;
};

// Called after every epoch, e.g. to write a checkpoint.
using EpochCallback = std::function<void(const EpochLog& log, NetworkParams& params,
                                         Adam& optimizer)>;
// Called once before the first step, e.g. to restore optimizer state.
using StartCallback = std::function<void(NetworkParams& params, Adam& optimizer)>;

// Mini-batch loop: augment -> crop -> regenerate the target grid from the
// augmented points -> forward -> batch-mean loss -> backward -> Adam step.
// The per-epoch log holds the mean step loss and the training mIoU from an
// augmentation-free eval-mode pass. Throws EmptyDataset and, on a
// non-finite loss, DivergedLoss.
TrainResult train(const std::vector<TrainSample>& dataset, const TrainConfig& cfg,
                  const ModelConfig& model_cfg, NetworkParams& params,
                  const EpochCallback& on_epoch, const StartCallback& on_start = {});

// Tab-separated "epoch<TAB>loss<TAB>miou" lines.
std::string format_metrics_log(const TrainResult& result);

}  // namespace pillarseg
