#include "pillarseg/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <numbers>
#include <string>
#include <vector>

#include "pillarseg/errors.hpp"
#include "pillarseg/metrics.hpp"

namespace pillarseg {

LossWeights default_loss_weights(TrainMode mode) {
  LossWeights w;
  w.fill(1.0);
  w[kVehicle] = mode == TrainMode::kDense ? 5.0 : 2.0;
  w[kPerson] = 8.0;
  w[kTwoWheel] = 8.0;
  w[kRider] = 8.0;
  return w;
}

void TrainConfig::validate() const {
  if (epochs <= 0) throw ConfigError("epochs must be positive");
  if (batch_size <= 0) throw ConfigError("batch_size must be positive");
  // lr = 0 is allowed: a zero-rate run is the documented way to exercise
  // the loop without touching the parameters.
  if (!(lr >= 0.0)) throw ConfigError("lr must be non-negative");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be non-negative");
  for (double w : loss_weights)
    if (!(w >= 0.0)) throw ConfigError("loss weights must be non-negative");
  for (double w : gt_weights)
    if (!(w > 0.0)) throw ConfigError("gt weights must be positive");
}

ad::Tensor weighted_ce_loss(const ad::Tensor& logits, const SemanticGrid& target,
                            const LossWeights& weights, ad::Tape* tape) {
  const ad::Shape& shape = logits.shape();
  if (shape.size() != 3 || int(shape[0]) != target.width || int(shape[1]) != target.height)
    throw ShapeMismatch("logits do not cover the target grid");
  // Row r of the flattened logits is cell (i, j) = (r / H, r % H).
  std::vector<std::uint8_t> labels(std::size_t(target.width) * target.height, kUnlabeled);
  for (int i = 0; i < target.width; ++i)
    for (int j = 0; j < target.height; ++j)
      labels[std::size_t(i) * target.height + j] = target.at(i, j);
  return ad::weighted_cross_entropy(logits, labels, weights, tape);
}

Augmented augment(const PointCloud& cloud, const Vec3& origin, const AugmentConfig& cfg,
                  Rng& rng) {
  Augmented out;
  out.cloud = cloud;
  out.origin = origin;

  auto apply = [&out](auto&& f) {
    for (Point& p : out.cloud.points) {
      Vec3 v = f(p.xyz());
      p.x = v.x();
      p.y = v.y();
      p.z = v.z();
    }
    out.origin = f(out.origin);
  };

  if (cfg.flip) {
    bool flip_x = uniform01(rng) < 0.5;
    bool flip_y = uniform01(rng) < 0.5;
    if (flip_x) apply([](Vec3 v) { return Vec3(-v.x(), v.y(), v.z()); });
    if (flip_y) apply([](Vec3 v) { return Vec3(v.x(), -v.y(), v.z()); });
  }
  if (cfg.rotate) {
    double theta = uniform_range(rng, -std::numbers::pi / 4.0, std::numbers::pi / 4.0);
    double c = std::cos(theta), s = std::sin(theta);
    apply([c, s](Vec3 v) { return Vec3(c * v.x() - s * v.y(), s * v.x() + c * v.y(), v.z()); });
  }
  if (cfg.scale) {
    double s = uniform_range(rng, 0.95, 1.05);
    apply([s](Vec3 v) { return Vec3(s * v.x(), s * v.y(), s * v.z()); });
  }
  if (cfg.translate) {
    // Drawn one by one: argument lists have no evaluation order, and the
    // x, y, z draw order is part of the determinism contract.
    const double tx = 5.0 * normal01(rng);
    const double ty = 5.0 * normal01(rng);
    const double tz = 0.05 * normal01(rng);
    Vec3 d(tx, ty, tz);
    apply([d](Vec3 v) { return Vec3(v.x() + d.x(), v.y() + d.y(), v.z() + d.z()); });
  }
  return out;
}

namespace {

// Training-set mIoU from an augmentation-free eval pass; labelled cells only.
double eval_miou(const std::vector<TrainSample>& dataset, const TrainConfig& cfg,
                 const ModelConfig& model_cfg, NetworkParams& params, Rng& pillar_rng) {
  ConfusionMatrix cm;
  for (const TrainSample& sample : dataset) {
    SemanticGrid target = sparse_gt(sample.cloud, sample.labels, model_cfg.grid, cfg.gt_weights);
    PointCloud cropped = crop_cloud(sample.cloud, nullptr, model_cfg.grid).cloud;
    ad::Tensor logits = forward(cropped, Vec3::Zero(), model_cfg, params, pillar_rng,
                                ad::Mode::kEval, nullptr);
    accumulate(cm, predict(logits).grid, target, nullptr);
  }
  return miou(cm);
}

}  // namespace

TrainResult train(const std::vector<TrainSample>& dataset, const TrainConfig& cfg,
                  const ModelConfig& model_cfg, NetworkParams& params,
                  const EpochCallback& on_epoch, const StartCallback& on_start) {
  cfg.validate();
  model_cfg.validate();
  if (dataset.empty()) throw EmptyDataset("no training samples");

  AdamConfig adam_cfg;
  adam_cfg.lr = cfg.lr;
  adam_cfg.weight_decay = cfg.weight_decay;
  Adam optimizer(params.parameters(), adam_cfg);
  if (on_start) on_start(params, optimizer);

  // Independent streams so toggling augmentation leaves pillar sampling (and
  // with it the non-augmented parts of a run) untouched.
  Rng pillar_rng(cfg.seed);
  Rng augment_rng(cfg.augment.seed);

  TrainResult result;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    double loss_sum = 0.0;
    int step_count = 0;
    for (std::size_t begin = 0; begin < dataset.size(); begin += cfg.batch_size) {
      std::size_t end = std::min(begin + cfg.batch_size, dataset.size());
      optimizer.zero_grad();
      ad::Tape tape;
      ad::Tensor batch_loss;
      for (std::size_t s = begin; s < end; ++s) {
        Augmented aug = augment(dataset[s].cloud, Vec3::Zero(), cfg.augment, augment_rng);
        SemanticGrid target = sparse_gt(aug.cloud, dataset[s].labels, model_cfg.grid,
                                        cfg.gt_weights);
        PointCloud cropped = crop_cloud(aug.cloud, nullptr, model_cfg.grid).cloud;
        ad::Tensor logits = forward(cropped, aug.origin, model_cfg, params, pillar_rng,
                                    ad::Mode::kTrain, &tape);
        ad::Tensor loss = weighted_ce_loss(logits, target, cfg.loss_weights, &tape);
        batch_loss = s == begin ? loss : ad::add(batch_loss, loss, &tape);
      }
      batch_loss = ad::scale(batch_loss, 1.0 / double(end - begin), &tape);
      double value = batch_loss.item();
      if (!std::isfinite(value)) throw DivergedLoss("non-finite loss at epoch " +
                                                    std::to_string(epoch));
      tape.backward(batch_loss);
      optimizer.step();
      loss_sum += value;
      ++step_count;
    }

    EpochLog log;
    log.epoch = epoch;
    log.loss = loss_sum / step_count;
    log.miou = eval_miou(dataset, cfg, model_cfg, params, pillar_rng);
    result.log.push_back(log);
    if (on_epoch) on_epoch(log, params, optimizer);
  }
  return result;
}

std::string format_metrics_log(const TrainResult& result) {
  std::string out;
  char line[96];
  for (const EpochLog& log : result.log) {
    std::snprintf(line, sizeof line, "%d\t%.17g\t%.17g\n", log.epoch, log.loss, log.miou);
    out += line;
  }
  return out;
}

}  // namespace pillarseg
