#include "pillarseg/model.hpp"

#include <cmath>
#include <set>
#include <string>
#include <vector>

#include "doctest.h"
#include "pillarseg/errors.hpp"
#include "pillarseg/grid.hpp"
#include "pillarseg/rng.hpp"

using namespace pillarseg;

namespace {

// 64x32 cells: enough spatial extent for two pooling levels.
ModelConfig toy_config(OccupancyMode mode) {
  ModelConfig cfg;
  cfg.grid.x_min = -3.2;
  cfg.grid.x_max = 3.2;
  cfg.grid.y_min = -1.6;
  cfg.grid.y_max = 1.6;
  cfg.grid.cell_xy = 0.1;
  cfg.pillar_channels = 8;
  cfg.occupancy_channels = 4;
  cfg.occupancy_mode = mode;
  cfg.unet_depth = 2;
  cfg.base_channels = 4;
  cfg.max_pillars = 512;
  cfg.max_points = 16;
  return cfg;
}

PointCloud random_cloud(Rng& rng, const GridSpec& spec, std::size_t count) {
  PointCloud cloud;
  for (std::size_t n = 0; n < count; ++n) {
    Point p;
    p.x = uniform_range(rng, spec.x_min, spec.x_max - 1e-6);
    p.y = uniform_range(rng, spec.y_min, spec.y_max - 1e-6);
    p.z = uniform_range(rng, spec.z_min, spec.z_max - 1e-6);
    p.r = uniform01(rng);
    cloud.points.push_back(p);
  }
  return cloud;
}

// Finite-difference probes are only meaningful away from relu / max kinks;
// the margins collected during a probe-free forward pass must comfortably
// exceed the probe step.
bool kink_margins_ok(const std::function<ad::Tensor(ad::Tape&)>& build, double margin) {
  ad::KinkScope scope;
  ad::Tape tape;
  build(tape);
  return scope.stats().min_relu_margin > margin && scope.stats().min_max_gap > margin;
}

}  // namespace

TEST_CASE("model config validation rejects non-positive sizes") {
  ModelConfig cfg = toy_config(OccupancyMode::kNone);
  cfg.validate();  // baseline passes
  SUBCASE("pillar channels") {
    cfg.pillar_channels = 0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
  }
  SUBCASE("occupancy channels with active stream") {
    cfg.occupancy_mode = OccupancyMode::k2d;
    cfg.occupancy_channels = 0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
  }
  SUBCASE("idle occupancy stream ignores its width") {
    cfg.occupancy_mode = OccupancyMode::kNone;
    cfg.occupancy_channels = 0;
    cfg.validate();
  }
  SUBCASE("depth") {
    cfg.unet_depth = 0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
  }
  SUBCASE("classes") {
    cfg.num_classes = 1;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
  }
  SUBCASE("capacities") {
    cfg.max_pillars = 0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
  }
}

TEST_CASE("initialization: zero biases, unit gamma, bounded uniform weights") {
  ModelConfig cfg = toy_config(OccupancyMode::k3d);
  Rng rng(7);
  NetworkParams params = init_params(cfg, rng);

  for (auto& [name, tensor] : params.named_tensors()) {
    if (name.ends_with(".bias") || name.ends_with(".beta") || name.ends_with(".running_mean")) {
      for (double v : tensor.value()) CHECK(v == 0.0);
    } else if (name.ends_with(".gamma") || name.ends_with(".running_var")) {
      for (double v : tensor.value()) CHECK(v == 1.0);
    } else {
      REQUIRE(name.ends_with(".weight"));
      // Recompute the fan-based bound from the tensor's own shape:
      // (in, out) for the pointnet linear, (k, k, cin, cout) for convs.
      double fan_in, fan_out;
      if (tensor.rank() == 2) {
        fan_in = double(tensor.dim(0));
        fan_out = double(tensor.dim(1));
      } else {
        REQUIRE(tensor.rank() == 4);
        const double k2 = double(tensor.dim(0) * tensor.dim(1));
        fan_in = k2 * double(tensor.dim(2));
        fan_out = k2 * double(tensor.dim(3));
      }
      const double bound = std::sqrt(6.0 / (fan_in + fan_out));
      double max_abs = 0.0;
      for (double v : tensor.value()) max_abs = std::max(max_abs, std::abs(v));
      CHECK(max_abs <= bound);
      CHECK(max_abs > 0.0);
    }
  }
}

TEST_CASE("named tensor census follows the declared traversal order") {
  ModelConfig cfg = toy_config(OccupancyMode::kNone);
  Rng rng(7);
  NetworkParams params = init_params(cfg, rng);
  auto named = params.named_tensors();

  // Blocks of 6 tensors each: pointnet, 2 per encoder level, 2 bottleneck,
  // 3 per decoder level; plus the 2 head tensors.
  const std::size_t blocks = 1 + 2 * 2 + 2 + 3 * 2;
  REQUIRE(named.size() == blocks * 6 + 2);
  CHECK(named.front().first == "pointnet.weight");
  CHECK(named[6].first == "encoder0.a.weight");
  CHECK(named.back().first == "head.bias");
  CHECK(params.parameters().size() == blocks * 4 + 2);
  CHECK(params.buffers().size() == blocks * 2);

  // Every name unique; no occupancy entries when the stream is off.
  std::set<std::string> names;
  for (auto& [name, tensor] : named) {
    CHECK(names.insert(name).second);
    CHECK(name.rfind("occupancy", 0) == std::string::npos);
  }

  // Buffers are exactly the running statistics and are not trainable.
  for (auto& tensor : params.buffers()) CHECK_FALSE(tensor.requires_grad());
  for (auto& tensor : params.parameters()) CHECK(tensor.requires_grad());

  // With an active stream the occupancy block appears after the pointnet.
  ModelConfig occ_cfg = toy_config(OccupancyMode::k2d);
  Rng rng2(7);
  NetworkParams occ_params = init_params(occ_cfg, rng2);
  auto occ_named = occ_params.named_tensors();
  REQUIRE(occ_named.size() == (blocks + 1) * 6 + 2);
  CHECK(occ_named[6].first == "occupancy.weight");
}

TEST_CASE("the first encoder level consumes the aggregate directly") {
  // No stem block: encoder0 must see the raw concatenation width, i.e. C
  // without occupancy and C+Q with an active stream.
  Rng rng(7);
  ModelConfig plain = toy_config(OccupancyMode::kNone);
  NetworkParams p1 = init_params(plain, rng);
  CHECK(p1.encoder[0].a.weight.dim(2) == std::size_t(plain.pillar_channels));

  ModelConfig with_occ = toy_config(OccupancyMode::k2d);
  NetworkParams p2 = init_params(with_occ, rng);
  CHECK(p2.encoder[0].a.weight.dim(2) ==
        std::size_t(with_occ.pillar_channels + with_occ.occupancy_channels));
}

TEST_CASE("occupancy features transform the map shape and reject mismatches") {
  Rng rng(11);
  ModelConfig cfg = toy_config(OccupancyMode::k2d);
  NetworkParams params = init_params(cfg, rng);

  SUBCASE("2d: (W,H,1) -> (W,H,Q)") {
    ad::Tensor input = ad::Tensor::zeros({8, 8, 1});
    for (double& v : input.value()) v = uniform01(rng);
    ad::Tensor out = occupancy_features(input, params.occupancy, ad::Mode::kEval, nullptr);
    CHECK(out.shape() == ad::Shape{8, 8, std::size_t(cfg.occupancy_channels)});
  }
  SUBCASE("all-zero map with zero bias stays zero") {
    ad::Tensor input = ad::Tensor::zeros({8, 8, 1});
    ad::Tensor out = occupancy_features(input, params.occupancy, ad::Mode::kEval, nullptr);
    for (double v : out.value()) CHECK(v == 0.0);
  }
  SUBCASE("channel mismatch") {
    ad::Tensor input = ad::Tensor::zeros({8, 8, 3});
    CHECK_THROWS_AS(occupancy_features(input, params.occupancy, ad::Mode::kEval, nullptr),
                    ModeMismatch);
  }
  SUBCASE("3d: (W,H,Z) -> (W,H,Q)") {
    ModelConfig cfg3 = toy_config(OccupancyMode::k3d);
    Rng rng3(12);
    NetworkParams params3 = init_params(cfg3, rng3);
    ad::Tensor input = ad::Tensor::zeros({8, 8, std::size_t(cfg3.grid.depth())});
    ad::Tensor out = occupancy_features(input, params3.occupancy, ad::Mode::kEval, nullptr);
    CHECK(out.shape() == ad::Shape{8, 8, std::size_t(cfg3.occupancy_channels)});
  }
}

TEST_CASE("forward emits (W,H,K) logits under every occupancy mode") {
  for (OccupancyMode mode : {OccupancyMode::kNone, OccupancyMode::k2d, OccupancyMode::k3d}) {
    ModelConfig cfg = toy_config(mode);
    Rng rng(13);
    NetworkParams params = init_params(cfg, rng);

    Rng cloud_rng(14);
    PointCloud cloud = random_cloud(cloud_rng, cfg.grid, 200);
    Rng pillar_rng(15);
    ad::Tensor logits =
        forward(cloud, Vec3::Zero(), cfg, params, pillar_rng, ad::Mode::kEval, nullptr);
    CHECK(logits.shape() == ad::Shape{64, 32, std::size_t(kNumClasses)});
    for (double v : logits.value()) CHECK(std::isfinite(v));
  }
}

TEST_CASE("an empty cloud produces a spatially constant logit field") {
  for (OccupancyMode mode : {OccupancyMode::kNone, OccupancyMode::k2d}) {
    ModelConfig cfg = toy_config(mode);
    Rng rng(17);
    NetworkParams params = init_params(cfg, rng);

    PointCloud cloud;
    Rng pillar_rng(18);
    ad::Tensor logits =
        forward(cloud, Vec3::Zero(), cfg, params, pillar_rng, ad::Mode::kEval, nullptr);

    // Away from the border the padded zeros are invisible, so every cell
    // carries the same logit row; the symmetric crop keeps borders close too.
    const std::size_t classes = logits.dim(2);
    const double* reference = logits.value().data() + (32 * 32 + 16) * classes;
    for (std::size_t i = 0; i < 64; ++i) {
      for (std::size_t j = 0; j < 32; ++j) {
        for (std::size_t k = 0; k < classes; ++k) {
          CHECK(logits.value()[(i * 32 + j) * classes + k] ==
                doctest::Approx(reference[k]).epsilon(1e-9));
        }
      }
    }
  }
}

TEST_CASE("eval forward is bit-deterministic and point-order invariant") {
  ModelConfig cfg = toy_config(OccupancyMode::kNone);
  Rng rng(19);
  NetworkParams params = init_params(cfg, rng);

  Rng cloud_rng(20);
  PointCloud cloud = random_cloud(cloud_rng, cfg.grid, 150);
  PointCloud shuffled = cloud;
  Rng shuffle_rng(21);
  shuffle_in_place(shuffle_rng, shuffled.points);

  Rng r1(5), r2(5), r3(99);
  ad::Tensor a = forward(cloud, Vec3::Zero(), cfg, params, r1, ad::Mode::kEval, nullptr);
  ad::Tensor b = forward(cloud, Vec3::Zero(), cfg, params, r2, ad::Mode::kEval, nullptr);
  CHECK(a.value() == b.value());

  // Capacities exceed every pillar, so sampling never fires and reordering
  // the cloud only permutes rows under the max.
  ad::Tensor c = forward(shuffled, Vec3::Zero(), cfg, params, r3, ad::Mode::kEval, nullptr);
  CHECK(a.value() == c.value());
}

TEST_CASE("predict takes the per-cell argmax with smallest-id ties") {
  SUBCASE("one-hot logit row selects its class") {
    ad::Tensor logits = ad::Tensor::zeros({1, 1, std::size_t(kNumClasses)});
    logits.value()[0] = 1.0;
    Prediction pred = predict(logits);
    CHECK(pred.grid.at(0, 0) == 0);
  }
  SUBCASE("uniform logits tie-break to class 0 at probability 1/12") {
    ad::Tensor logits = ad::Tensor::full({2, 2, std::size_t(kNumClasses)}, 0.3);
    Prediction pred = predict(logits);
    for (std::uint8_t c : pred.grid.class_id) CHECK(c == 0);
    for (float p : pred.probabilities) {
      CHECK(double(p) == doctest::Approx(1.0 / 12.0).epsilon(1e-6));
    }
  }
  SUBCASE("two-way tie keeps the smaller id") {
    ad::Tensor logits = ad::Tensor::zeros({1, 1, std::size_t(kNumClasses)});
    logits.value()[3] = 2.0;
    logits.value()[7] = 2.0;
    Prediction pred = predict(logits);
    CHECK(pred.grid.at(0, 0) == 3);
  }
  SUBCASE("probabilities normalize per cell and use plane-major layout") {
    Rng rng(23);
    ad::Tensor logits = ad::Tensor::zeros({3, 2, std::size_t(kNumClasses)});
    for (double& v : logits.value()) v = uniform_range(rng, -2.0, 2.0);
    Prediction pred = predict(logits);

    ad::Tensor probs = ad::softmax_rows(logits, nullptr);
    const int W = 3, H = 2;
    for (int i = 0; i < W; ++i) {
      for (int j = 0; j < H; ++j) {
        double sum = 0.0;
        for (int k = 0; k < kNumClasses; ++k) {
          const double expected = probs.value()[(std::size_t(i) * H + j) * kNumClasses + k];
          const float stored = pred.probabilities[(std::size_t(k) * H + j) * W + i];
          CHECK(stored == float(expected));
          sum += expected;
        }
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("oracle: composite forward gradients match finite differences") {
  // Miniature network over an 8x4 grid so the full finite-difference sweep
  // stays cheap: every trainable element is probed centrally.
  ModelConfig cfg;
  cfg.grid.x_min = -4.0;
  cfg.grid.x_max = 4.0;
  cfg.grid.y_min = -2.0;
  cfg.grid.y_max = 2.0;
  cfg.grid.cell_xy = 1.0;
  cfg.pillar_channels = 3;
  cfg.occupancy_mode = OccupancyMode::kNone;
  cfg.unet_depth = 1;
  cfg.base_channels = 2;
  cfg.max_pillars = 64;
  cfg.max_points = 8;

  std::array<double, kNumClasses> class_weights;
  class_weights.fill(1.0);
  class_weights[kVehicle] = 2.0;

  bool checked = false;
  for (std::uint64_t seed = 1; seed <= 40 && !checked; ++seed) {
    Rng rng(seed);
    NetworkParams params = init_params(cfg, rng);

    Rng cloud_rng(seed + 100);
    PointCloud cloud = random_cloud(cloud_rng, cfg.grid, 25);
    std::vector<std::uint8_t> labels(8 * 4);
    for (std::uint8_t& l : labels) {
      l = uniform01(cloud_rng) < 0.25 ? kUnlabeled : std::uint8_t(uniform_index(cloud_rng, 12));
    }

    // Training-mode batchnorm advances the running buffers; the builder
    // restores them first so repeated evaluations see identical state.
    std::vector<std::vector<double>> snapshot;
    for (auto& buffer : params.buffers()) snapshot.push_back(buffer.value());

    auto build = [&](ad::Tape& tape) {
      auto buffers = params.buffers();
      for (std::size_t b = 0; b < buffers.size(); ++b) buffers[b].value() = snapshot[b];
      Rng pillar_rng(77);
      ad::Tensor logits =
          forward(cloud, Vec3::Zero(), cfg, params, pillar_rng, ad::Mode::kTrain, &tape);
      return ad::weighted_cross_entropy(logits, labels, class_weights, &tape);
    };

    if (!kink_margins_ok(build, 5e-3)) continue;
    // The batchnorm chain through this depth carries enough curvature that
    // eps = 1e-3 leaves ~5e-4 of second-order truncation error; the max
    // error scales as eps^2, so a 2.5e-4 step lands well under the bound
    // while staying 20x below the kink margins.
    const double err = ad::grad_check(build, params.parameters(), 2.5e-4);
    CHECK(err < 1e-4);
    checked = true;
  }
  REQUIRE(checked);
}
