#include "pillarseg/model.hpp"

#include <cmath>

#include "pillarseg/errors.hpp"
#include "pillarseg/raycast.hpp"

namespace pillarseg {

namespace {

ad::Tensor uniform_tensor(ad::Shape shape, double bound, Rng& rng) {
  ad::Tensor t = ad::Tensor::zeros(std::move(shape), true);
  for (double& v : t.value()) v = uniform_range(rng, -bound, bound);
  return t;
}

ConvBlock make_conv_block(int k, int cin, int cout, Rng& rng) {
  const double bound = std::sqrt(6.0 / (double(k) * k * cin + double(k) * k * cout));
  ConvBlock block;
  block.weight = uniform_tensor({std::size_t(k), std::size_t(k), std::size_t(cin),
                                 std::size_t(cout)},
                                bound, rng);
  block.bias = ad::Tensor::zeros({std::size_t(cout)}, true);
  block.gamma = ad::Tensor::full({std::size_t(cout)}, 1.0, true);
  block.beta = ad::Tensor::zeros({std::size_t(cout)}, true);
  block.running_mean = ad::Tensor::zeros({std::size_t(cout)});
  block.running_var = ad::Tensor::full({std::size_t(cout)}, 1.0);
  return block;
}

ad::Tensor conv_bn_relu(const ad::Tensor& x, ConvBlock& block, ad::Mode mode, ad::Tape* tape) {
  ad::Tensor y = ad::conv2d(x, block.weight, block.bias, tape);
  y = ad::batchnorm(y, block.gamma, block.beta, block.running_mean, block.running_var, nullptr,
                    mode, kBatchNormMomentum, kBatchNormEps, tape);
  return ad::relu(y, tape);
}

void push_block(std::vector<std::pair<std::string, ad::Tensor>>& out, const std::string& prefix,
                const ConvBlock& block) {
  out.emplace_back(prefix + ".weight", block.weight);
  out.emplace_back(prefix + ".bias", block.bias);
  out.emplace_back(prefix + ".gamma", block.gamma);
  out.emplace_back(prefix + ".beta", block.beta);
  out.emplace_back(prefix + ".running_mean", block.running_mean);
  out.emplace_back(prefix + ".running_var", block.running_var);
}

bool is_buffer_name(const std::string& name) {
  return name.ends_with(".running_mean") || name.ends_with(".running_var");
}

}  // namespace

void ModelConfig::validate() const {
  grid.validate();
  if (pillar_channels < 1) throw ConfigError("model: pillar_channels must be >= 1");
  if (occupancy_mode != OccupancyMode::kNone && occupancy_channels < 1) {
    throw ConfigError("model: occupancy_channels must be >= 1 when the stream is active");
  }
  if (unet_depth < 1) throw ConfigError("model: unet_depth must be >= 1");
  if (base_channels < 1) throw ConfigError("model: base_channels must be >= 1");
  if (num_classes < 2) throw ConfigError("model: num_classes must be >= 2");
  if (max_pillars < 1) throw ConfigError("model: max_pillars must be >= 1");
  if (max_points < 1) throw ConfigError("model: max_points must be >= 1");
}

std::vector<std::pair<std::string, ad::Tensor>> NetworkParams::named_tensors() {
  std::vector<std::pair<std::string, ad::Tensor>> out;
  out.emplace_back("pointnet.weight", pointnet.weight);
  out.emplace_back("pointnet.bias", pointnet.bias);
  out.emplace_back("pointnet.gamma", pointnet.gamma);
  out.emplace_back("pointnet.beta", pointnet.beta);
  out.emplace_back("pointnet.running_mean", pointnet.running_mean);
  out.emplace_back("pointnet.running_var", pointnet.running_var);
  if (has_occupancy) push_block(out, "occupancy", occupancy);
  for (std::size_t l = 0; l < encoder.size(); ++l) {
    const std::string prefix = "encoder" + std::to_string(l);
    push_block(out, prefix + ".a", encoder[l].a);
    push_block(out, prefix + ".b", encoder[l].b);
  }
  push_block(out, "bottleneck.a", bottleneck.a);
  push_block(out, "bottleneck.b", bottleneck.b);
  for (std::size_t l = 0; l < decoder.size(); ++l) {
    const std::string prefix = "decoder" + std::to_string(l);
    push_block(out, prefix + ".up", decoder[l].up);
    push_block(out, prefix + ".a", decoder[l].conv.a);
    push_block(out, prefix + ".b", decoder[l].conv.b);
  }
  out.emplace_back("head.weight", head_weight);
  out.emplace_back("head.bias", head_bias);
  return out;
}

std::vector<ad::Tensor> NetworkParams::parameters() {
  std::vector<ad::Tensor> out;
  for (auto& [name, tensor] : named_tensors()) {
    if (!is_buffer_name(name)) out.push_back(tensor);
  }
  return out;
}

std::vector<ad::Tensor> NetworkParams::buffers() {
  std::vector<ad::Tensor> out;
  for (auto& [name, tensor] : named_tensors()) {
    if (is_buffer_name(name)) out.push_back(tensor);
  }
  return out;
}

NetworkParams init_params(const ModelConfig& cfg, Rng& rng) {
  cfg.validate();
  NetworkParams params;

  const int c = cfg.pillar_channels;
  const double pn_bound = std::sqrt(6.0 / (double(kPointFeatureDim) + c));
  params.pointnet.weight = uniform_tensor({kPointFeatureDim, std::size_t(c)}, pn_bound, rng);
  params.pointnet.bias = ad::Tensor::zeros({std::size_t(c)}, true);
  params.pointnet.gamma = ad::Tensor::full({std::size_t(c)}, 1.0, true);
  params.pointnet.beta = ad::Tensor::zeros({std::size_t(c)}, true);
  params.pointnet.running_mean = ad::Tensor::zeros({std::size_t(c)});
  params.pointnet.running_var = ad::Tensor::full({std::size_t(c)}, 1.0);

  params.has_occupancy = cfg.occupancy_mode != OccupancyMode::kNone;
  if (params.has_occupancy) {
    const int occ_in = cfg.occupancy_mode == OccupancyMode::k2d ? 1 : cfg.grid.depth();
    params.occupancy = make_conv_block(3, occ_in, cfg.occupancy_channels, rng);
  }

  const int aggregate = c + (params.has_occupancy ? cfg.occupancy_channels : 0);
  int in_ch = aggregate;
  for (int l = 0; l < cfg.unet_depth; ++l) {
    const int out_ch = cfg.base_channels << l;
    NetworkParams::DoubleConv level;
    level.a = make_conv_block(3, in_ch, out_ch, rng);
    level.b = make_conv_block(3, out_ch, out_ch, rng);
    params.encoder.push_back(std::move(level));
    in_ch = out_ch;
  }
  const int bottom = cfg.base_channels << cfg.unet_depth;
  params.bottleneck.a = make_conv_block(3, in_ch, bottom, rng);
  params.bottleneck.b = make_conv_block(3, bottom, bottom, rng);

  in_ch = bottom;
  for (int l = cfg.unet_depth - 1; l >= 0; --l) {
    const int out_ch = cfg.base_channels << l;
    NetworkParams::DecoderLevel level;
    level.up = make_conv_block(3, in_ch, out_ch, rng);
    level.conv.a = make_conv_block(3, 2 * out_ch, out_ch, rng);
    level.conv.b = make_conv_block(3, out_ch, out_ch, rng);
    params.decoder.push_back(std::move(level));
    in_ch = out_ch;
  }

  const double head_bound = std::sqrt(6.0 / (double(cfg.base_channels) + cfg.num_classes));
  params.head_weight = uniform_tensor(
      {1, 1, std::size_t(cfg.base_channels), std::size_t(cfg.num_classes)}, head_bound, rng);
  params.head_bias = ad::Tensor::zeros({std::size_t(cfg.num_classes)}, true);
  return params;
}

ad::Tensor occupancy_features(const ad::Tensor& input, ConvBlock& block, ad::Mode mode,
                              ad::Tape* tape) {
  if (input.rank() != 3 || input.dim(2) != block.weight.dim(2)) {
    throw ModeMismatch("occupancy_features: input channels do not match the configured stream");
  }
  return conv_bn_relu(input, block, mode, tape);
}

ad::Tensor forward(const PointCloud& cloud, const Vec3& sensor_origin, const ModelConfig& cfg,
                   NetworkParams& params, Rng& rng, ad::Mode mode, ad::Tape* tape) {
  cfg.validate();
  const int width = cfg.grid.width();
  const int height = cfg.grid.height();

  PillarTensor pillars = build_pillars(cloud, cfg.grid, cfg.max_pillars, cfg.max_points, rng);
  ad::Tensor features = pointnet_pillar_features(pillars, params.pointnet, mode, tape);
  ad::Tensor canvas = scatter(features, pillars.coords, cfg.grid, tape);

  if (cfg.occupancy_mode == OccupancyMode::k2d) {
    const ObservabilityMap map = observability_map(cloud, sensor_origin, cfg.grid);
    std::vector<double> values(std::size_t(width) * height);
    for (int i = 0; i < width; ++i) {
      for (int j = 0; j < height; ++j) {
        values[std::size_t(i) * height + j] = double(map.transmissions[map.index(i, j)]);
      }
    }
    ad::Tensor occ_in = ad::Tensor::from_values({std::size_t(width), std::size_t(height), 1},
                                                std::move(values));
    canvas = ad::concat_channels(canvas, occupancy_features(occ_in, params.occupancy, mode, tape),
                                 tape);
  } else if (cfg.occupancy_mode == OccupancyMode::k3d) {
    const VoxelOccupancy vox = voxel_occupancy(cloud, sensor_origin, cfg.grid);
    const int planes = cfg.grid.depth();
    std::vector<double> values(std::size_t(width) * height * planes);
    for (int i = 0; i < width; ++i) {
      for (int j = 0; j < height; ++j) {
        for (int k = 0; k < planes; ++k) {
          values[(std::size_t(i) * height + j) * planes + k] = double(vox.probability[vox.index(i, j, k)]);
        }
      }
    }
    ad::Tensor occ_in = ad::Tensor::from_values(
        {std::size_t(width), std::size_t(height), std::size_t(planes)}, std::move(values));
    canvas = ad::concat_channels(canvas, occupancy_features(occ_in, params.occupancy, mode, tape),
                                 tape);
  }

  // Zero-pad the aggregate symmetrically so every level pools evenly, then
  // crop the logits back at the end.
  const int mult = 1 << cfg.unet_depth;
  const int padded_w = (width + mult - 1) / mult * mult;
  const int padded_h = (height + mult - 1) / mult * mult;
  if (padded_w % mult != 0 || padded_h % mult != 0) {
    throw DivisibilityError("forward: canvas not divisible by 2^depth after padding");
  }
  const int lo_i = (padded_w - width) / 2;
  const int hi_i = padded_w - width - lo_i;
  const int lo_j = (padded_h - height) / 2;
  const int hi_j = padded_h - height - lo_j;
  ad::Tensor x = canvas;
  if (lo_i || hi_i || lo_j || hi_j) x = ad::pad_spatial(x, lo_i, hi_i, lo_j, hi_j, tape);

  std::vector<ad::Tensor> skips;
  for (int l = 0; l < cfg.unet_depth; ++l) {
    x = conv_bn_relu(x, params.encoder[l].a, mode, tape);
    x = conv_bn_relu(x, params.encoder[l].b, mode, tape);
    skips.push_back(x);
    x = ad::maxpool2(x, tape);
  }
  x = conv_bn_relu(x, params.bottleneck.a, mode, tape);
  x = conv_bn_relu(x, params.bottleneck.b, mode, tape);
  for (int l = cfg.unet_depth - 1; l >= 0; --l) {
    NetworkParams::DecoderLevel& level = params.decoder[std::size_t(cfg.unet_depth - 1 - l)];
    x = ad::upsample2(x, tape);
    x = conv_bn_relu(x, level.up, mode, tape);
    x = ad::concat_channels(x, skips[std::size_t(l)], tape);
    x = conv_bn_relu(x, level.conv.a, mode, tape);
    x = conv_bn_relu(x, level.conv.b, mode, tape);
  }
  x = ad::conv2d(x, params.head_weight, params.head_bias, tape);
  if (lo_i || hi_i || lo_j || hi_j) x = ad::crop_spatial(x, lo_i, lo_j, width, height, tape);
  return x;
}

Prediction predict(const ad::Tensor& logits) {
  const int width = int(logits.dim(0));
  const int height = int(logits.dim(1));
  const int classes = int(logits.dim(2));

  ad::Tensor probs = ad::softmax_rows(logits, nullptr);
  Prediction out;
  out.grid = SemanticGrid(width, height);
  out.probabilities.resize(logits.numel());
  for (int i = 0; i < width; ++i) {
    for (int j = 0; j < height; ++j) {
      const double* row = probs.value().data() + (std::size_t(i) * height + j) * classes;
      int best = 0;
      for (int k = 1; k < classes; ++k) {
        if (row[k] > row[best]) best = k;  // strict: ties keep the smaller id
      }
      out.grid.at(i, j) = std::uint8_t(best);
      for (int k = 0; k < classes; ++k) {
        out.probabilities[(std::size_t(k) * height + j) * width + i] = float(row[k]);
      }
    }
  }
  return out;
}

}  // namespace pillarseg
