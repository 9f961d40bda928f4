// Command-line front end: ground-truth generation, grid maps, training,
// evaluation, inference and rendering over the on-disk dataset formats.
// Exit codes: 0 success, 1 I/O failure, 2 usage or malformed input,
// 3 numeric failure (diverged training).
#include <array>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "pillarseg/checkpoint.hpp"
#include "pillarseg/class_table.hpp"
#include "pillarseg/config.hpp"
#include "pillarseg/errors.hpp"
#include "pillarseg/groundtruth.hpp"
#include "pillarseg/kitti_io.hpp"
#include "pillarseg/metrics.hpp"
#include "pillarseg/model.hpp"
#include "pillarseg/parallel.hpp"
#include "pillarseg/raycast.hpp"
#include "pillarseg/sgrid.hpp"
#include "pillarseg/synthetic.hpp"
#include "pillarseg/trainer.hpp"

namespace fs = std::filesystem;
using namespace pillarseg;

namespace {

std::string scan_stem(std::size_t index) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%06zu", index);
  return buf;
}

PipelineConfig config_or_default(const std::string& path) {
  return path.empty() ? default_config() : load_config(path);
}

PointCloud load_scan(const fs::path& path) { return parse_scan(read_file(path)); }

struct LoadedSequence {
  std::vector<PointCloud> scans;
  std::vector<LabelSet> labels;
  std::vector<Pose> poses;
};

LoadedSequence load_sequence(const fs::path& dir, bool with_labels, bool with_poses) {
  SequencePaths paths = discover_sequence(dir, with_labels, with_poses);
  ClassTable table = ClassTable::default_table();
  LoadedSequence data;
  for (std::size_t n = 0; n < paths.scans.size(); ++n) {
    data.scans.push_back(load_scan(paths.scans[n]));
    if (with_labels) data.labels.push_back(parse_labels(read_file(paths.labels[n]), table));
  }
  if (with_poses)
    data.poses = parse_poses(read_text_file(paths.poses), read_text_file(paths.calib));
  return data;
}

// --- gt ---

struct GtOptions {
  std::string mode = "sparse";
  std::string sequence;
  std::string out;
  std::string config;
  int scan = -1;
  bool all = false;
};

void run_gt(const GtOptions& opt) {
  PipelineConfig cfg = config_or_default(opt.config);
  const bool dense = opt.mode == "dense";
  LoadedSequence data = load_sequence(opt.sequence, true, dense);
  if (!opt.all && (opt.scan < 0 || std::size_t(opt.scan) >= data.scans.size()))
    throw FormatError("scan index " + std::to_string(opt.scan) + " out of range (have " +
                      std::to_string(data.scans.size()) + " scans)");
  fs::create_directories(opt.out);

  std::vector<std::size_t> targets;
  if (opt.all)
    for (std::size_t n = 0; n < data.scans.size(); ++n) targets.push_back(n);
  else
    targets.push_back(std::size_t(opt.scan));

  GtWeights weights = default_gt_weights();
  parallel_for(targets.size(), [&](std::size_t t) {
    std::size_t idx = targets[t];
    SemanticGrid grid =
        dense ? dense_gt(data.scans, data.labels, data.poses, idx, cfg.grid, weights,
                         cfg.neighbors)
              : sparse_gt(data.scans[idx], data.labels[idx], cfg.grid, weights);
    write_file_atomic(fs::path(opt.out) / (scan_stem(idx) + ".sgrid"),
                      serialize_sgrid(sgrid_from_semantic(grid)));
  });
}

// --- gridmap ---

struct GridmapOptions {
  std::string scan;
  std::string kind = "observability";
  std::string out;
  std::string config;
};

void run_gridmap(const GridmapOptions& opt) {
  PipelineConfig cfg = config_or_default(opt.config);
  PointCloud cloud = load_scan(opt.scan);
  SgridFile file;
  if (opt.kind == "observability")
    file = sgrid_from_observability(observability_map(cloud, Vec3::Zero(), cfg.grid));
  else if (opt.kind == "voxel")
    file = sgrid_from_voxels(voxel_occupancy(cloud, Vec3::Zero(), cfg.grid));
  else
    throw FormatError("unknown gridmap kind: " + opt.kind);
  write_file_atomic(opt.out, serialize_sgrid(file));
}

// --- train ---

struct TrainOptions {
  std::string data;
  std::string config;
  std::string out;
  std::string resume;
};

void run_train(const TrainOptions& opt) {
  PipelineConfig cfg = load_config(opt.config);
  const std::string cfg_text = serialize_config(cfg);
  const bool dense = cfg.train.mode == TrainMode::kDense;
  LoadedSequence data = load_sequence(opt.data, true, dense);

  std::vector<TrainSample> dataset;
  for (std::size_t n = 0; n < data.scans.size(); ++n) {
    if (dense) {
      AggregateResult agg =
          aggregate_cloud(data.scans, data.labels, data.poses, n, cfg.neighbors);
      dataset.push_back({std::move(agg.cloud), std::move(agg.labels)});
    } else {
      dataset.push_back({data.scans[n], data.labels[n]});
    }
  }

  Rng init_rng(cfg.train.seed);
  NetworkParams params = init_params(cfg.model, init_rng);
  std::vector<TensorRecord> resume_records;
  if (!opt.resume.empty()) {
    resume_records = parse_records(read_file(opt.resume));
    restore_params(params, resume_records);
  }

  fs::create_directories(opt.out);
  auto on_start = [&](NetworkParams& p, Adam& optimizer) {
    if (!resume_records.empty() && has_optimizer_state(resume_records))
      restore_optimizer(optimizer, p, resume_records);
  };
  auto on_epoch = [&](const EpochLog& log, NetworkParams& p, Adam& optimizer) {
    Bytes bytes = save_checkpoint(p, &optimizer, cfg_text);
    char name[32];
    std::snprintf(name, sizeof name, "epoch_%04d.psnc", log.epoch);
    write_file_atomic(fs::path(opt.out) / name, bytes);
    write_file_atomic(fs::path(opt.out) / "latest.psnc", bytes);
    std::printf("%d\t%.17g\t%.17g\n", log.epoch, log.loss, log.miou);
    std::fflush(stdout);
  };

  TrainResult result = train(dataset, cfg.train, cfg.model, params, on_epoch, on_start);
  std::string log_text = format_metrics_log(result);
  write_file_atomic(fs::path(opt.out) / "metrics.tsv",
                    Bytes(log_text.begin(), log_text.end()));
}

// --- eval ---

struct EvalOptions {
  std::string pred;
  std::string gt;
  std::string protocol = "sparse";
  std::string obs;
};

std::map<std::string, fs::path> list_sgrids(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw FormatError("missing directory " + dir.string());
  std::map<std::string, fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.path().extension() == ".sgrid") files[entry.path().stem().string()] = entry.path();
  if (files.empty()) throw FormatError("no .sgrid files in " + dir.string());
  return files;
}

void run_eval(const EvalOptions& opt) {
  const bool dense = opt.protocol == "dense";
  if (opt.protocol != "sparse" && !dense)
    throw FormatError("protocol must be sparse or dense");
  if (dense && opt.obs.empty())
    throw MissingObservability("the dense protocol needs --obs <dir>");

  auto preds = list_sgrids(opt.pred);
  auto gts = list_sgrids(opt.gt);
  std::vector<SemanticGrid> pred_grids, gt_grids;
  std::vector<ObservedMask> masks;
  for (const auto& [stem, path] : preds) {
    auto gt_it = gts.find(stem);
    if (gt_it == gts.end()) throw FormatError("no ground-truth grid for " + stem);
    pred_grids.push_back(semantic_from_sgrid(parse_sgrid(read_file(path))));
    gt_grids.push_back(semantic_from_sgrid(parse_sgrid(read_file(gt_it->second))));
    if (dense) {
      fs::path obs_path = fs::path(opt.obs) / (stem + ".sgrid");
      ObservabilityMap map = observability_from_sgrid(parse_sgrid(read_file(obs_path)));
      masks.push_back(observed_mask(map));
    }
  }
  EvalReport report = evaluate(pred_grids, gt_grids,
                               dense ? EvalProtocol::kDense : EvalProtocol::kSparse,
                               dense ? &masks : nullptr);
  std::cout << format_report(report);
}

// --- infer ---

struct InferOptions {
  std::string checkpoint;
  std::string scan;
  std::string out;
  std::string probs;
};

void run_infer(const InferOptions& opt) {
  std::vector<TensorRecord> records = parse_records(read_file(opt.checkpoint));
  std::string cfg_text = checkpoint_config_text(records);
  if (cfg_text.empty())
    throw FormatError("checkpoint carries no embedded config");
  PipelineConfig cfg = parse_config(cfg_text);

  Rng rng(cfg.train.seed);
  NetworkParams params = init_params(cfg.model, rng);
  restore_params(params, records);

  PointCloud cloud = load_scan(opt.scan);
  PointCloud cropped = crop_cloud(cloud, nullptr, cfg.grid).cloud;
  ad::Tensor logits =
      forward(cropped, Vec3::Zero(), cfg.model, params, rng, ad::Mode::kEval, nullptr);
  Prediction prediction = predict(logits);
  write_file_atomic(opt.out, serialize_sgrid(sgrid_from_semantic(prediction.grid)));
  if (!opt.probs.empty()) {
    SgridFile probs = sgrid_from_reals(prediction.grid.width, prediction.grid.height,
                                       cfg.model.num_classes, prediction.probabilities);
    write_file_atomic(opt.probs, serialize_sgrid(probs));
  }
}

// --- render ---

struct RenderOptions {
  std::string sgrid;
  std::string out;
  std::string obs;
  std::string palette;
};

void run_render(const RenderOptions& opt) {
  SgridFile file = parse_sgrid(read_file(opt.sgrid));
  if (file.dtype != SgridType::kClassId || file.depth != 1)
    throw FormatError("render expects a single-plane class-id grid");
  SemanticGrid grid = semantic_from_sgrid(file);

  auto palette = ClassTable::default_table().palette;
  if (!opt.palette.empty()) {
    // Palette override: one "r g b" line per class id 0..11.
    std::istringstream lines(read_text_file(opt.palette));
    for (int k = 0; k < kNumClasses; ++k) {
      int r, g, b;
      if (!(lines >> r >> g >> b))
        throw FormatError("palette file needs " + std::to_string(kNumClasses) + " r g b rows");
      palette[k] = {std::uint8_t(r), std::uint8_t(g), std::uint8_t(b)};
    }
  }

  ObservedMask mask;
  if (!opt.obs.empty())
    mask = observed_mask(observability_from_sgrid(parse_sgrid(read_file(opt.obs))));

  const int w = grid.width, h = grid.height;
  std::string header = "P6\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  Bytes out(header.begin(), header.end());
  // Image rows run top to bottom; put +y up so the map reads like a chart.
  for (int row = 0; row < h; ++row) {
    int j = h - 1 - row;
    for (int i = 0; i < w; ++i) {
      std::uint8_t id = grid.at(i, j);
      std::array<std::uint8_t, 3> rgb = {0, 0, 0};
      if (id != kUnlabeled) rgb = palette[id];
      if (!opt.obs.empty() && !mask.observed[mask.index(i, j)])
        for (auto& c : rgb) c = std::uint8_t(c / 3);
      out.insert(out.end(), rgb.begin(), rgb.end());
    }
  }
  write_file_atomic(opt.out, out);
}

// --- synth ---

struct SynthOptions {
  std::string out;
  std::string kind = "toy";
  std::size_t scenes = 4;
  std::uint64_t seed = 1;
  double spacing = 2.0;
  double extent = 10.0;
  std::size_t boxes = 6;
};

void run_synth(const SynthOptions& opt) {
  SequenceData data;
  if (opt.kind == "toy") {
    // Independent hand-sized scenes, one per scan, all from the origin.
    for (std::size_t n = 0; n < opt.scenes; ++n) {
      RenderedScan scan = render_scan(toy_scene(int(n % 4)), Pose{});
      data.scans.push_back(std::move(scan.cloud));
      data.labels.push_back(std::move(scan.labels));
      data.poses.push_back(Pose{});
    }
  } else if (opt.kind == "random") {
    // One static scene watched from a moving sensor: the layout for dense
    // ground-truth aggregation.
    SceneSpec scene = random_scene(opt.seed, opt.extent, opt.boxes);
    data = render_sequence(scene, straight_trajectory(opt.scenes, opt.spacing));
  } else {
    throw FormatError("unknown synth kind: " + opt.kind);
  }
  write_sequence(data, opt.out);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Pillar-feature semantic grid pipeline"};
  app.require_subcommand(1);

  GtOptions gt_opt;
  CLI::App* gt_cmd = app.add_subcommand("gt", "Rasterize ground-truth class grids");
  gt_cmd->add_option("--mode", gt_opt.mode, "sparse or dense")
      ->check(CLI::IsMember({"sparse", "dense"}));
  gt_cmd->add_option("--sequence", gt_opt.sequence, "sequence directory")->required();
  gt_cmd->add_option("--out", gt_opt.out, "output directory")->required();
  gt_cmd->add_option("--config", gt_opt.config, "config file");
  gt_cmd->add_option("--scan", gt_opt.scan, "scan index");
  gt_cmd->add_flag("--all", gt_opt.all, "process every scan");

  GridmapOptions gm_opt;
  CLI::App* gm_cmd = app.add_subcommand("gridmap", "Cast rays into observability / voxel maps");
  gm_cmd->add_option("--scan", gm_opt.scan, "scan file")->required();
  gm_cmd->add_option("--kind", gm_opt.kind, "observability or voxel")
      ->check(CLI::IsMember({"observability", "voxel"}));
  gm_cmd->add_option("--out", gm_opt.out, "output .sgrid file")->required();
  gm_cmd->add_option("--config", gm_opt.config, "config file");

  TrainOptions train_opt;
  CLI::App* train_cmd = app.add_subcommand("train", "Train on a labelled sequence");
  train_cmd->add_option("--data", train_opt.data, "sequence directory")->required();
  train_cmd->add_option("--config", train_opt.config, "config file")->required();
  train_cmd->add_option("--out", train_opt.out, "checkpoint/metrics directory")->required();
  train_cmd->add_option("--resume", train_opt.resume, "checkpoint to continue from");

  EvalOptions eval_opt;
  CLI::App* eval_cmd = app.add_subcommand("eval", "Score predictions against ground truth");
  eval_cmd->add_option("--pred", eval_opt.pred, "prediction .sgrid directory")->required();
  eval_cmd->add_option("--gt", eval_opt.gt, "ground-truth .sgrid directory")->required();
  eval_cmd->add_option("--protocol", eval_opt.protocol, "sparse or dense")
      ->check(CLI::IsMember({"sparse", "dense"}));
  eval_cmd->add_option("--obs", eval_opt.obs, "observability .sgrid directory (dense)");

  InferOptions infer_opt;
  CLI::App* infer_cmd = app.add_subcommand("infer", "Predict a class grid for one scan");
  infer_cmd->add_option("--checkpoint", infer_opt.checkpoint, "trained .psnc file")->required();
  infer_cmd->add_option("--scan", infer_opt.scan, "scan file")->required();
  infer_cmd->add_option("--out", infer_opt.out, "output class .sgrid")->required();
  infer_cmd->add_option("--probs", infer_opt.probs, "optional probability .sgrid");

  RenderOptions render_opt;
  CLI::App* render_cmd = app.add_subcommand("render", "Draw a class grid as a P6 pixmap");
  render_cmd->add_option("--sgrid", render_opt.sgrid, "class .sgrid file")->required();
  render_cmd->add_option("--out", render_opt.out, "output .ppm file")->required();
  render_cmd->add_option("--obs", render_opt.obs, "observability .sgrid (darkens unobserved)");
  render_cmd->add_option("--palette", render_opt.palette, "palette override (12 r g b rows)");

  SynthOptions synth_opt;
  CLI::App* synth_cmd = app.add_subcommand("synth", "Generate a synthetic labelled sequence");
  synth_cmd->add_option("--out", synth_opt.out, "sequence directory")->required();
  synth_cmd->add_option("--kind", synth_opt.kind, "toy or random")
      ->check(CLI::IsMember({"toy", "random"}));
  synth_cmd->add_option("--scenes", synth_opt.scenes, "number of scans");
  synth_cmd->add_option("--seed", synth_opt.seed, "scene layout seed");
  synth_cmd->add_option("--spacing", synth_opt.spacing, "pose spacing in meters (random)");
  synth_cmd->add_option("--extent", synth_opt.extent, "scene half-extent in meters (random)");
  synth_cmd->add_option("--boxes", synth_opt.boxes, "box count (random)");

  try {
    app.parse(argc, argv);
    if (gt_cmd->parsed()) run_gt(gt_opt);
    if (gm_cmd->parsed()) run_gridmap(gm_opt);
    if (train_cmd->parsed()) run_train(train_opt);
    if (eval_cmd->parsed()) run_eval(eval_opt);
    if (infer_cmd->parsed()) run_infer(infer_opt);
    if (render_cmd->parsed()) run_render(render_opt);
    if (synth_cmd->parsed()) run_synth(synth_opt);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  } catch (const IoFailure& e) {
    std::cerr << e.what() << "\n";
    return 1;
  } catch (const DivergedLoss& e) {
    std::cerr << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << e.what() << "\n";
    return 2;
  }
  return 0;
}
