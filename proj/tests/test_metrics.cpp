#include "pillarseg/metrics.hpp"

#include <algorithm>
#include <set>
#include <string>
#include <vector>

#include "doctest.h"
#include "pillarseg/errors.hpp"
#include "pillarseg/rng.hpp"

using namespace pillarseg;

namespace {

SemanticGrid random_grid(Rng& rng, int w, int h, double unlabeled_fraction) {
  SemanticGrid grid(w, h);
  for (std::uint8_t& c : grid.class_id) {
    c = uniform01(rng) < unlabeled_fraction ? kUnlabeled : std::uint8_t(uniform_index(rng, 12));
  }
  return grid;
}

ObservedMask random_mask(Rng& rng, int w, int h, double observed_fraction) {
  ObservedMask mask;
  mask.width = w;
  mask.height = h;
  mask.observed.resize(std::size_t(w) * h);
  for (std::uint8_t& o : mask.observed) o = uniform01(rng) < observed_fraction ? 1 : 0;
  return mask;
}

}  // namespace

TEST_CASE("accumulate counts labeled cells on the diagonal for perfect predictions") {
  SemanticGrid gt(5, 2);
  for (int n = 0; n < 10; ++n) gt.class_id[n] = std::uint8_t(n % 12);
  SemanticGrid pred = gt;

  ConfusionMatrix cm;
  accumulate(cm, pred, gt, nullptr);
  CHECK(cm.total() == 10);
  std::uint64_t diagonal = 0;
  for (int k = 0; k < kNumClasses; ++k) diagonal += cm.at(k, k);
  CHECK(diagonal == 10);
}

TEST_CASE("accumulate skips sentinel ground truth and unobserved cells") {
  SemanticGrid gt(4, 1);
  gt.class_id = {kRoad, kUnlabeled, kVehicle, kRoad};
  SemanticGrid pred(4, 1);
  pred.class_id = {kRoad, kRoad, kRoad, kSidewalk};

  ConfusionMatrix cm;
  SUBCASE("all-sentinel gt leaves the matrix empty") {
    SemanticGrid blank(4, 1);
    accumulate(cm, pred, blank, nullptr);
    CHECK(cm.total() == 0);
  }
  SUBCASE("without a mask every labeled cell counts") {
    accumulate(cm, pred, gt, nullptr);
    CHECK(cm.total() == 3);
    CHECK(cm.at(kRoad, kRoad) == 1);
    CHECK(cm.at(kVehicle, kRoad) == 1);
    CHECK(cm.at(kRoad, kSidewalk) == 1);
  }
  SUBCASE("the mask gates which labeled cells count") {
    ObservedMask mask;
    mask.width = 4;
    mask.height = 1;
    mask.observed = {1, 1, 0, 1};
    accumulate(cm, pred, gt, &mask);
    CHECK(cm.total() == 2);  // cells 0 and 3; 1 is sentinel, 2 unobserved
    CHECK(cm.at(kVehicle, kRoad) == 0);
  }
}

TEST_CASE("accumulate rejects shape mismatches and sentinel predictions") {
  SemanticGrid gt(3, 2);
  gt.class_id[0] = kRoad;
  SUBCASE("differing shapes") {
    SemanticGrid pred(2, 3);
    ConfusionMatrix cm;
    CHECK_THROWS_AS(accumulate(cm, pred, gt, nullptr), ShapeMismatch);
  }
  SUBCASE("sentinel prediction on a counted cell") {
    SemanticGrid pred(3, 2);  // defaults to all-255
    ConfusionMatrix cm;
    CHECK_THROWS_AS(accumulate(cm, pred, gt, nullptr), FormatError);
  }
}

TEST_CASE("iou matches the stated arithmetic examples") {
  ConfusionMatrix cm;
  // Class 0: TP=8; FP=2 come from gt class 1 predicted as 0; FN=0.
  cm.at(0, 0) = 8;
  cm.at(1, 0) = 2;
  ClassIou c0 = iou(cm, 0);
  CHECK(c0.present);
  CHECK(c0.value == doctest::Approx(0.8).epsilon(1e-12));

  // Class 2: TP=0, FP=0, FN=5 (gt 2 predicted as 0).
  cm.at(2, 0) = 5;
  ClassIou c2 = iou(cm, 2);
  CHECK(c2.present);
  CHECK(c2.value == 0.0);

  // Class 7 never occurs on either axis.
  ClassIou c7 = iou(cm, 7);
  CHECK_FALSE(c7.present);
  CHECK(c7.value == 1.0);
}

TEST_CASE("miou averages only the present classes") {
  ConfusionMatrix cm;
  // Class 0: TP=8, FP=2 -> 0.8. Class 1: TP=2, FN from (1,0) -> 2/(2+0+2)=0.5.
  cm.at(0, 0) = 8;
  cm.at(1, 0) = 2;
  cm.at(1, 1) = 2;
  CHECK(miou(cm) == doctest::Approx((0.8 + 0.5) / 2.0).epsilon(1e-12));

  ConfusionMatrix empty;
  CHECK(miou(empty) == 0.0);

  ConfusionMatrix perfect;
  perfect.at(3, 3) = 42;
  perfect.at(9, 9) = 7;
  CHECK(miou(perfect) == 1.0);
}

TEST_CASE("oracle: confusion-matrix iou equals the set-based intersection over union") {
  Rng rng(101);
  for (int trial = 0; trial < 100; ++trial) {
    const int w = 6, h = 5;
    SemanticGrid gt = random_grid(rng, w, h, 0.3);
    SemanticGrid pred = random_grid(rng, w, h, 0.0);
    ObservedMask mask = random_mask(rng, w, h, 0.7);

    ConfusionMatrix cm;
    accumulate(cm, pred, gt, &mask);

    for (int k = 0; k < kNumClasses; ++k) {
      // Oracle over explicit cell sets, restricted to evaluated cells.
      std::set<int> gset, pset;
      for (int cell = 0; cell < w * h; ++cell) {
        if (gt.class_id[cell] == kUnlabeled || !mask.observed[cell]) continue;
        if (gt.class_id[cell] == k) gset.insert(cell);
        if (pred.class_id[cell] == k) pset.insert(cell);
      }
      std::vector<int> inter, uni;
      std::set_intersection(gset.begin(), gset.end(), pset.begin(), pset.end(),
                            std::back_inserter(inter));
      std::set_union(gset.begin(), gset.end(), pset.begin(), pset.end(), std::back_inserter(uni));

      ClassIou got = iou(cm, k);
      if (uni.empty()) {
        CHECK_FALSE(got.present);
        CHECK(got.value == 1.0);
      } else {
        CHECK(got.present);
        CHECK(got.value == double(inter.size()) / double(uni.size()));
      }
    }
  }
}

TEST_CASE("evaluate micro-accumulates across scans") {
  Rng rng(111);
  std::vector<SemanticGrid> preds, gts;
  for (int n = 0; n < 4; ++n) {
    preds.push_back(random_grid(rng, 8, 8, 0.0));
    gts.push_back(random_grid(rng, 8, 8, 0.4));
  }

  EvalReport report = evaluate(preds, gts, EvalProtocol::kSparse, nullptr);

  // Oracle: accumulate all scans into one matrix by hand.
  ConfusionMatrix expected;
  for (std::size_t n = 0; n < preds.size(); ++n) accumulate(expected, preds[n], gts[n], nullptr);
  CHECK(report.cm.counts == expected.counts);
  CHECK(report.mean_iou == miou(expected));
  CHECK(report.evaluated_cells == expected.total());

  // Permuting the scan order cannot change the result.
  std::vector<SemanticGrid> rpreds(preds.rbegin(), preds.rend());
  std::vector<SemanticGrid> rgts(gts.rbegin(), gts.rend());
  EvalReport reversed = evaluate(rpreds, rgts, EvalProtocol::kSparse, nullptr);
  CHECK(reversed.cm.counts == report.cm.counts);
  CHECK(reversed.mean_iou == report.mean_iou);

  // An extra all-sentinel gt scan is a no-op.
  preds.push_back(random_grid(rng, 8, 8, 0.0));
  gts.push_back(SemanticGrid(8, 8));
  EvalReport padded = evaluate(preds, gts, EvalProtocol::kSparse, nullptr);
  CHECK(padded.cm.counts == report.cm.counts);
}

TEST_CASE("evaluate bounds: per-class iou brackets the mean") {
  Rng rng(121);
  std::vector<SemanticGrid> preds{random_grid(rng, 10, 10, 0.0)};
  std::vector<SemanticGrid> gts{random_grid(rng, 10, 10, 0.2)};
  EvalReport report = evaluate(preds, gts, EvalProtocol::kSparse, nullptr);

  double lo = 1.0, hi = 0.0;
  for (int k = 0; k < kNumClasses; ++k) {
    const ClassIou& c = report.per_class[k];
    CHECK(c.value >= 0.0);
    CHECK(c.value <= 1.0);
    if (c.present) {
      lo = std::min(lo, c.value);
      hi = std::max(hi, c.value);
    }
  }
  CHECK(report.mean_iou >= lo - 1e-12);
  CHECK(report.mean_iou <= hi + 1e-12);
}

TEST_CASE("dense evaluation demands masks and honors them") {
  Rng rng(131);
  std::vector<SemanticGrid> preds{random_grid(rng, 6, 6, 0.0)};
  std::vector<SemanticGrid> gts{random_grid(rng, 6, 6, 0.2)};

  SUBCASE("missing masks") {
    CHECK_THROWS_AS(evaluate(preds, gts, EvalProtocol::kDense, nullptr), MissingObservability);
  }
  SUBCASE("ragged inputs") {
    std::vector<SemanticGrid> short_gts;
    CHECK_THROWS_AS(evaluate(preds, short_gts, EvalProtocol::kSparse, nullptr), LengthMismatch);
    std::vector<ObservedMask> masks;  // empty but dense needs one per scan
    CHECK_THROWS_AS(evaluate(preds, gts, EvalProtocol::kDense, &masks), LengthMismatch);
  }
  SUBCASE("all-unobserved masks evaluate nothing") {
    std::vector<ObservedMask> masks{ObservedMask{6, 6, std::vector<std::uint8_t>(36, 0)}};
    EvalReport report = evaluate(preds, gts, EvalProtocol::kDense, &masks);
    CHECK(report.evaluated_cells == 0);
    CHECK(report.mean_iou == 0.0);
  }
  SUBCASE("all-observed masks equal the sparse protocol") {
    std::vector<ObservedMask> masks{ObservedMask{6, 6, std::vector<std::uint8_t>(36, 1)}};
    EvalReport dense = evaluate(preds, gts, EvalProtocol::kDense, &masks);
    EvalReport sparse = evaluate(preds, gts, EvalProtocol::kSparse, nullptr);
    CHECK(dense.cm.counts == sparse.cm.counts);
  }
}

TEST_CASE("report text carries the table and the key=value block") {
  ConfusionMatrix cm;
  cm.at(0, 0) = 8;
  cm.at(1, 0) = 2;
  std::vector<SemanticGrid> preds{SemanticGrid(2, 1)}, gts{SemanticGrid(2, 1)};
  gts[0].class_id = {kVehicle, kVehicle};
  preds[0].class_id = {kVehicle, kRoad};
  EvalReport report = evaluate(preds, gts, EvalProtocol::kSparse, nullptr);

  std::string text = format_report(report);
  // Two-line table headed by miou and the class names in id order...
  CHECK(text.rfind("miou\tvehicle\tperson", 0) == 0);
  // ...then the machine-readable key=value block.
  CHECK(text.find("evaluated_cells=2") != std::string::npos);
  CHECK(text.find("miou=") != std::string::npos);
  CHECK(text.find("iou.vehicle=") != std::string::npos);
  // Absent classes are marked rather than reported as numbers.
  CHECK(text.find("iou.person=absent") != std::string::npos);
}
