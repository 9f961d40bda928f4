#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "pillarseg/raycast.hpp"
#include "pillarseg/types.hpp"

namespace pillarseg {

// Rows index ground truth, columns index prediction.
struct ConfusionMatrix {
  std::array<std::uint64_t, std::size_t(kNumClasses) * kNumClasses> counts{};

  std::uint64_t& at(int gt, int pred) { return counts[std::size_t(gt) * kNumClasses + pred]; }
  std::uint64_t at(int gt, int pred) const { return counts[std::size_t(gt) * kNumClasses + pred]; }
  std::uint64_t total() const;
  void merge(const ConfusionMatrix& other);
};

// Adds every cell where gt carries a label and (when given) the mask marks
// the cell observed. Throws ShapeMismatch on differing grid shapes and
// FormatError if a counted prediction carries the unlabeled sentinel.
void accumulate(ConfusionMatrix& cm, const SemanticGrid& pred, const SemanticGrid& gt,
                const ObservedMask* mask);

struct ClassIou {
  double value = 1.0;
  // False when the class never occurs in gt or prediction; such classes are
  // excluded from the mIoU mean.
  bool present = false;
};

// TP / (TP + FP + FN); an absent class reports 1.0 with present = false.
ClassIou iou(const ConfusionMatrix& cm, int k);

// Unweighted mean over present classes; 0 when no class is present.
double miou(const ConfusionMatrix& cm);

enum class EvalProtocol { kSparse, kDense };

struct EvalReport {
  ConfusionMatrix cm;
  std::array<ClassIou, kNumClasses> per_class;
  double mean_iou = 0.0;
  std::uint64_t evaluated_cells = 0;
};

// Micro-accumulation: one confusion matrix over all scans, then IoU per
// class. The dense protocol requires one observed-cell mask per scan and
// throws MissingObservability without them; LengthMismatch on ragged input.
EvalReport evaluate(const std::vector<SemanticGrid>& preds, const std::vector<SemanticGrid>& gts,
                    EvalProtocol protocol, const std::vector<ObservedMask>* masks);

// Two-line tab-separated table (mIoU first, then the classes in id order)
// followed by a machine-readable key=value block.
std::string format_report(const EvalReport& report);

}  // namespace pillarseg
