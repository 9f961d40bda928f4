#include "pillarseg/metrics.hpp"

#include <sstream>

#include "pillarseg/class_table.hpp"
#include "pillarseg/errors.hpp"

namespace pillarseg {

std::uint64_t ConfusionMatrix::total() const {
  std::uint64_t sum = 0;
  for (std::uint64_t c : counts) sum += c;
  return sum;
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
  for (std::size_t v = 0; v < counts.size(); ++v) counts[v] += other.counts[v];
}

void accumulate(ConfusionMatrix& cm, const SemanticGrid& pred, const SemanticGrid& gt,
                const ObservedMask* mask) {
  if (pred.width != gt.width || pred.height != gt.height) {
    throw ShapeMismatch("accumulate: prediction and ground truth grids differ in shape");
  }
  if (mask && (mask->width != gt.width || mask->height != gt.height)) {
    throw ShapeMismatch("accumulate: observed mask does not match the grids");
  }
  for (std::size_t cell = 0; cell < gt.class_id.size(); ++cell) {
    const std::uint8_t truth = gt.class_id[cell];
    if (truth == kUnlabeled) continue;
    if (mask && !mask->observed[cell]) continue;
    const std::uint8_t guess = pred.class_id[cell];
    if (guess >= kNumClasses) {
      throw FormatError("accumulate: prediction carries an invalid class id");
    }
    ++cm.at(truth, guess);
  }
}

ClassIou iou(const ConfusionMatrix& cm, int k) {
  std::uint64_t tp = cm.at(k, k);
  std::uint64_t fp = 0;
  std::uint64_t fn = 0;
  for (int other = 0; other < int(kNumClasses); ++other) {
    if (other == k) continue;
    fp += cm.at(other, k);
    fn += cm.at(k, other);
  }
  ClassIou result;
  result.present = tp + fp + fn > 0;
  result.value = result.present ? double(tp) / double(tp + fp + fn) : 1.0;
  return result;
}

double miou(const ConfusionMatrix& cm) {
  double sum = 0.0;
  int present = 0;
  for (int k = 0; k < int(kNumClasses); ++k) {
    const ClassIou c = iou(cm, k);
    if (c.present) {
      sum += c.value;
      ++present;
    }
  }
  return present > 0 ? sum / present : 0.0;
}

EvalReport evaluate(const std::vector<SemanticGrid>& preds, const std::vector<SemanticGrid>& gts,
                    EvalProtocol protocol, const std::vector<ObservedMask>* masks) {
  if (preds.size() != gts.size()) {
    throw LengthMismatch("evaluate: prediction and ground truth counts differ");
  }
  if (protocol == EvalProtocol::kDense) {
    if (!masks) throw MissingObservability("evaluate: dense protocol needs observed-cell masks");
    if (masks->size() != gts.size()) {
      throw LengthMismatch("evaluate: mask count differs from scan count");
    }
  }

  EvalReport report;
  for (std::size_t s = 0; s < preds.size(); ++s) {
    const ObservedMask* mask =
        protocol == EvalProtocol::kDense ? &(*masks)[s] : nullptr;
    accumulate(report.cm, preds[s], gts[s], mask);
  }
  for (int k = 0; k < int(kNumClasses); ++k) report.per_class[k] = iou(report.cm, k);
  report.mean_iou = miou(report.cm);
  report.evaluated_cells = report.cm.total();
  return report;
}

std::string format_report(const EvalReport& report) {
  const ClassTable table = ClassTable::default_table();
  std::ostringstream out;
  out.setf(std::ios::fixed);
  out.precision(4);

  out << "miou";
  for (int k = 0; k < int(kNumClasses); ++k) out << '\t' << table.names[k];
  out << '\n' << report.mean_iou;
  for (int k = 0; k < int(kNumClasses); ++k) {
    out << '\t';
    if (report.per_class[k].present) {
      out << report.per_class[k].value;
    } else {
      out << "-";
    }
  }
  out << '\n';

  out << "evaluated_cells=" << report.evaluated_cells << '\n';
  if (report.evaluated_cells == 0) out << "note=no evaluated cells\n";
  out << "miou=" << report.mean_iou << '\n';
  for (int k = 0; k < int(kNumClasses); ++k) {
    out << "iou." << table.names[k] << '=';
    if (report.per_class[k].present) {
      out << report.per_class[k].value;
    } else {
      out << "absent";
    }
    out << '\n';
  }
  return out.str();
}

}  // namespace pillarseg
