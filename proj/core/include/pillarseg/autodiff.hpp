#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "pillarseg/grid.hpp"
#include "pillarseg/types.hpp"

// Reverse-mode automatic differentiation over dense 64-bit tensors. Forward
// ops optionally record backward closures on a Tape; calling
// Tape::backward(loss) seeds d(loss)/d(loss) = 1 and replays the closures in
// reverse. Keeping the engine small and deterministic matters more here than
// raw speed: every op is a plain loop over std::vector<double>.
namespace pillarseg::ad {

using Shape = std::vector<std::size_t>;

enum class Mode { kTrain, kEval };

struct TensorData {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // allocated only when requires_grad
  bool requires_grad = false;
};

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double fill, bool requires_grad = false);
  static Tensor from_values(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double v, bool requires_grad = false);

  bool defined() const { return data_ != nullptr; }
  const Shape& shape() const { return data_->shape; }
  std::size_t rank() const { return data_->shape.size(); }
  std::size_t numel() const { return data_->value.size(); }
  std::size_t dim(std::size_t axis) const { return data_->shape[axis]; }

  // A Tensor is a shared handle: copies alias the same storage, and value /
  // grad stay writable through const handles (backward closures capture
  // const references by value).
  std::vector<double>& value() const { return data_->value; }
  std::vector<double>& grad() const { return data_->grad; }

  bool requires_grad() const { return data_->requires_grad; }
  void zero_grad() const;

  // Value of a one-element tensor.
  double item() const;

  bool same_storage(const Tensor& other) const { return data_ == other.data_; }

 private:
  std::shared_ptr<TensorData> data_;
};

class Tape {
 public:
  void record(std::function<void()> fn) { nodes_.push_back(std::move(fn)); }
  std::size_t size() const { return nodes_.size(); }

  // Seeds grad(loss) = 1 and replays recorded closures newest-first. A tape
  // is single-use; throws TapeConsumed on reuse and NonScalarLoss when the
  // loss has more than one element.
  void backward(Tensor loss);

 private:
  std::vector<std::function<void()>> nodes_;
  bool consumed_ = false;
};

// Margins to the nearest nondifferentiable point seen during a forward pass:
// the smallest |pre-activation| at any ReLU and the smallest gap between the
// two largest candidates at any max selection (ties between two exact zeros
// are skipped: such zeros come from relu clamps, empty cells or padding and
// stay put under probes whenever the relu margins hold). Finite-difference
// gradient probes are only trustworthy when both margins comfortably exceed
// the probe step, so tests install a collector around the forward pass and
// assert on the result.
struct KinkStats {
  double min_relu_margin;
  double min_max_gap;
  KinkStats();
};

class KinkScope {
 public:
  KinkScope();
  ~KinkScope();
  KinkScope(const KinkScope&) = delete;
  KinkScope& operator=(const KinkScope&) = delete;
  const KinkStats& stats() const { return stats_; }

 private:
  KinkStats stats_;
  KinkStats* previous_;
};

// --- elementwise and reductions ---

Tensor add(const Tensor& a, const Tensor& b, Tape* tape);
Tensor sub(const Tensor& a, const Tensor& b, Tape* tape);
Tensor mul(const Tensor& a, const Tensor& b, Tape* tape);
Tensor scale(const Tensor& a, double s, Tape* tape);
Tensor sum(const Tensor& a, Tape* tape);
Tensor relu(const Tensor& a, Tape* tape);

// --- dense layers ---

// x: (..., in); w: (in, out); b: (out). Applies x@w + b row by row.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b, Tape* tape);

// Channel-last batch normalisation over rows of x (..., C). When row_mask is
// non-null only rows with mask != 0 contribute to the batch statistics
// (biased variance); every row is still normalised. kTrain uses batch
// statistics and updates the running buffers in place; kEval uses the
// running buffers and leaves them untouched.
Tensor batchnorm(const Tensor& x, const Tensor& gamma, const Tensor& beta, Tensor running_mean,
                 Tensor running_var, const std::vector<std::uint8_t>* row_mask, Mode mode,
                 double momentum, double eps, Tape* tape);

// --- point-set ops ---

// x: (P, N, C), mask: (P, N). out[p, c] = max over unmasked n of x[p, n, c];
// rows whose mask is all zero produce 0. Ties keep the lowest n.
Tensor masked_max(const Tensor& x, const std::vector<std::uint8_t>& mask, Tape* tape);

// features: (P, C) scattered into a zero (W, H, C) canvas at coords[p];
// coords of (-1, -1) mark padding rows and are skipped. Two live pillars
// with the same cell raise DuplicateCoord.
Tensor scatter_to_grid(const Tensor& features, const std::vector<CellIndex>& coords, int width,
                       int height, Tape* tape);

// --- spatial ops on (W, H, C) tensors, index = (i * H + j) * C + c ---

// w: (k, k, Cin, Cout); stride 1, zero padding k/2 (same-size output).
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, Tape* tape);

// 2x2 max pooling; throws OddDimension unless W and H are even. Ties keep
// the first element in (di, dj) scan order.
Tensor maxpool2(const Tensor& x, Tape* tape);

// Nearest-neighbour 2x upsampling.
Tensor upsample2(const Tensor& x, Tape* tape);

Tensor concat_channels(const Tensor& a, const Tensor& b, Tape* tape);

// Zero padding / cropping along the two spatial axes.
Tensor pad_spatial(const Tensor& x, int lo_i, int hi_i, int lo_j, int hi_j, Tape* tape);
Tensor crop_spatial(const Tensor& x, int off_i, int off_j, int out_w, int out_h, Tape* tape);

// Softmax over the trailing axis of (..., K).
Tensor softmax_rows(const Tensor& x, Tape* tape);

// Mean over labelled rows of -weight[k] * log softmax(logits)[k]. logits:
// (..., K) with one label per row; kUnlabeled rows are skipped. Returns 0
// (with zero gradients) when no row is labelled.
Tensor weighted_cross_entropy(const Tensor& logits, const std::vector<std::uint8_t>& labels,
                              const std::array<double, kNumClasses>& class_weights, Tape* tape);

// --- finite-difference checking ---

// `build` must construct the scalar loss from the current parameter values.
// For every element of every parameter: central difference with step eps,
// compared against the analytic gradient as |a - n| / max(1e-8, |a| + |n|).
// Returns the largest such error.
double grad_check(const std::function<Tensor(Tape&)>& build, const std::vector<Tensor>& params,
                  double eps = 1e-3);

}  // namespace pillarseg::ad
