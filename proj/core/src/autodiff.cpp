#include "pillarseg/autodiff.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>

#include "pillarseg/errors.hpp"

namespace pillarseg::ad {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

thread_local KinkStats* g_kink_collector = nullptr;

void note_relu_margin(double margin) {
  if (g_kink_collector) {
    g_kink_collector->min_relu_margin = std::min(g_kink_collector->min_relu_margin, margin);
  }
}

void note_max_gap(double best, double second) {
  // A tie between two exact zeros is a fixed point, not a kink: zeros enter
  // a max only from relu clamps, empty cells or padding, none of which move
  // under a parameter probe as long as the relu margins hold.
  if (best == 0.0 && second == 0.0) return;
  if (g_kink_collector) {
    g_kink_collector->min_max_gap = std::min(g_kink_collector->min_max_gap, best - second);
  }
}

void require(bool ok, const char* message) {
  if (!ok) throw ShapeMismatch(message);
}

std::size_t numel_of(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::size_t rows_of(const Tensor& t) { return t.numel() / t.shape().back(); }

bool wants_grad(Tape* tape, std::initializer_list<const Tensor*> inputs) {
  if (!tape) return false;
  for (const Tensor* t : inputs) {
    if (t->requires_grad()) return true;
  }
  return false;
}

using MatMap = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using ConstMatMap =
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

}  // namespace

KinkStats::KinkStats() : min_relu_margin(kInf), min_max_gap(kInf) {}

KinkScope::KinkScope() : previous_(g_kink_collector) { g_kink_collector = &stats_; }

KinkScope::~KinkScope() { g_kink_collector = previous_; }

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  Tensor t;
  t.data_ = std::make_shared<TensorData>();
  t.data_->shape = std::move(shape);
  t.data_->value.assign(numel_of(t.data_->shape), 0.0);
  t.data_->requires_grad = requires_grad;
  if (requires_grad) t.data_->grad.assign(t.data_->value.size(), 0.0);
  return t;
}

Tensor Tensor::full(Shape shape, double fill, bool requires_grad) {
  Tensor t = zeros(std::move(shape), requires_grad);
  std::fill(t.value().begin(), t.value().end(), fill);
  return t;
}

Tensor Tensor::from_values(Shape shape, std::vector<double> values, bool requires_grad) {
  if (numel_of(shape) != values.size()) {
    throw ShapeMismatch("tensor value count does not match its shape");
  }
  Tensor t;
  t.data_ = std::make_shared<TensorData>();
  t.data_->shape = std::move(shape);
  t.data_->value = std::move(values);
  t.data_->requires_grad = requires_grad;
  if (requires_grad) t.data_->grad.assign(t.data_->value.size(), 0.0);
  return t;
}

Tensor Tensor::scalar(double v, bool requires_grad) { return from_values({1}, {v}, requires_grad); }

void Tensor::zero_grad() const {
  if (data_ && data_->requires_grad) std::fill(data_->grad.begin(), data_->grad.end(), 0.0);
}

double Tensor::item() const {
  if (numel() != 1) throw NonScalarLoss("item() called on a tensor with more than one element");
  return data_->value[0];
}

void Tape::backward(Tensor loss) {
  if (consumed_) throw TapeConsumed("tape already replayed; build a fresh graph per step");
  consumed_ = true;
  if (loss.numel() != 1) throw NonScalarLoss("backward requires a scalar loss");
  if (!loss.requires_grad()) return;  // nothing on the tape feeds this loss
  loss.grad()[0] += 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
}

Tensor add(const Tensor& a, const Tensor& b, Tape* tape) {
  require(a.shape() == b.shape(), "add: shape mismatch");
  const bool rg = wants_grad(tape, {&a, &b});
  Tensor out = Tensor::zeros(a.shape(), rg);
  for (std::size_t v = 0; v < a.numel(); ++v) out.value()[v] = a.value()[v] + b.value()[v];
  if (rg) {
    tape->record([a, b, out]() mutable {
      for (std::size_t v = 0; v < out.numel(); ++v) {
        const double g = out.grad()[v];
        if (a.requires_grad()) a.grad()[v] += g;
        if (b.requires_grad()) b.grad()[v] += g;
      }
    });
  }
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b, Tape* tape) {
  require(a.shape() == b.shape(), "sub: shape mismatch");
  const bool rg = wants_grad(tape, {&a, &b});
  Tensor out = Tensor::zeros(a.shape(), rg);
  for (std::size_t v = 0; v < a.numel(); ++v) out.value()[v] = a.value()[v] - b.value()[v];
  if (rg) {
    tape->record([a, b, out]() mutable {
      for (std::size_t v = 0; v < out.numel(); ++v) {
        const double g = out.grad()[v];
        if (a.requires_grad()) a.grad()[v] += g;
        if (b.requires_grad()) b.grad()[v] -= g;
      }
    });
  }
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b, Tape* tape) {
  require(a.shape() == b.shape(), "mul: shape mismatch");
  const bool rg = wants_grad(tape, {&a, &b});
  Tensor out = Tensor::zeros(a.shape(), rg);
  for (std::size_t v = 0; v < a.numel(); ++v) out.value()[v] = a.value()[v] * b.value()[v];
  if (rg) {
    tape->record([a, b, out]() mutable {
      for (std::size_t v = 0; v < out.numel(); ++v) {
        const double g = out.grad()[v];
        if (a.requires_grad()) a.grad()[v] += g * b.value()[v];
        if (b.requires_grad()) b.grad()[v] += g * a.value()[v];
      }
    });
  }
  return out;
}

Tensor scale(const Tensor& a, double s, Tape* tape) {
  const bool rg = wants_grad(tape, {&a});
  Tensor out = Tensor::zeros(a.shape(), rg);
  for (std::size_t v = 0; v < a.numel(); ++v) out.value()[v] = s * a.value()[v];
  if (rg) {
    tape->record([a, out, s]() mutable {
      for (std::size_t v = 0; v < out.numel(); ++v) a.grad()[v] += s * out.grad()[v];
    });
  }
  return out;
}

Tensor sum(const Tensor& a, Tape* tape) {
  const bool rg = wants_grad(tape, {&a});
  double total = 0.0;
  for (double v : a.value()) total += v;
  Tensor out = Tensor::from_values({1}, {total}, rg);
  if (rg) {
    tape->record([a, out]() mutable {
      const double g = out.grad()[0];
      for (std::size_t v = 0; v < a.numel(); ++v) a.grad()[v] += g;
    });
  }
  return out;
}

Tensor relu(const Tensor& a, Tape* tape) {
  const bool rg = wants_grad(tape, {&a});
  Tensor out = Tensor::zeros(a.shape(), rg);
  for (std::size_t v = 0; v < a.numel(); ++v) {
    const double x = a.value()[v];
    note_relu_margin(std::abs(x));
    out.value()[v] = x > 0.0 ? x : 0.0;
  }
  if (rg) {
    tape->record([a, out]() mutable {
      for (std::size_t v = 0; v < out.numel(); ++v) {
        if (a.value()[v] > 0.0) a.grad()[v] += out.grad()[v];
      }
    });
  }
  return out;
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b, Tape* tape) {
  require(w.rank() == 2, "linear: weight must be rank 2");
  require(b.rank() == 1 && b.dim(0) == w.dim(1), "linear: bias does not match weight");
  require(x.shape().back() == w.dim(0), "linear: input feature size does not match weight");
  const std::size_t in = w.dim(0);
  const std::size_t out_dim = w.dim(1);
  const std::size_t rows = rows_of(x);

  Shape out_shape = x.shape();
  out_shape.back() = out_dim;
  const bool rg = wants_grad(tape, {&x, &w, &b});
  Tensor out = Tensor::zeros(std::move(out_shape), rg);

  ConstMatMap xm(x.value().data(), rows, in);
  ConstMatMap wm(w.value().data(), in, out_dim);
  MatMap om(out.value().data(), rows, out_dim);
  om.noalias() = xm * wm;
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t o = 0; o < out_dim; ++o) out.value()[r * out_dim + o] += b.value()[o];
  }

  if (rg) {
    tape->record([x, w, b, out, rows, in, out_dim]() mutable {
      ConstMatMap gm(out.grad().data(), rows, out_dim);
      if (x.requires_grad()) {
        ConstMatMap wm(w.value().data(), in, out_dim);
        MatMap xg(x.grad().data(), rows, in);
        xg.noalias() += gm * wm.transpose();
      }
      if (w.requires_grad()) {
        ConstMatMap xm(x.value().data(), rows, in);
        MatMap wg(w.grad().data(), in, out_dim);
        wg.noalias() += xm.transpose() * gm;
      }
      if (b.requires_grad()) {
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t o = 0; o < out_dim; ++o) b.grad()[o] += out.grad()[r * out_dim + o];
        }
      }
    });
  }
  return out;
}

Tensor batchnorm(const Tensor& x, const Tensor& gamma, const Tensor& beta, Tensor running_mean,
                 Tensor running_var, const std::vector<std::uint8_t>* row_mask, Mode mode,
                 double momentum, double eps, Tape* tape) {
  const std::size_t channels = x.shape().back();
  require(gamma.numel() == channels && beta.numel() == channels, "batchnorm: affine size mismatch");
  require(running_mean.numel() == channels && running_var.numel() == channels,
          "batchnorm: running buffer size mismatch");
  const std::size_t rows = rows_of(x);
  if (row_mask) {
    if (row_mask->size() != rows) throw LengthMismatch("batchnorm: row mask length mismatch");
  }

  std::vector<std::uint8_t> mask =
      row_mask ? *row_mask : std::vector<std::uint8_t>(rows, std::uint8_t{1});
  std::size_t m = 0;
  for (std::uint8_t v : mask) m += v ? 1 : 0;

  // With no row contributing statistics there is nothing to estimate; fall
  // back to the running buffers and leave them untouched.
  const bool use_batch_stats = mode == Mode::kTrain && m > 0;

  std::vector<double> mu(channels, 0.0);
  std::vector<double> inv_std(channels, 0.0);
  if (use_batch_stats) {
    for (std::size_t r = 0; r < rows; ++r) {
      if (!mask[r]) continue;
      for (std::size_t c = 0; c < channels; ++c) mu[c] += x.value()[r * channels + c];
    }
    for (std::size_t c = 0; c < channels; ++c) mu[c] /= double(m);
    std::vector<double> var(channels, 0.0);
    for (std::size_t r = 0; r < rows; ++r) {
      if (!mask[r]) continue;
      for (std::size_t c = 0; c < channels; ++c) {
        const double d = x.value()[r * channels + c] - mu[c];
        var[c] += d * d;
      }
    }
    for (std::size_t c = 0; c < channels; ++c) {
      var[c] /= double(m);
      inv_std[c] = 1.0 / std::sqrt(var[c] + eps);
      running_mean.value()[c] = (1.0 - momentum) * running_mean.value()[c] + momentum * mu[c];
      running_var.value()[c] = (1.0 - momentum) * running_var.value()[c] + momentum * var[c];
    }
  } else {
    for (std::size_t c = 0; c < channels; ++c) {
      mu[c] = running_mean.value()[c];
      inv_std[c] = 1.0 / std::sqrt(running_var.value()[c] + eps);
    }
  }

  const bool rg = wants_grad(tape, {&x, &gamma, &beta});
  Tensor out = Tensor::zeros(x.shape(), rg);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < channels; ++c) {
      const std::size_t v = r * channels + c;
      out.value()[v] = gamma.value()[c] * (x.value()[v] - mu[c]) * inv_std[c] + beta.value()[c];
    }
  }

  if (rg) {
    tape->record([x, gamma, beta, out, mask = std::move(mask), mu = std::move(mu),
                  inv_std = std::move(inv_std), rows, channels, m, use_batch_stats]() mutable {
      // Every row is normalised with the batch statistics, so every row's
      // upstream gradient reaches the mean and variance: the sums run over
      // all rows even though only statistic rows receive the correction.
      std::vector<double> sum_dy(channels, 0.0);
      std::vector<double> sum_dy_xhat(channels, 0.0);
      if (use_batch_stats) {
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t c = 0; c < channels; ++c) {
            const std::size_t v = r * channels + c;
            const double xhat = (x.value()[v] - mu[c]) * inv_std[c];
            sum_dy[c] += out.grad()[v];
            sum_dy_xhat[c] += out.grad()[v] * xhat;
          }
        }
      }
      for (std::size_t r = 0; r < rows; ++r) {
        const bool in_stats = use_batch_stats && mask[r];
        for (std::size_t c = 0; c < channels; ++c) {
          const std::size_t v = r * channels + c;
          const double xhat = (x.value()[v] - mu[c]) * inv_std[c];
          const double g = out.grad()[v];
          if (gamma.requires_grad()) gamma.grad()[c] += g * xhat;
          if (beta.requires_grad()) beta.grad()[c] += g;
          if (x.requires_grad()) {
            double dx = g;
            if (in_stats) {
              dx -= sum_dy[c] / double(m) + xhat * sum_dy_xhat[c] / double(m);
            }
            x.grad()[v] += gamma.value()[c] * inv_std[c] * dx;
          }
        }
      }
    });
  }
  return out;
}

Tensor masked_max(const Tensor& x, const std::vector<std::uint8_t>& mask, Tape* tape) {
  require(x.rank() == 3, "masked_max: input must be (P, N, C)");
  const std::size_t pillars = x.dim(0);
  const std::size_t points = x.dim(1);
  const std::size_t channels = x.dim(2);
  if (mask.size() != pillars * points) throw LengthMismatch("masked_max: mask length mismatch");

  const bool rg = wants_grad(tape, {&x});
  Tensor out = Tensor::zeros({pillars, channels}, rg);
  std::vector<std::int32_t> argmax(pillars * channels, -1);
  for (std::size_t p = 0; p < pillars; ++p) {
    for (std::size_t c = 0; c < channels; ++c) {
      double best = -kInf;
      double second = -kInf;
      std::int32_t best_n = -1;
      for (std::size_t n = 0; n < points; ++n) {
        if (!mask[p * points + n]) continue;
        const double v = x.value()[(p * points + n) * channels + c];
        if (v > best) {
          second = best;
          best = v;
          best_n = std::int32_t(n);
        } else if (v > second) {
          second = v;
        }
      }
      if (best_n >= 0) {
        out.value()[p * channels + c] = best;
        argmax[p * channels + c] = best_n;
        if (second > -kInf) note_max_gap(best, second);
      }
    }
  }

  if (rg) {
    tape->record([x, out, argmax = std::move(argmax), points, channels]() mutable {
      for (std::size_t pc = 0; pc < argmax.size(); ++pc) {
        const std::int32_t n = argmax[pc];
        if (n < 0) continue;
        const std::size_t p = pc / channels;
        const std::size_t c = pc % channels;
        x.grad()[(p * points + std::size_t(n)) * channels + c] += out.grad()[pc];
      }
    });
  }
  return out;
}

Tensor scatter_to_grid(const Tensor& features, const std::vector<CellIndex>& coords, int width,
                       int height, Tape* tape) {
  require(features.rank() == 2, "scatter_to_grid: features must be (P, C)");
  const std::size_t pillars = features.dim(0);
  const std::size_t channels = features.dim(1);
  if (coords.size() != pillars) throw LengthMismatch("scatter_to_grid: coords length mismatch");

  const bool rg = wants_grad(tape, {&features});
  Tensor out = Tensor::zeros({std::size_t(width), std::size_t(height), channels}, rg);
  std::vector<std::uint8_t> seen(std::size_t(width) * height, 0);
  for (std::size_t p = 0; p < pillars; ++p) {
    const CellIndex& c = coords[p];
    if (c.i < 0 && c.j < 0) continue;  // padding row
    if (c.i < 0 || c.i >= width || c.j < 0 || c.j >= height) {
      throw IndexOutOfGrid("scatter_to_grid: coordinate outside canvas");
    }
    const std::size_t cell = std::size_t(c.j) * width + c.i;
    if (seen[cell]) throw DuplicateCoord("scatter_to_grid: two pillars map to one cell");
    seen[cell] = 1;
    const std::size_t dst = (std::size_t(c.i) * height + c.j) * channels;
    for (std::size_t ch = 0; ch < channels; ++ch) {
      out.value()[dst + ch] = features.value()[p * channels + ch];
    }
  }

  if (rg) {
    tape->record([features, out, coords, height, channels]() mutable {
      for (std::size_t p = 0; p < coords.size(); ++p) {
        const CellIndex& c = coords[p];
        if (c.i < 0) continue;
        const std::size_t src = (std::size_t(c.i) * height + c.j) * channels;
        for (std::size_t ch = 0; ch < channels; ++ch) {
          features.grad()[p * channels + ch] += out.grad()[src + ch];
        }
      }
    });
  }
  return out;
}

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, Tape* tape) {
  require(x.rank() == 3, "conv2d: input must be (W, H, C)");
  require(w.rank() == 4 && w.dim(0) == w.dim(1), "conv2d: kernel must be (k, k, Cin, Cout)");
  require(w.dim(0) % 2 == 1, "conv2d: kernel size must be odd");
  require(w.dim(2) == x.dim(2), "conv2d: input channels do not match kernel");
  require(b.rank() == 1 && b.dim(0) == w.dim(3), "conv2d: bias does not match kernel");

  const int width = int(x.dim(0));
  const int height = int(x.dim(1));
  const int cin = int(x.dim(2));
  const int k = int(w.dim(0));
  const int cout = int(w.dim(3));
  const int pad = k / 2;

  const bool rg = wants_grad(tape, {&x, &w, &b});
  Tensor out = Tensor::zeros({std::size_t(width), std::size_t(height), std::size_t(cout)}, rg);

  for (int i = 0; i < width; ++i) {
    for (int j = 0; j < height; ++j) {
      double* out_row = out.value().data() + (std::size_t(i) * height + j) * cout;
      for (int co = 0; co < cout; ++co) out_row[co] = b.value()[co];
      for (int a = 0; a < k; ++a) {
        const int xi = i + a - pad;
        if (xi < 0 || xi >= width) continue;
        for (int bq = 0; bq < k; ++bq) {
          const int xj = j + bq - pad;
          if (xj < 0 || xj >= height) continue;
          const double* x_row = x.value().data() + (std::size_t(xi) * height + xj) * cin;
          const double* w_row = w.value().data() + (std::size_t(a) * k + bq) * cin * cout;
          for (int ci = 0; ci < cin; ++ci) {
            const double xv = x_row[ci];
            const double* w_ci = w_row + std::size_t(ci) * cout;
            for (int co = 0; co < cout; ++co) out_row[co] += xv * w_ci[co];
          }
        }
      }
    }
  }

  if (rg) {
    tape->record([x, w, b, out, width, height, cin, k, cout, pad]() mutable {
      const bool dx = x.requires_grad();
      const bool dw = w.requires_grad();
      const bool db = b.requires_grad();
      for (int i = 0; i < width; ++i) {
        for (int j = 0; j < height; ++j) {
          const double* g_row = out.grad().data() + (std::size_t(i) * height + j) * cout;
          if (db) {
            for (int co = 0; co < cout; ++co) b.grad()[co] += g_row[co];
          }
          for (int a = 0; a < k; ++a) {
            const int xi = i + a - pad;
            if (xi < 0 || xi >= width) continue;
            for (int bq = 0; bq < k; ++bq) {
              const int xj = j + bq - pad;
              if (xj < 0 || xj >= height) continue;
              const std::size_t x_off = (std::size_t(xi) * height + xj) * cin;
              const std::size_t w_off = (std::size_t(a) * k + bq) * cin * cout;
              for (int ci = 0; ci < cin; ++ci) {
                const double* w_ci = w.value().data() + w_off + std::size_t(ci) * cout;
                double acc = 0.0;
                for (int co = 0; co < cout; ++co) {
                  const double g = g_row[co];
                  acc += g * w_ci[co];
                  if (dw) w.grad()[w_off + std::size_t(ci) * cout + co] += x.value()[x_off + ci] * g;
                }
                if (dx) x.grad()[x_off + ci] += acc;
              }
            }
          }
        }
      }
    });
  }
  return out;
}

Tensor maxpool2(const Tensor& x, Tape* tape) {
  require(x.rank() == 3, "maxpool2: input must be (W, H, C)");
  const std::size_t width = x.dim(0);
  const std::size_t height = x.dim(1);
  const std::size_t channels = x.dim(2);
  if (width % 2 != 0 || height % 2 != 0) {
    throw OddDimension("maxpool2: spatial dimensions must be even");
  }
  const std::size_t ow = width / 2;
  const std::size_t oh = height / 2;

  const bool rg = wants_grad(tape, {&x});
  Tensor out = Tensor::zeros({ow, oh, channels}, rg);
  std::vector<std::size_t> argmax(out.numel(), 0);
  for (std::size_t i = 0; i < ow; ++i) {
    for (std::size_t j = 0; j < oh; ++j) {
      for (std::size_t c = 0; c < channels; ++c) {
        double best = -kInf;
        double second = -kInf;
        std::size_t best_idx = 0;
        for (std::size_t di = 0; di < 2; ++di) {
          for (std::size_t dj = 0; dj < 2; ++dj) {
            const std::size_t src = ((2 * i + di) * height + (2 * j + dj)) * channels + c;
            const double v = x.value()[src];
            if (v > best) {
              second = best;
              best = v;
              best_idx = src;
            } else if (v > second) {
              second = v;
            }
          }
        }
        note_max_gap(best, second);
        const std::size_t dst = (i * oh + j) * channels + c;
        out.value()[dst] = best;
        argmax[dst] = best_idx;
      }
    }
  }

  if (rg) {
    tape->record([x, out, argmax = std::move(argmax)]() mutable {
      for (std::size_t v = 0; v < argmax.size(); ++v) x.grad()[argmax[v]] += out.grad()[v];
    });
  }
  return out;
}

Tensor upsample2(const Tensor& x, Tape* tape) {
  require(x.rank() == 3, "upsample2: input must be (W, H, C)");
  const std::size_t width = x.dim(0);
  const std::size_t height = x.dim(1);
  const std::size_t channels = x.dim(2);

  const bool rg = wants_grad(tape, {&x});
  Tensor out = Tensor::zeros({2 * width, 2 * height, channels}, rg);
  for (std::size_t i = 0; i < 2 * width; ++i) {
    for (std::size_t j = 0; j < 2 * height; ++j) {
      const std::size_t src = ((i / 2) * height + (j / 2)) * channels;
      const std::size_t dst = (i * 2 * height + j) * channels;
      for (std::size_t c = 0; c < channels; ++c) out.value()[dst + c] = x.value()[src + c];
    }
  }

  if (rg) {
    tape->record([x, out, width, height, channels]() mutable {
      for (std::size_t i = 0; i < 2 * width; ++i) {
        for (std::size_t j = 0; j < 2 * height; ++j) {
          const std::size_t src = ((i / 2) * height + (j / 2)) * channels;
          const std::size_t dst = (i * 2 * height + j) * channels;
          for (std::size_t c = 0; c < channels; ++c) x.grad()[src + c] += out.grad()[dst + c];
        }
      }
    });
  }
  return out;
}

Tensor concat_channels(const Tensor& a, const Tensor& b, Tape* tape) {
  require(a.rank() == 3 && b.rank() == 3, "concat_channels: inputs must be (W, H, C)");
  require(a.dim(0) == b.dim(0) && a.dim(1) == b.dim(1),
          "concat_channels: spatial shape mismatch");
  const std::size_t width = a.dim(0);
  const std::size_t height = a.dim(1);
  const std::size_t ca = a.dim(2);
  const std::size_t cb = b.dim(2);

  const bool rg = wants_grad(tape, {&a, &b});
  Tensor out = Tensor::zeros({width, height, ca + cb}, rg);
  for (std::size_t cell = 0; cell < width * height; ++cell) {
    for (std::size_t c = 0; c < ca; ++c) {
      out.value()[cell * (ca + cb) + c] = a.value()[cell * ca + c];
    }
    for (std::size_t c = 0; c < cb; ++c) {
      out.value()[cell * (ca + cb) + ca + c] = b.value()[cell * cb + c];
    }
  }

  if (rg) {
    tape->record([a, b, out, width, height, ca, cb]() mutable {
      for (std::size_t cell = 0; cell < width * height; ++cell) {
        if (a.requires_grad()) {
          for (std::size_t c = 0; c < ca; ++c) {
            a.grad()[cell * ca + c] += out.grad()[cell * (ca + cb) + c];
          }
        }
        if (b.requires_grad()) {
          for (std::size_t c = 0; c < cb; ++c) {
            b.grad()[cell * cb + c] += out.grad()[cell * (ca + cb) + ca + c];
          }
        }
      }
    });
  }
  return out;
}

Tensor pad_spatial(const Tensor& x, int lo_i, int hi_i, int lo_j, int hi_j, Tape* tape) {
  require(x.rank() == 3, "pad_spatial: input must be (W, H, C)");
  require(lo_i >= 0 && hi_i >= 0 && lo_j >= 0 && hi_j >= 0, "pad_spatial: negative padding");
  const std::size_t width = x.dim(0);
  const std::size_t height = x.dim(1);
  const std::size_t channels = x.dim(2);
  const std::size_t ow = width + lo_i + hi_i;
  const std::size_t oh = height + lo_j + hi_j;

  const bool rg = wants_grad(tape, {&x});
  Tensor out = Tensor::zeros({ow, oh, channels}, rg);
  for (std::size_t i = 0; i < width; ++i) {
    for (std::size_t j = 0; j < height; ++j) {
      const std::size_t src = (i * height + j) * channels;
      const std::size_t dst = ((i + lo_i) * oh + (j + lo_j)) * channels;
      for (std::size_t c = 0; c < channels; ++c) out.value()[dst + c] = x.value()[src + c];
    }
  }

  if (rg) {
    tape->record([x, out, lo_i, lo_j, width, height, channels, oh]() mutable {
      for (std::size_t i = 0; i < width; ++i) {
        for (std::size_t j = 0; j < height; ++j) {
          const std::size_t src = (i * height + j) * channels;
          const std::size_t dst = ((i + lo_i) * oh + (j + lo_j)) * channels;
          for (std::size_t c = 0; c < channels; ++c) x.grad()[src + c] += out.grad()[dst + c];
        }
      }
    });
  }
  return out;
}

Tensor crop_spatial(const Tensor& x, int off_i, int off_j, int out_w, int out_h, Tape* tape) {
  require(x.rank() == 3, "crop_spatial: input must be (W, H, C)");
  require(off_i >= 0 && off_j >= 0 && out_w > 0 && out_h > 0 &&
              std::size_t(off_i + out_w) <= x.dim(0) && std::size_t(off_j + out_h) <= x.dim(1),
          "crop_spatial: window outside input");
  const std::size_t height = x.dim(1);
  const std::size_t channels = x.dim(2);

  const bool rg = wants_grad(tape, {&x});
  Tensor out = Tensor::zeros({std::size_t(out_w), std::size_t(out_h), channels}, rg);
  for (int i = 0; i < out_w; ++i) {
    for (int j = 0; j < out_h; ++j) {
      const std::size_t src = ((std::size_t(i) + off_i) * height + (std::size_t(j) + off_j)) * channels;
      const std::size_t dst = (std::size_t(i) * out_h + j) * channels;
      for (std::size_t c = 0; c < channels; ++c) out.value()[dst + c] = x.value()[src + c];
    }
  }

  if (rg) {
    tape->record([x, out, off_i, off_j, out_w, out_h, height, channels]() mutable {
      for (int i = 0; i < out_w; ++i) {
        for (int j = 0; j < out_h; ++j) {
          const std::size_t src =
              ((std::size_t(i) + off_i) * height + (std::size_t(j) + off_j)) * channels;
          const std::size_t dst = (std::size_t(i) * out_h + j) * channels;
          for (std::size_t c = 0; c < channels; ++c) x.grad()[src + c] += out.grad()[dst + c];
        }
      }
    });
  }
  return out;
}

Tensor softmax_rows(const Tensor& x, Tape* tape) {
  const std::size_t k = x.shape().back();
  const std::size_t rows = rows_of(x);

  const bool rg = wants_grad(tape, {&x});
  Tensor out = Tensor::zeros(x.shape(), rg);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = x.value().data() + r * k;
    double m = -kInf;
    for (std::size_t c = 0; c < k; ++c) m = std::max(m, row[c]);
    double denom = 0.0;
    for (std::size_t c = 0; c < k; ++c) denom += std::exp(row[c] - m);
    for (std::size_t c = 0; c < k; ++c) out.value()[r * k + c] = std::exp(row[c] - m) / denom;
  }

  if (rg) {
    tape->record([x, out, rows, k]() mutable {
      for (std::size_t r = 0; r < rows; ++r) {
        double dot = 0.0;
        for (std::size_t c = 0; c < k; ++c) {
          dot += out.grad()[r * k + c] * out.value()[r * k + c];
        }
        for (std::size_t c = 0; c < k; ++c) {
          x.grad()[r * k + c] += out.value()[r * k + c] * (out.grad()[r * k + c] - dot);
        }
      }
    });
  }
  return out;
}

Tensor weighted_cross_entropy(const Tensor& logits, const std::vector<std::uint8_t>& labels,
                              const std::array<double, kNumClasses>& class_weights, Tape* tape) {
  const std::size_t k = logits.shape().back();
  require(k == kNumClasses, "weighted_cross_entropy: trailing axis must hold class scores");
  const std::size_t rows = rows_of(logits);
  if (labels.size() != rows) throw LengthMismatch("weighted_cross_entropy: one label per row");

  std::size_t labelled = 0;
  double loss_sum = 0.0;
  std::vector<double> probs(logits.numel(), 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    const std::uint8_t label = labels[r];
    if (label == kUnlabeled) continue;
    if (label >= kNumClasses) throw FormatError("weighted_cross_entropy: label id out of range");
    ++labelled;
    const double* row = logits.value().data() + r * k;
    double m = -kInf;
    for (std::size_t c = 0; c < k; ++c) m = std::max(m, row[c]);
    double denom = 0.0;
    for (std::size_t c = 0; c < k; ++c) denom += std::exp(row[c] - m);
    for (std::size_t c = 0; c < k; ++c) probs[r * k + c] = std::exp(row[c] - m) / denom;
    loss_sum += class_weights[label] * (std::log(denom) + m - row[label]);
  }

  if (labelled == 0) return Tensor::scalar(0.0, false);  // no labelled cell, no gradient

  const bool rg = wants_grad(tape, {&logits});
  Tensor out = Tensor::scalar(loss_sum / double(labelled), rg);
  if (rg) {
    tape->record([logits, out, labels, class_weights, probs = std::move(probs), rows, k,
                  labelled]() mutable {
      const double g = out.grad()[0] / double(labelled);
      for (std::size_t r = 0; r < rows; ++r) {
        const std::uint8_t label = labels[r];
        if (label == kUnlabeled) continue;
        const double wg = class_weights[label] * g;
        for (std::size_t c = 0; c < k; ++c) {
          const double onehot = (c == label) ? 1.0 : 0.0;
          logits.grad()[r * k + c] += wg * (probs[r * k + c] - onehot);
        }
      }
    });
  }
  return out;
}

double grad_check(const std::function<Tensor(Tape&)>& build, const std::vector<Tensor>& params,
                  double eps) {
  // `build` must be pure given the parameter values: anything else it
  // mutates (e.g. batchnorm running buffers) has to be restored inside it.
  for (const Tensor& p : params) const_cast<Tensor&>(p).zero_grad();
  std::vector<std::vector<double>> analytic;
  {
    Tape tape;
    Tensor loss = build(tape);
    tape.backward(loss);
  }
  analytic.reserve(params.size());
  for (const Tensor& p : params) analytic.push_back(p.grad());

  double worst = 0.0;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor param = params[pi];
    for (std::size_t v = 0; v < param.numel(); ++v) {
      const double original = param.value()[v];
      param.value()[v] = original + eps;
      double up;
      {
        Tape tape;
        up = build(tape).item();
      }
      param.value()[v] = original - eps;
      double down;
      {
        Tape tape;
        down = build(tape).item();
      }
      param.value()[v] = original;
      const double numeric = (up - down) / (2.0 * eps);
      const double a = analytic[pi][v];
      const double err = std::abs(a - numeric) / std::max(1e-8, std::abs(a) + std::abs(numeric));
      worst = std::max(worst, err);
    }
  }
  return worst;
}

}  // namespace pillarseg::ad
