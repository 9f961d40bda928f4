#include "pillarseg/adam.hpp"

#include <cmath>

namespace pillarseg {

Adam::Adam(std::vector<ad::Tensor> params, AdamConfig config)
    : params_(std::move(params)), config_(config) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const ad::Tensor& p : params_) {
    m_.emplace_back(p.numel(), 0.0);
    v_.emplace_back(p.numel(), 0.0);
  }
}

void Adam::zero_grad() {
  for (ad::Tensor& p : params_) p.zero_grad();
}

void Adam::step() {
  ++step_count_;
  const double bc1 = 1.0 - std::pow(config_.beta1, double(step_count_));
  const double bc2 = 1.0 - std::pow(config_.beta2, double(step_count_));
  for (std::size_t pi = 0; pi < params_.size(); ++pi) {
    ad::Tensor& p = params_[pi];
    for (std::size_t i = 0; i < p.numel(); ++i) {
      double& value = p.value()[i];
      value -= config_.lr * config_.weight_decay * value;
      const double g = p.grad()[i];
      m_[pi][i] = config_.beta1 * m_[pi][i] + (1.0 - config_.beta1) * g;
      v_[pi][i] = config_.beta2 * v_[pi][i] + (1.0 - config_.beta2) * g * g;
      const double m_hat = m_[pi][i] / bc1;
      const double v_hat = v_[pi][i] / bc2;
      value -= config_.lr * m_hat / (std::sqrt(v_hat) + config_.eps);
    }
  }
}

}  // namespace pillarseg
