#pragma once

#include <cstdint>
#include <vector>

#include "pillarseg/autodiff.hpp"

namespace pillarseg {

struct AdamConfig {
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

// Adam with decoupled weight decay: each step first shrinks the parameter by
// lr * weight_decay * p, then applies the bias-corrected moment update from
// the parameter's accumulated gradient.
class Adam {
 public:
  Adam(std::vector<ad::Tensor> params, AdamConfig config);

  void zero_grad();
  void step();

  std::uint64_t step_count() const { return step_count_; }
  const std::vector<ad::Tensor>& params() const { return params_; }

  // Mutable state access for checkpoint save / restore.
  std::vector<std::vector<double>>& first_moments() { return m_; }
  std::vector<std::vector<double>>& second_moments() { return v_; }
  void set_step_count(std::uint64_t t) { step_count_ = t; }

 private:
  std::vector<ad::Tensor> params_;
  AdamConfig config_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  std::uint64_t step_count_ = 0;
};

}  // namespace pillarseg
