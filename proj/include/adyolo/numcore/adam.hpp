#pragma once

#include <span>
#include <vector>

#include "adyolo/numcore/tensor.hpp"

namespace adyolo {

struct AdamConfig {
  Real beta1 = 0.9;
  Real beta2 = 0.999;
  Real epsilon = 1e-8;
};

// Adam moments for a fixed list of parameter tensors.
class Adam {
 public:
  Adam() = default;
  explicit Adam(std::span<const Tensor> params, AdamConfig config = {});

  // params[i] -= lr * mhat / (sqrt(vhat) + eps), elementwise in index order.
  void step(std::span<Tensor* const> params, std::span<const Tensor> grads, Real learning_rate);

  long steps_taken() const { return t_; }

 private:
  AdamConfig config_;
  std::vector<Tensor> m_, v_;
  long t_ = 0;
};

}  // namespace adyolo
