#include "adyolo/numcore/adam.hpp"

#include <cmath>

namespace adyolo {

Adam::Adam(std::span<const Tensor> params, AdamConfig config) : config_(config) {
  m_.reserve(params.size());
  v_.reserve(params.size());
  for (const Tensor& p : params) {
    m_.emplace_back(p.shape(), 0.0);
    v_.emplace_back(p.shape(), 0.0);
  }
}

void Adam::step(std::span<Tensor* const> params, std::span<const Tensor> grads, Real learning_rate) {
  if (params.size() != m_.size() || grads.size() != m_.size()) {
    throw ShapeError("Adam::step: parameter count changed since construction");
  }
  ++t_;
  const Real bc1 = 1 - std::pow(config_.beta1, static_cast<Real>(t_));
  const Real bc2 = 1 - std::pow(config_.beta2, static_cast<Real>(t_));
  for (std::size_t p = 0; p < params.size(); ++p) {
    Tensor& w = *params[p];
    const Tensor& g = grads[p];
    if (w.shape() != g.shape() || w.shape() != m_[p].shape()) {
      throw ShapeError("Adam::step: gradient shape " + shape_string(g.shape()) + " vs parameter " +
                       shape_string(w.shape()));
    }
    Tensor& m = m_[p];
    Tensor& v = v_[p];
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = config_.beta1 * m[i] + (1 - config_.beta1) * g[i];
      v[i] = config_.beta2 * v[i] + (1 - config_.beta2) * g[i] * g[i];
      const Real mhat = m[i] / bc1;
      const Real vhat = v[i] / bc2;
      w[i] -= learning_rate * mhat / (std::sqrt(vhat) + config_.epsilon);
    }
  }
}

}  // namespace adyolo
