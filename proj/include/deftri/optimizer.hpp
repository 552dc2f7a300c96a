#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "deftri/common.hpp"
#include "deftri/tensor.hpp"

namespace deftri {

struct AdamHyperParams {
  double learning_rate = 1e-5;
  double epsilon = 1e-6;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
};

// Adam with bias correction and decoupled weight decay (the decay term is
// added to the update, not folded into the gradient moments).
template <typename T>
class AdamOptimizer {
 public:
  explicit AdamOptimizer(AdamHyperParams hp = {}) : hp_(hp) {}

  const AdamHyperParams& hyperparams() const { return hp_; }
  std::uint64_t step_count() const { return step_; }

  // Parameter order must be stable across calls; state is keyed by position.
  void step(const std::vector<Tensor<T>*>& params, const std::vector<const Tensor<T>*>& grads) {
    if (params.size() != grads.size())
      throw InternalError("adam_step: param/grad count mismatch");
    if (m_.empty()) {
      for (const auto* p : params) {
        m_.push_back(Tensor<T>::zeros_like(*p));
        v_.push_back(Tensor<T>::zeros_like(*p));
      }
    }
    if (m_.size() != params.size()) throw InternalError("adam_step: state size mismatch");
    ++step_;
    const T lr = static_cast<T>(hp_.learning_rate);
    const T eps = static_cast<T>(hp_.epsilon);
    const T wd = static_cast<T>(hp_.weight_decay);
    const T b1 = static_cast<T>(hp_.beta1);
    const T b2 = static_cast<T>(hp_.beta2);
    const T bc1 = T(1) - static_cast<T>(std::pow(hp_.beta1, static_cast<double>(step_)));
    const T bc2 = T(1) - static_cast<T>(std::pow(hp_.beta2, static_cast<double>(step_)));
    for (std::size_t i = 0; i < params.size(); ++i) {
      Tensor<T>& p = *params[i];
      const Tensor<T>& g = *grads[i];
      if (!p.same_shape(g)) throw InternalError("adam_step: param/grad shape mismatch");
      Tensor<T>& m = m_[i];
      Tensor<T>& v = v_[i];
      for (std::size_t j = 0; j < p.size(); ++j) {
        const T gj = g.data[j];
        m.data[j] = b1 * m.data[j] + (T(1) - b1) * gj;
        v.data[j] = b2 * v.data[j] + (T(1) - b2) * gj * gj;
        const T mhat = m.data[j] / bc1;
        const T vhat = v.data[j] / bc2;
        p.data[j] -= lr * (mhat / (std::sqrt(vhat) + eps) + wd * p.data[j]);
      }
    }
  }

 private:
  AdamHyperParams hp_;
  std::uint64_t step_ = 0;
  std::vector<Tensor<T>> m_;
  std::vector<Tensor<T>> v_;
};

}  // namespace deftri
