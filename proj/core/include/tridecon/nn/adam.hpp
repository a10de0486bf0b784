#pragma once

#include <cmath>
#include <vector>

#include "tridecon/nn/networks.hpp"

namespace tridecon::nn {

/// Adam with bias correction. Parameters without an accumulated gradient are
/// treated as having zero gradient for the step.
template <class T>
class Adam {
 public:
  Adam() = default;
  Adam(std::vector<NamedParam<T>> params, double beta1, double beta2, double eps = 1e-8)
      : params_(std::move(params)), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (const auto& p : params_) {
      m_.emplace_back(p.var->value.size(), T(0));
      v_.emplace_back(p.var->value.size(), T(0));
    }
  }

  void zero_grad() { nn::zero_grad(params_); }

  void step(double lr) {
    ++steps_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(steps_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(steps_));
    const T b1 = static_cast<T>(beta1_), b2 = static_cast<T>(beta2_);
    const T step_size = static_cast<T>(lr / c1);
    const T inv_c2 = static_cast<T>(1.0 / c2);
    const T eps = static_cast<T>(eps_);
    for (std::size_t k = 0; k < params_.size(); ++k) {
      Node<T>& node = *params_[k].var;
      const bool has_grad = node.grad.size() == node.value.size();
      auto& m = m_[k];
      auto& v = v_[k];
      for (std::size_t i = 0; i < m.size(); ++i) {
        const T g = has_grad ? node.grad.data[i] : T(0);
        m[i] = b1 * m[i] + (T(1) - b1) * g;
        v[i] = b2 * v[i] + (T(1) - b2) * g * g;
        node.value.data[i] -= step_size * m[i] / (std::sqrt(v[i] * inv_c2) + eps);
      }
    }
  }

  [[nodiscard]] long steps() const { return steps_; }
  [[nodiscard]] const std::vector<NamedParam<T>>& params() const { return params_; }
  [[nodiscard]] std::vector<std::vector<T>>& first_moments() { return m_; }
  [[nodiscard]] std::vector<std::vector<T>>& second_moments() { return v_; }
  [[nodiscard]] const std::vector<std::vector<T>>& first_moments() const { return m_; }
  [[nodiscard]] const std::vector<std::vector<T>>& second_moments() const { return v_; }
  void set_steps(long s) { steps_ = s; }

 private:
  std::vector<NamedParam<T>> params_;
  std::vector<std::vector<T>> m_, v_;
  double beta1_ = 0.5, beta2_ = 0.999, eps_ = 1e-8;
  long steps_ = 0;
};

}  // namespace tridecon::nn
