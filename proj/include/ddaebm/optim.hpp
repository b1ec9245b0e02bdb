#pragma once

#include "ddaebm/nn.hpp"

#include <cmath>
#include <stdexcept>
#include <vector>

namespace ddaebm {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.0;
  double beta2 = 0.9;
  double eps = 1e-8;
  double clip_norm = 0.0;  // global gradient-norm clip; 0 disables
};

// Adam with bias correction. Holds moment estimates only; parameters are
// passed in on every step so the optimizer never aliases model storage.
template <typename T>
class Adam {
 public:
  Adam() = default;
  explicit Adam(AdamConfig config) : config_(config) {}

  void step(const nn::Registry<T>& reg, const std::vector<Var<T>>& grads) {
    if (grads.size() != reg.params.size())
      throw std::invalid_argument("Adam::step: one gradient per parameter required");
    if (m_.empty()) {
      for (const auto& p : reg.params) {
        m_.push_back(Matrix<T>::Zero(p.var->rows(), p.var->cols()));
        v_.push_back(Matrix<T>::Zero(p.var->rows(), p.var->cols()));
      }
    }
    if (m_.size() != reg.params.size())
      throw std::invalid_argument("Adam::step: parameter count changed");

    T clip = T(1);
    if (config_.clip_norm > 0.0) {
      double sq = 0.0;
      for (const auto& g : grads) sq += static_cast<double>(g.value().squaredNorm());
      const double norm = std::sqrt(sq);
      if (norm > config_.clip_norm) clip = static_cast<T>(config_.clip_norm / norm);
    }

    ++steps_;
    const T b1 = static_cast<T>(config_.beta1);
    const T b2 = static_cast<T>(config_.beta2);
    const T c1 = static_cast<T>(1.0 - std::pow(config_.beta1, static_cast<double>(steps_)));
    const T c2 = static_cast<T>(1.0 - std::pow(config_.beta2, static_cast<double>(steps_)));
    const T lr = static_cast<T>(config_.lr);
    const T eps = static_cast<T>(config_.eps);
    for (std::size_t i = 0; i < grads.size(); ++i) {
      const auto g = (grads[i].value() * clip).array();
      m_[i] = (b1 * m_[i].array() + (T(1) - b1) * g).matrix();
      v_[i] = (b2 * v_[i].array() + (T(1) - b2) * g.square()).matrix();
      auto& p = reg.params[i].var->mutable_value();
      p.array() -= lr * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + eps);
    }
  }

  const AdamConfig& config() const { return config_; }
  long steps() const { return steps_; }
  std::vector<Matrix<T>>& first_moments() { return m_; }
  std::vector<Matrix<T>>& second_moments() { return v_; }
  void set_steps(long steps) { steps_ = steps; }

 private:
  AdamConfig config_;
  long steps_ = 0;
  std::vector<Matrix<T>> m_;
  std::vector<Matrix<T>> v_;
};

}  // namespace ddaebm
