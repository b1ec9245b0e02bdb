#pragma once

// Layers used by the toy-scale networks. Each layer owns its parameters as
// graph leaves; a "frozen" forward pass uses detached copies so no gradient
// can reach them.

#include "ddaebm/autodiff.hpp"
#include "ddaebm/rng.hpp"

#include <cmath>
#include <span>
#include <string>
#include <vector>

namespace ddaebm::nn {

using ad::Matrix;
using ad::Var;

template <typename T>
struct ParamRef {
  std::string name;
  Var<T>* var;
};

template <typename T>
struct BufferRef {
  std::string name;
  Matrix<T>* value;
};

template <typename T>
struct Registry {
  std::vector<ParamRef<T>> params;
  std::vector<BufferRef<T>> buffers;
};

struct Pass {
  bool train = true;   // batch statistics + running-stat updates in batch norm
  bool frozen = false; // parameters enter the graph as constants
};

template <typename T>
inline Var<T> use(const Var<T>& p, const Pass& pass) {
  return pass.frozen ? p.detach() : p;
}

template <typename T>
class Linear {
 public:
  Linear() = default;
  // Fan-in scaled uniform init, U(-gain/sqrt(in), gain/sqrt(in)) for weight and bias.
  Linear(int in, int out, Rng& rng, double gain = 1.0) {
    const double bound = gain / std::sqrt(static_cast<double>(in));
    Matrix<T> w(in, out);
    Matrix<T> b(1, out);
    for (Eigen::Index i = 0; i < w.size(); ++i)
      w.data()[i] = static_cast<T>((2.0 * rng.uniform() - 1.0) * bound);
    for (Eigen::Index i = 0; i < b.size(); ++i)
      b.data()[i] = static_cast<T>((2.0 * rng.uniform() - 1.0) * bound);
    weight_ = Var<T>::leaf(std::move(w));
    bias_ = Var<T>::leaf(std::move(b));
  }

  Var<T> forward(const Var<T>& x, const Pass& pass) const {
    if (x.cols() != weight_.rows())
      throw std::invalid_argument("linear layer expects " + std::to_string(weight_.rows()) +
                                  " input features, got " + std::to_string(x.cols()));
    return ad::affine(x, use(weight_, pass), use(bias_, pass));
  }

  int in_features() const { return static_cast<int>(weight_.rows()); }
  int out_features() const { return static_cast<int>(weight_.cols()); }

  void collect(const std::string& prefix, Registry<T>& reg) {
    reg.params.push_back({prefix + ".weight", &weight_});
    reg.params.push_back({prefix + ".bias", &bias_});
  }

  Var<T>& weight() { return weight_; }
  Var<T>& bias() { return bias_; }

 private:
  Var<T> weight_;
  Var<T> bias_;
};

// Single shared negative slope, initialized to 0.25.
template <typename T>
class PReLU {
 public:
  PReLU() : slope_(Var<T>::leaf(Matrix<T>::Constant(1, 1, T(0.25)))) {}

  Var<T> forward(const Var<T>& x, const Pass& pass) const {
    return ad::prelu(x, use(slope_, pass));
  }

  void collect(const std::string& prefix, Registry<T>& reg) {
    reg.params.push_back({prefix + ".slope", &slope_});
  }

 private:
  Var<T> slope_;
};

template <typename T>
class BatchNorm {
 public:
  BatchNorm() = default;
  explicit BatchNorm(int features)
      : gamma_(Var<T>::leaf(Matrix<T>::Ones(1, features))),
        beta_(Var<T>::leaf(Matrix<T>::Zero(1, features))),
        running_mean_(Matrix<T>::Zero(1, features)),
        running_var_(Matrix<T>::Ones(1, features)) {}

  Var<T> forward(const Var<T>& x, const Pass& pass) {
    const auto n = x.rows();
    Var<T> normalized;
    if (pass.train) {
      if (n < 2) throw std::invalid_argument("batch norm in training mode needs >= 2 rows");
      const T inv_n = T(1) / static_cast<T>(n);
      auto mu = ad::scale(ad::sum_rows(x), inv_n);
      auto centered = x - ad::expand_rows(mu, n);
      auto var = ad::scale(ad::sum_rows(ad::square(centered)), inv_n);
      auto inv_std = ad::pow(ad::add_scalar(var, kEps), T(-0.5));
      normalized = ad::mul_row(centered, inv_std);
      const T unbias = static_cast<T>(n) / static_cast<T>(n - 1);
      running_mean_ = (T(1) - kMomentum) * running_mean_ + kMomentum * mu.value();
      running_var_ = (T(1) - kMomentum) * running_var_ + kMomentum * unbias * var.value();
    } else {
      Matrix<T> shift = -running_mean_;
      Matrix<T> inv = (running_var_.array() + kEps).rsqrt();
      normalized = ad::mul_row(ad::add_row(x, Var<T>::constant(std::move(shift))),
                               Var<T>::constant(std::move(inv)));
    }
    return ad::add_row(ad::mul_row(normalized, use(gamma_, pass)), use(beta_, pass));
  }

  void collect(const std::string& prefix, Registry<T>& reg) {
    reg.params.push_back({prefix + ".gamma", &gamma_});
    reg.params.push_back({prefix + ".beta", &beta_});
    reg.buffers.push_back({prefix + ".running_mean", &running_mean_});
    reg.buffers.push_back({prefix + ".running_var", &running_var_});
  }

 private:
  static constexpr T kEps = T(1e-5);
  static constexpr T kMomentum = T(0.1);
  Var<T> gamma_;
  Var<T> beta_;
  Matrix<T> running_mean_;
  Matrix<T> running_var_;
};

// Transformer-style sinusoidal features of integer steps: [sin(t w_k), cos(t w_k)],
// w_k = 10000^(-k / (dim/2 - 1)).
template <typename T>
Matrix<T> sinusoidal_embedding(std::span<const int> t, int dim) {
  if (dim < 4 || dim % 2 != 0) throw std::invalid_argument("time embedding width must be even and >= 4");
  const int half = dim / 2;
  Matrix<T> out(static_cast<Eigen::Index>(t.size()), dim);
  for (std::size_t i = 0; i < t.size(); ++i) {
    for (int k = 0; k < half; ++k) {
      const double freq = std::exp(-std::log(10000.0) * k / (half - 1));
      const double arg = static_cast<double>(t[i]) * freq;
      out(static_cast<Eigen::Index>(i), k) = static_cast<T>(std::sin(arg));
      out(static_cast<Eigen::Index>(i), half + k) = static_cast<T>(std::cos(arg));
    }
  }
  return out;
}

}  // namespace ddaebm::nn
