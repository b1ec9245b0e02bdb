#pragma once

#include "ddaebm/autodiff.hpp"
#include "ddaebm/trainer.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <functional>
#include <string>
#include <utility>
#include <vector>

namespace testutil {

using ddaebm::MatrixD;
using ddaebm::ad::Var;

// Small networks so unit tests stay fast.
inline ddaebm::TrainConfig small_config(std::uint64_t seed = 1) {
  ddaebm::TrainConfig c;
  c.arch.trunk = {24, 24};
  c.arch.input_hidden = 8;
  c.arch.input_out = 8;
  c.arch.time_hidden = 8;
  c.arch.time_out = 8;
  c.arch.time_embed_dim = 8;
  c.arch.encoder_features = 8;
  c.batch_size = 16;
  c.total_iterations = 10;
  c.seed = seed;
  return c;
}

// Central-difference gradient of a scalar function of one matrix.
inline MatrixD numeric_grad(const std::function<double(const MatrixD&)>& f, MatrixD x,
                            double h = 1e-5) {
  MatrixD g(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double v = x.data()[i];
    x.data()[i] = v + h;
    const double up = f(x);
    x.data()[i] = v - h;
    const double down = f(x);
    x.data()[i] = v;
    g.data()[i] = (up - down) / (2 * h);
  }
  return g;
}

inline double rel_error(const MatrixD& a, const MatrixD& b) {
  const double scale = std::max({a.norm(), b.norm(), 1e-8});
  return (a - b).norm() / scale;
}

// Sample mean and its standard error.
inline std::pair<double, double> mean_se(const Eigen::VectorXd& v) {
  const double n = static_cast<double>(v.size());
  const double m = v.mean();
  return {m, std::sqrt((v.array() - m).square().sum() / (n - 1.0) / n)};
}

// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("ddaebm_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace testutil
