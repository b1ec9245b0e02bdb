#pragma once

#include "ddaebm/autodiff.hpp"

#include <cstdint>
#include <random>
#include <string>

namespace ddaebm {

// Seeded random stream whose complete state (engine plus the normal
// distribution's cached deviate) round-trips through a string.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  double normal() { return normal_(engine_); }
  double uniform() { return uniform_(engine_); }
  // Uniform integer in [lo, hi].
  int uniform_int(int lo, int hi) {
    return std::uniform_int_distribution<int>(lo, hi)(engine_);
  }

  template <typename T = double>
  ad::Matrix<T> normal_matrix(Eigen::Index rows, Eigen::Index cols) {
    ad::Matrix<T> m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(normal());
    return m;
  }

  // Independent child stream; deterministic given this stream's state.
  Rng split() { return Rng(engine_()); }

  std::mt19937_64& engine() { return engine_; }

  std::string serialize() const;
  static Rng deserialize(const std::string& state);

  friend bool operator==(const Rng& a, const Rng& b) {
    return a.engine_ == b.engine_ && a.normal_ == b.normal_;
  }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

}  // namespace ddaebm
