#pragma once

// Energy, generator and encoder networks. All three share one layout: an
// input branch and a sinusoidal time branch, concatenated and decoded by a
// fully connected trunk.

#include "ddaebm/nn.hpp"

#include <atomic>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace ddaebm {

using ad::Matrix;
using ad::Var;

struct ArchConfig {
  int time_embed_dim = 16;
  int input_hidden = 16;
  int input_out = 32;
  int time_hidden = 16;
  int time_out = 32;
  std::vector<int> trunk{300, 300};
  int encoder_features = 16;

  friend bool operator==(const ArchConfig&, const ArchConfig&) = default;
};

template <typename T>
class TwoBranchNet {
 public:
  TwoBranchNet() = default;
  TwoBranchNet(int in_dim, int out_dim, const ArchConfig& arch, bool batch_norm, Rng& rng,
               double head_gain = 1.0);

  Var<T> forward(const Var<T>& x, std::span<const int> t, const nn::Pass& pass);

  int in_dim() const { return in_dim_; }
  int out_dim() const { return out_dim_; }
  void collect(const std::string& prefix, nn::Registry<T>& reg);
  nn::Linear<T>& head() { return head_; }

 private:
  int in_dim_ = 0;
  int out_dim_ = 0;
  int time_dim_ = 0;
  bool batch_norm_ = false;
  nn::Linear<T> in_fc1_, in_fc2_;
  nn::PReLU<T> in_act_;
  nn::BatchNorm<T> in_bn_;
  nn::Linear<T> t_fc1_, t_fc2_;
  nn::PReLU<T> t_act_;
  std::vector<nn::Linear<T>> trunk_fc_;
  std::vector<nn::PReLU<T>> trunk_act_;
  std::vector<nn::BatchNorm<T>> trunk_bn_;
  nn::Linear<T> head_;
};

// E(x, t) = -1/2 ||x - f(x, t)||^2, so E <= 0 everywhere.
template <typename T>
class EnergyModel {
 public:
  EnergyModel() = default;
  EnergyModel(int data_dim, const ArchConfig& arch, Rng& rng);

  // (n x 1) energies.
  Var<T> energy(const Var<T>& x, std::span<const int> t, const nn::Pass& pass);
  // The backbone f(x, t).
  Var<T> backbone(const Var<T>& x, std::span<const int> t, const nn::Pass& pass);

  int data_dim() const { return net_.in_dim(); }
  long evaluations() const { return evaluations_; }
  void reset_evaluations() { evaluations_ = 0; }
  nn::Registry<T> registry();

 private:
  long evaluations_ = 0;
  TwoBranchNet<T> net_;
};

template <typename T>
class GeneratorModel {
 public:
  GeneratorModel() = default;
  GeneratorModel(int data_dim, int latent_dim, const ArchConfig& arch, Rng& rng);

  // x0 prediction G(x_t, z, t). Each call is one network evaluation for every row.
  Var<T> generate_x0(const Var<T>& x_t, const Var<T>& z, std::span<const int> t,
                     const nn::Pass& pass);

  int data_dim() const { return data_dim_; }
  int latent_dim() const { return latent_dim_; }
  long evaluations() const { return evaluations_; }
  void reset_evaluations() { evaluations_ = 0; }
  nn::Registry<T> registry();
  TwoBranchNet<T>& net() { return net_; }

 private:
  int data_dim_ = 0;
  int latent_dim_ = 0;
  long evaluations_ = 0;
  TwoBranchNet<T> net_;
};

template <typename T>
struct GaussianParams {
  Var<T> mean;
  Var<T> logvar;
};

template <typename T>
class EncoderModel {
 public:
  static constexpr double kLogvarMin = -10.0;
  static constexpr double kLogvarMax = 10.0;

  EncoderModel() = default;
  EncoderModel(int data_dim, int latent_dim, const ArchConfig& arch, Rng& rng);

  // q(z | x_{t-1}, x_t) with logvar clamped to [kLogvarMin, kLogvarMax].
  GaussianParams<T> encode(const Var<T>& x_prev, const Var<T>& x_t, std::span<const int> t,
                           const nn::Pass& pass);

  int latent_dim() const { return latent_dim_; }
  nn::Registry<T> registry();
  nn::Linear<T>& logvar_head() { return logvar_head_; }

 private:
  int data_dim_ = 0;
  int latent_dim_ = 0;
  TwoBranchNet<T> net_;
  nn::Linear<T> mean_head_;
  nn::Linear<T> logvar_head_;
};

template <typename T>
struct ModelTriple {
  int data_dim = 0;
  int latent_dim = 0;
  ArchConfig arch;
  EnergyModel<T> energy;
  GeneratorModel<T> generator;
  EncoderModel<T> encoder;
  GeneratorModel<T> ema_generator;
  std::optional<EnergyModel<T>> ema_energy;
};

template <typename T>
ModelTriple<T> make_model_triple(int data_dim, int latent_dim, const ArchConfig& arch,
                                 bool track_energy_ema, Rng& rng);

// Copies parameter and buffer values (shapes must agree).
template <typename T>
void copy_values(nn::Registry<T> dst, nn::Registry<T> src);

// shadow <- decay * shadow + (1 - decay) * current, for parameters and batch-norm buffers.
template <typename T>
void ema_update(ModelTriple<T>& triple, double decay);

}  // namespace ddaebm
