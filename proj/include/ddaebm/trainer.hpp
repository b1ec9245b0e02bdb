#pragma once

// The alternating minimax loop: one (generator, encoder) descent step on the
// KL bounds, then one ascent step for the energy.

#include "ddaebm/datasets.hpp"
#include "ddaebm/models.hpp"
#include "ddaebm/objectives.hpp"
#include "ddaebm/optim.hpp"
#include "ddaebm/schedule.hpp"

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace ddaebm {

// Training always runs in single precision.
using Real = float;

struct TrainConfig {
  std::string preset = "toy";

  int T = 4;
  double beta_min = 0.1;
  double beta_max = 20.0;
  TimeMap time_map = TimeMap::equidistant;

  LossWeights weights;
  Ablation ablation;

  int latent_dim = 2;
  ArchConfig arch;

  double lr_energy = 1e-4;
  double lr_generator = 1e-4;
  double lr_encoder = 1e-4;
  double adam_beta1 = 0.0;
  double adam_beta2 = 0.9;
  double adam_eps = 1e-8;
  double grad_clip = 0.0;

  double ema_decay = 0.999;
  bool ema_energy = false;

  long batch_size = 200;
  long total_iterations = 20000;
  long epochs = 0;  // image data only: when > 0, replaces total_iterations
  std::uint64_t seed = 0;

  DatasetName dataset = DatasetName::gaussians25;
  std::string data_path;
  ToyParams toy;

  std::string checkpoint_path;
  std::string metrics_path;
  long checkpoint_every = 0;  // 0: final checkpoint only
  long log_every = 0;         // progress lines on stderr; 0 disables

  double divergence_gap = 1e6;

  // Throws ConfigError naming the offending field.
  void validate() const;
  Schedule schedule() const;
  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

// Layout of one data row; channels == 0 for point data.
struct DataShape {
  int dim = 2;
  int channels = 0;
  int height = 0;
  int width = 0;

  bool is_image() const { return channels > 0; }
  friend bool operator==(const DataShape&, const DataShape&) = default;
};

// Training batches: fresh toy draws, or a shuffled pass over an image set.
class BatchSource {
 public:
  static BatchSource toy(DatasetName name, const ToyParams& params, std::uint64_t seed);
  static BatchSource images(ImageArray images, std::uint64_t seed);
  // Resolves the configured dataset (loads images from disk).
  static BatchSource from_config(const TrainConfig& config);

  MatrixD next(long n);
  DataShape shape() const;
  const ImageArray* image_set() const;

  std::string state() const;
  void restore(const std::string& state);

 private:
  BatchSource() = default;
  DatasetName name_ = DatasetName::gaussians25;
  ToyParams toy_;
  Rng rng_;
  std::shared_ptr<ImageStream> stream_;
};

struct StepMetrics {
  long iteration = 0;  // iterations completed after this step
  double loss_gen = 0.0;
  double loss_energy = 0.0;
  double energy_gap = 0.0;
  double grad_penalty = 0.0;
  double energy_real = 0.0;
  double energy_fake = 0.0;
  double wallclock = 0.0;  // seconds spent in the step

  // Equality ignores wallclock.
  bool same_values(const StepMetrics& other) const;
};

struct RunningMetrics {
  long count = 0;
  double sum_loss_gen = 0.0;
  double sum_loss_energy = 0.0;
  double sum_gap = 0.0;
  double max_abs_gap = 0.0;

  void add(const StepMetrics& m);
};

struct TrainState {
  TrainConfig config;
  Schedule schedule;
  DataShape shape;
  long iteration = 0;
  std::unique_ptr<ModelTriple<Real>> triple;
  Adam<Real> energy_opt;
  Adam<Real> generator_opt;
  Adam<Real> encoder_opt;
  Rng noise_rng;
  std::optional<BatchSource> data;
  RunningMetrics running;
};

// Fresh state: models initialized from config.seed, data stream attached.
TrainState init_state(const TrainConfig& config);
TrainState init_state(const TrainConfig& config, BatchSource data);
// No data stream; enough for sampling, evaluation, or a later attach.
TrainState init_state(const TrainConfig& config, const DataShape& shape);

// One minimization step over (generator, encoder), then one maximization step
// over the energy, then EMA. Throws DivergenceError on a non-finite loss or
// gradient, or a runaway energy gap; the offending update is not applied.
StepMetrics train_step(TrainState& state, const MatrixD& x0);
// Draws the batch from state.data.
StepMetrics train_step(TrainState& state);

using StepCallback = std::function<void(const TrainState&, const StepMetrics&)>;

// Runs until state.iteration == config.total_iterations, writing metrics and
// checkpoints as configured. On divergence a post-mortem checkpoint is written
// next to the checkpoint path before the error is rethrown.
void fit(TrainState& state, const StepCallback& on_step = {});
TrainState fit(const TrainConfig& config, const StepCallback& on_step = {});

// Diffusion steps uniform on [1, T].
std::vector<int> sample_steps(int T, long n, Rng& rng);

}  // namespace ddaebm
