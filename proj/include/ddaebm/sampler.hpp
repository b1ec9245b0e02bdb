#pragma once

// Ancestral sampling through the learned denoising chain, plus the optional
// one-step energy-gradient refinement of the final sample.

#include "ddaebm/models.hpp"
#include "ddaebm/schedule.hpp"

#include <cstdint>

namespace ddaebm {

struct SampleRequest {
  long n = 1;
  bool use_ema = true;
  bool refine = false;
  double refine_step_size = 0.0;  // 0 selects default_refine_step
  bool zero_latent = false;       // generator trained without latents
  std::uint64_t seed = 0;

  void validate() const;
};

// Instrumentation; every field counts whole-batch evaluations or draws.
struct SampleStats {
  long generator_evaluations = 0;
  long energy_gradient_evaluations = 0;
  long noise_draws = 0;   // Gaussian noise tensors: x_T plus each nonzero-variance step
  long latent_draws = 0;  // z tensors, one per step (zeros count when zero_latent)
};

// First-step noise variance 1 - alpha_bar_1.
double default_refine_step(const Schedule& s);

// x_T ~ N(0, I); for t = T..1: z ~ N(0, I), x0_hat = G(x_t, z, t),
// x_{t-1} ~ q(x_{t-1} | x_t, x0_hat). Batch norm runs on running statistics.
template <typename T>
MatrixD ancestral_sample(ModelTriple<T>& triple, const Schedule& s, const SampleRequest& request,
                         SampleStats* stats = nullptr);

// x0 + step_size * grad_x E(x0, 0). The energy EMA shadow is used when requested
// and tracked. step_size must be > 0 unless allow_zero_step is set.
template <typename T>
MatrixD refine(ModelTriple<T>& triple, const MatrixD& x0, double step_size,
               bool use_ema_energy = false, SampleStats* stats = nullptr,
               bool allow_zero_step = false);

// ancestral_sample followed by refine when request.refine is set.
template <typename T>
MatrixD sample(ModelTriple<T>& triple, const Schedule& s, const SampleRequest& request,
               SampleStats* stats = nullptr);

}  // namespace ddaebm
