#pragma once

// Discretized VP-SDE forward process: per-step noise levels and the Gaussian
// kernels derived from them.

#include "ddaebm/autodiff.hpp"

#include <span>
#include <string>
#include <vector>

namespace ddaebm {

using MatrixD = ad::Matrix<double>;

enum class TimeMap { equidistant, truncated };

std::string to_string(TimeMap map);
TimeMap time_map_from_string(const std::string& name);

// All arrays are indexed by the diffusion step t = 0..T. Entries of beta and
// beta_tilde at t = 0 are 0 (no step below x0).
struct Schedule {
  int T = 0;
  double beta_min = 0.0;
  double beta_max = 0.0;
  TimeMap time_map = TimeMap::equidistant;
  std::vector<double> t_prime;
  std::vector<double> sigma2;
  std::vector<double> beta;
  std::vector<double> alpha_bar;
  std::vector<double> beta_tilde;

  // Posterior variance used when scoring a density under the posterior. Equals
  // beta_tilde except at t = 1, where the zero variance is replaced by
  // beta_tilde[2] (beta[1] when T = 1).
  double beta_tilde_clipped(int t) const;

  // Coefficients of x0 and x_t in the posterior mean.
  double posterior_coef_x0(int t) const;
  double posterior_coef_xt(int t) const;
};

// Throws std::invalid_argument on T < 1, 0 >= beta_min, beta_min >= beta_max,
// or a truncated map whose steps would not be strictly increasing.
Schedule make_schedule(int T, double beta_min, double beta_max, TimeMap time_map);

// VP-SDE variance at continuous time s in [0, 1].
double vp_sigma2(double s, double beta_min, double beta_max);

// sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) noise.
MatrixD forward_sample(const Schedule& s, const MatrixD& x0, int t, const MatrixD& noise);
// Per-row step indices.
MatrixD forward_sample(const Schedule& s, const MatrixD& x0, std::span<const int> t,
                       const MatrixD& noise);

// One draw of q(x_t | x_{t-1}): sqrt(1 - beta_t) x_prev + sqrt(beta_t) noise.
MatrixD forward_step(const Schedule& s, const MatrixD& x_prev, int t, const MatrixD& noise);

struct PosteriorParams {
  MatrixD mean;
  double var = 0.0;
};

// Gaussian posterior q(x_{t-1} | x_t, x0); requires 1 <= t <= T.
PosteriorParams posterior_params(const Schedule& s, const MatrixD& x_t, const MatrixD& x0, int t);

// Per-row log N(x_t; sqrt(1 - beta_t) x_prev, beta_t I), summed over columns.
Eigen::VectorXd log_q_transition(const Schedule& s, const MatrixD& x_t, const MatrixD& x_prev,
                                 int t);

}  // namespace ddaebm
