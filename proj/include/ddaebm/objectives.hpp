#pragma once

// Loss terms of the two-player game and the closed-form Gaussian quantities
// they are built from.

#include "ddaebm/models.hpp"
#include "ddaebm/rng.hpp"
#include "ddaebm/schedule.hpp"

#include <functional>
#include <span>
#include <vector>

namespace ddaebm {

struct LossWeights {
  double w = 1.0;
  double w_mid = 1.0;
  double gamma = 0.05;           // gradient-penalty coefficient
  double fake_term_weight = 1.0; // weight on the generated-sample energy term
  double l2_multiplier = 1.0;    // relative weight of the reverse-KL bound

  void validate() const;
  friend bool operator==(const LossWeights&, const LossWeights&) = default;
};

struct Ablation {
  bool no_latent = false; // z replaced by zeros in the generator's denoising model
  bool kl_only = false;   // drop the reverse-KL (ELBO) bound
  bool drop_qpsi = false; // additionally drop -log q_psi from the forward-KL bound

  void validate() const;
  friend bool operator==(const Ablation&, const Ablation&) = default;
};

// ---- closed-form Gaussian helpers (double precision) -----------------------

// Per-row log density of N(mean, var I) summed over columns; var > 0.
Eigen::VectorXd gaussian_log_prob(const MatrixD& x, const MatrixD& mean, double var);
// Elementwise variances.
Eigen::VectorXd gaussian_log_prob(const MatrixD& x, const MatrixD& mean, const MatrixD& var);

// Entropy of a diagonal Gaussian: dim/2 (1 + ln 2 pi) + 1/2 sum(logvar).
// logvar holds one entry per dimension, or a single entry shared by all.
double gaussian_entropy(int dim, std::span<const double> logvar);

// Per-row KL(N(mean, exp(logvar)) || N(0, I)).
Eigen::VectorXd kl_to_standard_normal(const MatrixD& mean, const MatrixD& logvar);

// lambda(t - 1) = w * t'(t)^(log_{1/2}(w_mid / w)); requires 1 <= t <= T.
double importance_ratio(const Schedule& s, int t, const LossWeights& weights);

struct DiagGaussian {
  Eigen::VectorXd mean;
  Eigen::VectorXd var;
};

double kl_divergence(const DiagGaussian& p, const DiagGaussian& q);
// KL(p || q) + KL(q || p).
double jeffrey_divergence(const DiagGaussian& p, const DiagGaussian& q);

// ---- differentiable per-row terms ------------------------------------------

// (n x 1) column built from per-row step indices.
template <typename T>
Var<T> step_column(std::span<const int> t, const std::function<double(int)>& f);

// log N(x; mean, var_i I) per row, with one variance per row.
template <typename T>
Var<T> gaussian_log_prob_rows(const Var<T>& x, const Var<T>& mean, std::span<const double> var);

// log q(x_t | x_prev) per row for per-row steps t.
template <typename T>
Var<T> log_q_transition_rows(const Schedule& s, const Var<T>& x_t, const Var<T>& x_prev,
                             std::span<const int> t);

// log q_psi(z | .) for a diagonal Gaussian with the given mean and logvar.
template <typename T>
Var<T> diag_gaussian_log_prob(const Var<T>& z, const Var<T>& mean, const Var<T>& logvar);

template <typename T>
Var<T> kl_to_standard_normal_rows(const Var<T>& mean, const Var<T>& logvar);

// ---- the two losses -------------------------------------------------------

// The three players as plain callables. Model-backed players are built with
// make_players; tests substitute analytic ones.
template <typename T>
struct Players {
  int latent_dim = 0;
  std::function<Var<T>(const Var<T>& x, std::span<const int> t)> energy;
  std::function<Var<T>(const Var<T>& x_t, const Var<T>& z, std::span<const int> t)> generator;
  std::function<GaussianParams<T>(const Var<T>& x_prev, const Var<T>& x_t,
                                  std::span<const int> t)>
      encoder;
};

enum class Substep { minimize, maximize };

// Minimize: energy frozen, generator and encoder trainable.
// Maximize: generator and encoder frozen, energy trainable.
template <typename T>
Players<T> make_players(ModelTriple<T>& triple, Substep substep);

struct GeneratorDiagnostics {
  double loss = 0.0;
  double l1 = 0.0;
  double l2 = 0.0;
  double mean_lambda = 0.0;
  std::vector<int> step_counts; // histogram of sampled t (index t), the lambda support
};

template <typename T>
struct GeneratorLossTerms {
  Var<T> loss;                 // scalar to minimize
  Var<T> neg_energy;           // -E(x_{t-1}, t-1) per row
  Var<T> neg_log_q_transition; // -log q(x_t | x_{t-1}) per row
  Var<T> neg_log_qpsi;         // -log q_psi(z | x_{t-1}, x_t) per row (undefined when dropped)
  Var<T> l1;                   // per-row forward-KL bound
  Var<T> l2;                   // per-row weighted reverse-KL bound (undefined when dropped)
  GeneratorDiagnostics diagnostics;
};

// One-sample Monte-Carlo estimate of the forward- plus reverse-KL upper bounds.
// t holds one step in [1, T] per row of x0.
template <typename T>
GeneratorLossTerms<T> loss_generator(const Players<T>& players, const Schedule& s,
                                     const LossWeights& weights, const Ablation& ablation,
                                     const MatrixD& x0, std::span<const int> t, Rng& rng);

struct EnergyDiagnostics {
  double loss = 0.0;
  double energy_real = 0.0;
  double energy_fake = 0.0;
  double energy_gap = 0.0;   // mean real energy - mean fake energy
  double grad_penalty = 0.0; // E ||grad_x (E + log q)||^2 over real pairs
};

template <typename T>
struct EnergyLossTerms {
  Var<T> loss;
  EnergyDiagnostics diagnostics;
};

template <typename T>
EnergyLossTerms<T> loss_energy(const Players<T>& players, const Schedule& s,
                               const LossWeights& weights, const Ablation& ablation,
                               const MatrixD& x0, std::span<const int> t, Rng& rng);

// The inner quantity of the gradient penalty, grad_x [E(x, t-1) + log q(x_t | x)],
// per row; exposed for finite-difference checks.
template <typename T>
Var<T> penalty_gradient(const Players<T>& players, const Schedule& s, const Var<T>& x_prev,
                        const Var<T>& x_t, std::span<const int> t, bool create_graph);

// Draw x_{t-1} ~ q(x_{t-1} | x_t, x0_hat) by reparameterization; rows with zero
// posterior variance get the mean.
template <typename T>
Var<T> sample_posterior(const Schedule& s, const Var<T>& x_t, const Var<T>& x0_hat,
                        std::span<const int> t, Rng& rng);

}  // namespace ddaebm
