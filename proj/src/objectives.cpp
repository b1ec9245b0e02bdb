#include "ddaebm/objectives.hpp"

#include "ddaebm/errors.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace ddaebm {

namespace {
constexpr double kLog2Pi = 1.8378770664093453;  // ln(2 pi)
}

void LossWeights::validate() const {
  if (!(w > 0.0) || !(w_mid > 0.0)) throw ConfigError("importance-ratio weights must be > 0");
  if (!(gamma >= 0.0)) throw ConfigError("gradient-penalty gamma must be >= 0");
  if (!(fake_term_weight > 0.0 && fake_term_weight <= 1.0))
    throw ConfigError("fake_term_weight must lie in (0, 1]");
  if (!(l2_multiplier >= 0.0)) throw ConfigError("l2_multiplier must be >= 0");
}

void Ablation::validate() const {
  if (drop_qpsi && !kl_only) throw ConfigError("ablation drop_qpsi requires kl_only");
}

Eigen::VectorXd gaussian_log_prob(const MatrixD& x, const MatrixD& mean, double var) {
  if (!(var > 0.0)) throw std::invalid_argument("gaussian_log_prob needs var > 0");
  if (x.rows() != mean.rows() || x.cols() != mean.cols())
    throw std::invalid_argument("shape mismatch in gaussian_log_prob");
  const double d = static_cast<double>(x.cols());
  Eigen::VectorXd sq = (x - mean).rowwise().squaredNorm();
  return (-0.5 * d * (kLog2Pi + std::log(var))) - (0.5 / var) * sq.array();
}

Eigen::VectorXd gaussian_log_prob(const MatrixD& x, const MatrixD& mean, const MatrixD& var) {
  if (x.rows() != mean.rows() || x.cols() != mean.cols() || var.rows() != x.rows() ||
      var.cols() != x.cols())
    throw std::invalid_argument("shape mismatch in gaussian_log_prob");
  if ((var.array() <= 0.0).any()) throw std::invalid_argument("gaussian_log_prob needs var > 0");
  MatrixD terms = -0.5 * (kLog2Pi + var.array().log() + (x - mean).array().square() / var.array());
  return terms.rowwise().sum();
}

double gaussian_entropy(int dim, std::span<const double> logvar) {
  if (dim < 1) throw std::invalid_argument("gaussian_entropy needs dim >= 1");
  double logdet = 0.0;
  if (logvar.size() == 1) {
    logdet = dim * logvar[0];
  } else if (static_cast<int>(logvar.size()) == dim) {
    for (double v : logvar) logdet += v;
  } else {
    throw std::invalid_argument("gaussian_entropy: logvar must have 1 or dim entries");
  }
  return 0.5 * dim * (1.0 + kLog2Pi) + 0.5 * logdet;
}

Eigen::VectorXd kl_to_standard_normal(const MatrixD& mean, const MatrixD& logvar) {
  if (mean.rows() != logvar.rows() || mean.cols() != logvar.cols())
    throw std::invalid_argument("shape mismatch in kl_to_standard_normal");
  MatrixD terms = mean.array().square() + logvar.array().exp() - 1.0 - logvar.array();
  return 0.5 * terms.rowwise().sum();
}

double importance_ratio(const Schedule& s, int t, const LossWeights& weights) {
  if (t < 1 || t > s.T) throw std::out_of_range("importance ratio needs 1 <= t <= T");
  // log_{1/2}(r) = -log2(r)
  const double exponent = -std::log2(weights.w_mid / weights.w);
  if (exponent == 0.0) return weights.w;
  return weights.w * std::pow(s.t_prime[t], exponent);
}

double kl_divergence(const DiagGaussian& p, const DiagGaussian& q) {
  if (p.mean.size() != q.mean.size() || p.var.size() != p.mean.size() ||
      q.var.size() != q.mean.size())
    throw std::invalid_argument("kl_divergence: dimension mismatch");
  if ((p.var.array() <= 0.0).any() || (q.var.array() <= 0.0).any())
    throw std::invalid_argument("kl_divergence needs positive variances");
  const auto ratio = p.var.array() / q.var.array();
  const auto diff2 = (p.mean - q.mean).array().square() / q.var.array();
  return 0.5 * (ratio + diff2 - 1.0 - ratio.log()).sum();
}

double jeffrey_divergence(const DiagGaussian& p, const DiagGaussian& q) {
  return kl_divergence(p, q) + kl_divergence(q, p);
}

// ---- differentiable terms ---------------------------------------------------

template <typename T>
Var<T> step_column(std::span<const int> t, const std::function<double(int)>& f) {
  Matrix<T> col(static_cast<Eigen::Index>(t.size()), 1);
  for (std::size_t i = 0; i < t.size(); ++i) col(static_cast<Eigen::Index>(i), 0) = static_cast<T>(f(t[i]));
  return Var<T>::constant(std::move(col));
}

template <typename T>
Var<T> gaussian_log_prob_rows(const Var<T>& x, const Var<T>& mean, std::span<const double> var) {
  if (static_cast<Eigen::Index>(var.size()) != x.rows())
    throw std::invalid_argument("gaussian_log_prob_rows: one variance per row required");
  const double d = static_cast<double>(x.cols());
  Matrix<T> offset(x.rows(), 1);
  Matrix<T> inv(x.rows(), 1);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    if (!(var[i] > 0.0)) throw std::invalid_argument("gaussian_log_prob_rows needs var > 0");
    offset(i, 0) = static_cast<T>(-0.5 * d * (kLog2Pi + std::log(var[i])));
    inv(i, 0) = static_cast<T>(-0.5 / var[i]);
  }
  auto sq = ad::row_sq_norm(x - mean);
  return ad::mul_col(sq, Var<T>::constant(std::move(inv))) + Var<T>::constant(std::move(offset));
}

template <typename T>
Var<T> log_q_transition_rows(const Schedule& s, const Var<T>& x_t, const Var<T>& x_prev,
                             std::span<const int> t) {
  std::vector<double> var(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (t[i] < 1 || t[i] > s.T) throw std::out_of_range("transition step outside [1, T]");
    var[i] = s.beta[t[i]];
  }
  auto scale = step_column<T>(t, [&](int k) { return std::sqrt(1.0 - s.beta[k]); });
  return gaussian_log_prob_rows(x_t, ad::mul_col(x_prev, scale), var);
}

template <typename T>
Var<T> diag_gaussian_log_prob(const Var<T>& z, const Var<T>& mean, const Var<T>& logvar) {
  const T offset = static_cast<T>(-0.5 * kLog2Pi * static_cast<double>(z.cols()));
  auto quad = ad::square(z - mean) * ad::exp(-logvar);
  return add_scalar(ad::scale(ad::sum_cols(logvar + quad), T(-0.5)), offset);
}

template <typename T>
Var<T> kl_to_standard_normal_rows(const Var<T>& mean, const Var<T>& logvar) {
  auto terms = ad::add_scalar(ad::square(mean) + ad::exp(logvar) - logvar, T(-1));
  return ad::scale(ad::sum_cols(terms), T(0.5));
}

template <typename T>
Var<T> sample_posterior(const Schedule& s, const Var<T>& x_t, const Var<T>& x0_hat,
                        std::span<const int> t, Rng& rng) {
  auto c0 = step_column<T>(t, [&](int k) { return s.posterior_coef_x0(k); });
  auto ct = step_column<T>(t, [&](int k) { return s.posterior_coef_xt(k); });
  auto sd = step_column<T>(t, [&](int k) { return std::sqrt(s.beta_tilde[k]); });
  auto mean = ad::mul_col(x0_hat, c0) + ad::mul_col(x_t, ct);
  auto eps = Var<T>::constant(rng.normal_matrix<T>(x_t.rows(), x_t.cols()));
  return mean + ad::mul_col(eps, sd);
}

template <typename T>
Players<T> make_players(ModelTriple<T>& triple, Substep substep) {
  Players<T> p;
  p.latent_dim = triple.latent_dim;
  nn::Pass energy_pass{.train = true, .frozen = substep == Substep::minimize};
  nn::Pass other_pass{.train = true, .frozen = substep == Substep::maximize};
  p.energy = [&triple, energy_pass](const Var<T>& x, std::span<const int> t) {
    return triple.energy.energy(x, t, energy_pass);
  };
  p.generator = [&triple, other_pass](const Var<T>& x_t, const Var<T>& z, std::span<const int> t) {
    return triple.generator.generate_x0(x_t, z, t, other_pass);
  };
  p.encoder = [&triple, other_pass](const Var<T>& x_prev, const Var<T>& x_t,
                                    std::span<const int> t) {
    return triple.encoder.encode(x_prev, x_t, t, other_pass);
  };
  return p;
}

namespace {

std::vector<int> minus_one(std::span<const int> t) {
  std::vector<int> out(t.begin(), t.end());
  for (int& v : out) --v;
  return out;
}

void check_steps(const Schedule& s, const MatrixD& x0, std::span<const int> t) {
  if (static_cast<Eigen::Index>(t.size()) != x0.rows())
    throw std::invalid_argument("one diffusion step per data row required");
  for (int v : t)
    if (v < 1 || v > s.T) throw std::out_of_range("diffusion step outside [1, T]");
}

// Real pair (x_{t-1}, x_t) from the forward chain, in double precision.
std::pair<MatrixD, MatrixD> forward_pair(const Schedule& s, const MatrixD& x0,
                                         std::span<const int> t, Rng& rng) {
  const auto prev = minus_one(t);
  MatrixD noise_prev = rng.normal_matrix(x0.rows(), x0.cols());
  MatrixD x_prev = forward_sample(s, x0, prev, noise_prev);
  MatrixD noise_step = rng.normal_matrix(x0.rows(), x0.cols());
  MatrixD x_t(x0.rows(), x0.cols());
  for (Eigen::Index i = 0; i < x0.rows(); ++i) {
    const double b = s.beta[t[i]];
    x_t.row(i) = std::sqrt(1.0 - b) * x_prev.row(i) + std::sqrt(b) * noise_step.row(i);
  }
  return {std::move(x_prev), std::move(x_t)};
}

template <typename T>
Var<T> draw_latent(const Ablation& ablation, Eigen::Index rows, int latent_dim, Rng& rng) {
  if (ablation.no_latent) return Var<T>::constant(Matrix<T>::Zero(rows, latent_dim));
  return Var<T>::constant(rng.normal_matrix<T>(rows, latent_dim));
}

template <typename T>
double mean_of(const Var<T>& v) {
  return static_cast<double>(v.value().mean());
}

}  // namespace

template <typename T>
GeneratorLossTerms<T> loss_generator(const Players<T>& players, const Schedule& s,
                                     const LossWeights& weights, const Ablation& ablation,
                                     const MatrixD& x0, std::span<const int> t, Rng& rng) {
  check_steps(s, x0, t);
  const auto n = x0.rows();
  const auto prev = minus_one(t);
  GeneratorLossTerms<T> out;

  // Forward-KL bound on samples of the generator's own denoising model.
  MatrixD noise_t = rng.normal_matrix(n, x0.cols());
  auto x_t = Var<T>::constant(forward_sample(s, x0, t, noise_t).template cast<T>());
  auto z = draw_latent<T>(ablation, n, players.latent_dim, rng);
  auto x0_hat = players.generator(x_t, z, t);
  auto x_prev = sample_posterior(s, x_t, x0_hat, t, rng);

  out.neg_energy = -players.energy(x_prev, prev);
  out.neg_log_q_transition = -log_q_transition_rows(s, x_t, x_prev, t);
  out.l1 = out.neg_energy + out.neg_log_q_transition;
  if (!ablation.no_latent && !ablation.drop_qpsi) {
    auto q = players.encoder(x_prev, x_t, t);
    out.neg_log_qpsi = -diag_gaussian_log_prob(z, q.mean, q.logvar);
    out.l1 = out.l1 + out.neg_log_qpsi;
  }
  auto loss = ad::mean(out.l1);
  out.diagnostics.l1 = mean_of(out.l1);

  out.diagnostics.step_counts.assign(s.T + 1, 0);
  double lambda_sum = 0.0;
  for (int v : t) {
    ++out.diagnostics.step_counts[v];
    lambda_sum += importance_ratio(s, v, weights);
  }
  out.diagnostics.mean_lambda = lambda_sum / static_cast<double>(n);

  if (!ablation.kl_only) {
    // Reverse-KL bound on true forward-chain pairs, reweighted by lambda.
    auto [real_prev_d, real_t_d] = forward_pair(s, x0, t, rng);
    auto real_prev = Var<T>::constant(real_prev_d.template cast<T>());
    auto real_t = Var<T>::constant(real_t_d.template cast<T>());
    std::vector<double> var(n);
    for (Eigen::Index i = 0; i < n; ++i) var[i] = s.beta_tilde_clipped(t[i]);
    auto c0 = step_column<T>(t, [&](int k) { return s.posterior_coef_x0(k); });
    auto ct = step_column<T>(t, [&](int k) { return s.posterior_coef_xt(k); });
    auto lambda = step_column<T>(t, [&](int k) { return importance_ratio(s, k, weights); });

    Var<T> bracket;
    if (ablation.no_latent) {
      auto zero = Var<T>::constant(Matrix<T>::Zero(n, players.latent_dim));
      auto rec = players.generator(real_t, zero, t);
      auto mean = ad::mul_col(rec, c0) + ad::mul_col(real_t, ct);
      bracket = -gaussian_log_prob_rows(real_prev, mean, var);
    } else {
      auto q = players.encoder(real_prev, real_t, t);
      auto eps = Var<T>::constant(rng.normal_matrix<T>(n, players.latent_dim));
      auto z_post = q.mean + eps * ad::exp(ad::scale(q.logvar, T(0.5)));
      auto rec = players.generator(real_t, z_post, t);
      auto mean = ad::mul_col(rec, c0) + ad::mul_col(real_t, ct);
      bracket = kl_to_standard_normal_rows(q.mean, q.logvar) -
                gaussian_log_prob_rows(real_prev, mean, var);
    }
    out.l2 = ad::mul_col(bracket, lambda);
    out.diagnostics.l2 = mean_of(out.l2);
    loss = loss + ad::scale(ad::mean(out.l2), static_cast<T>(weights.l2_multiplier));
  }

  out.loss = loss;
  out.diagnostics.loss = static_cast<double>(loss.item());
  return out;
}

template <typename T>
Var<T> penalty_gradient(const Players<T>& players, const Schedule& s, const Var<T>& x_prev,
                        const Var<T>& x_t, std::span<const int> t, bool create_graph) {
  const auto prev = minus_one(t);
  auto inner = ad::sum(players.energy(x_prev, prev) + log_q_transition_rows(s, x_t, x_prev, t));
  return ad::grad(inner, {x_prev}, create_graph)[0];
}

template <typename T>
EnergyLossTerms<T> loss_energy(const Players<T>& players, const Schedule& s,
                               const LossWeights& weights, const Ablation& ablation,
                               const MatrixD& x0, std::span<const int> t, Rng& rng) {
  check_steps(s, x0, t);
  const auto n = x0.rows();
  const auto prev = minus_one(t);
  EnergyLossTerms<T> out;

  auto [real_prev_d, real_t_d] = forward_pair(s, x0, t, rng);
  auto real_prev = Var<T>::leaf(real_prev_d.template cast<T>());
  auto real_t = Var<T>::constant(real_t_d.template cast<T>());

  Var<T> fake_prev;
  {
    ad::NoGradGuard no_grad;
    auto z = draw_latent<T>(ablation, n, players.latent_dim, rng);
    auto x0_hat = players.generator(real_t, z, t);
    fake_prev = sample_posterior(s, real_t, x0_hat, t, rng).detach();
  }

  auto e_real = players.energy(real_prev, prev);
  auto e_fake = players.energy(fake_prev, prev);
  auto inner = ad::sum(e_real + log_q_transition_rows(s, real_t, real_prev, t));
  auto g = ad::grad(inner, {real_prev}, /*create_graph=*/true)[0];
  auto gp = ad::mean(ad::row_sq_norm(g));

  auto objective = ad::mean(e_real) -
                   ad::scale(ad::mean(e_fake), static_cast<T>(weights.fake_term_weight)) -
                   ad::scale(gp, static_cast<T>(0.5 * weights.gamma));
  out.loss = -objective;

  auto& d = out.diagnostics;
  d.loss = static_cast<double>(out.loss.item());
  d.energy_real = mean_of(e_real);
  d.energy_fake = mean_of(e_fake);
  d.energy_gap = d.energy_real - d.energy_fake;
  d.grad_penalty = static_cast<double>(gp.item());
  return out;
}

#define DDAEBM_INSTANTIATE(T)                                                                  \
  template Var<T> step_column<T>(std::span<const int>, const std::function<double(int)>&);     \
  template Var<T> gaussian_log_prob_rows<T>(const Var<T>&, const Var<T>&,                      \
                                            std::span<const double>);                          \
  template Var<T> log_q_transition_rows<T>(const Schedule&, const Var<T>&, const Var<T>&,      \
                                           std::span<const int>);                              \
  template Var<T> diag_gaussian_log_prob<T>(const Var<T>&, const Var<T>&, const Var<T>&);      \
  template Var<T> kl_to_standard_normal_rows<T>(const Var<T>&, const Var<T>&);                 \
  template Var<T> sample_posterior<T>(const Schedule&, const Var<T>&, const Var<T>&,           \
                                      std::span<const int>, Rng&);                             \
  template Players<T> make_players<T>(ModelTriple<T>&, Substep);                               \
  template GeneratorLossTerms<T> loss_generator<T>(const Players<T>&, const Schedule&,         \
                                                   const LossWeights&, const Ablation&,        \
                                                   const MatrixD&, std::span<const int>, Rng&); \
  template Var<T> penalty_gradient<T>(const Players<T>&, const Schedule&, const Var<T>&,       \
                                      const Var<T>&, std::span<const int>, bool);              \
  template EnergyLossTerms<T> loss_energy<T>(const Players<T>&, const Schedule&,               \
                                             const LossWeights&, const Ablation&,              \
                                             const MatrixD&, std::span<const int>, Rng&);

DDAEBM_INSTANTIATE(float)
DDAEBM_INSTANTIATE(double)

#undef DDAEBM_INSTANTIATE

}  // namespace ddaebm
