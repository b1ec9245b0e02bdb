#include "ddaebm/schedule.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace ddaebm {

std::string to_string(TimeMap map) {
  return map == TimeMap::equidistant ? "equidistant" : "truncated";
}

TimeMap time_map_from_string(const std::string& name) {
  if (name == "equidistant") return TimeMap::equidistant;
  if (name == "truncated") return TimeMap::truncated;
  throw std::invalid_argument("unknown time map '" + name + "'");
}

double vp_sigma2(double s, double beta_min, double beta_max) {
  return -std::expm1(-beta_min * s - 0.5 * (beta_max - beta_min) * s * s);
}

Schedule make_schedule(int T, double beta_min, double beta_max, TimeMap time_map) {
  if (T < 1) throw std::invalid_argument("schedule needs T >= 1, got " + std::to_string(T));
  if (!(beta_min > 0.0) || !(beta_min < beta_max))
    throw std::invalid_argument("schedule needs 0 < beta_min < beta_max");
  if (time_map == TimeMap::truncated) {
    if (T > 999) throw std::invalid_argument("truncated time map needs T <= 999");
    // floor(500 / (T - 1)) is 0 beyond T = 501, which collapses every step onto t' = 0.
    if (T > 501)
      throw std::invalid_argument("truncated time map is degenerate for T > 501");
  }

  Schedule s;
  s.T = T;
  s.beta_min = beta_min;
  s.beta_max = beta_max;
  s.time_map = time_map;
  s.t_prime.assign(T + 1, 0.0);
  s.sigma2.assign(T + 1, 0.0);
  s.beta.assign(T + 1, 0.0);
  s.alpha_bar.assign(T + 1, 1.0);
  s.beta_tilde.assign(T + 1, 0.0);

  const double stride = (time_map == TimeMap::truncated && T > 1)
                            ? std::floor(500.0 / static_cast<double>(T - 1))
                            : 0.0;
  for (int t = 0; t <= T; ++t) {
    if (t == T) {
      s.t_prime[t] = 1.0;
    } else if (time_map == TimeMap::equidistant) {
      s.t_prime[t] = static_cast<double>(t) / T;
    } else {
      s.t_prime[t] = static_cast<double>(t) * stride / 999.0;
    }
    s.sigma2[t] = vp_sigma2(s.t_prime[t], beta_min, beta_max);
  }

  const double half_range = 0.5 * (beta_max - beta_min);
  for (int t = 1; t <= T; ++t) {
    const double a = s.t_prime[t];
    const double b = s.t_prime[t - 1];
    s.beta[t] = -std::expm1(-beta_min * (a - b) - half_range * (a * a - b * b));
    s.alpha_bar[t] = s.alpha_bar[t - 1] * (1.0 - s.beta[t]);
    s.beta_tilde[t] = s.beta[t] * (1.0 - s.alpha_bar[t - 1]) / (1.0 - s.alpha_bar[t]);
  }
  return s;
}

double Schedule::beta_tilde_clipped(int t) const {
  if (t < 1 || t > T) throw std::out_of_range("posterior variance needs 1 <= t <= T");
  if (t > 1) return beta_tilde[t];
  return T >= 2 ? beta_tilde[2] : beta[1];
}

double Schedule::posterior_coef_x0(int t) const {
  return std::sqrt(alpha_bar[t - 1]) * beta[t] / (1.0 - alpha_bar[t]);
}

double Schedule::posterior_coef_xt(int t) const {
  return std::sqrt(1.0 - beta[t]) * (1.0 - alpha_bar[t - 1]) / (1.0 - alpha_bar[t]);
}

namespace {

void check_step(const Schedule& s, int t, int lo) {
  if (t < lo || t > s.T)
    throw std::out_of_range("step " + std::to_string(t) + " outside [" + std::to_string(lo) +
                            ", " + std::to_string(s.T) + "]");
}

void check_same_shape(const MatrixD& a, const MatrixD& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw std::invalid_argument(std::string("shape mismatch in ") + what);
}

}  // namespace

MatrixD forward_sample(const Schedule& s, const MatrixD& x0, int t, const MatrixD& noise) {
  check_step(s, t, 0);
  check_same_shape(x0, noise, "forward_sample");
  if (t == 0) return x0;
  return std::sqrt(s.alpha_bar[t]) * x0 + std::sqrt(1.0 - s.alpha_bar[t]) * noise;
}

MatrixD forward_sample(const Schedule& s, const MatrixD& x0, std::span<const int> t,
                       const MatrixD& noise) {
  check_same_shape(x0, noise, "forward_sample");
  if (static_cast<Eigen::Index>(t.size()) != x0.rows())
    throw std::invalid_argument("forward_sample: one step index per row required");
  MatrixD out(x0.rows(), x0.cols());
  for (Eigen::Index i = 0; i < x0.rows(); ++i) {
    check_step(s, t[i], 0);
    const double ab = s.alpha_bar[t[i]];
    out.row(i) = std::sqrt(ab) * x0.row(i) + std::sqrt(1.0 - ab) * noise.row(i);
  }
  return out;
}

MatrixD forward_step(const Schedule& s, const MatrixD& x_prev, int t, const MatrixD& noise) {
  check_step(s, t, 1);
  check_same_shape(x_prev, noise, "forward_step");
  return std::sqrt(1.0 - s.beta[t]) * x_prev + std::sqrt(s.beta[t]) * noise;
}

PosteriorParams posterior_params(const Schedule& s, const MatrixD& x_t, const MatrixD& x0,
                                 int t) {
  check_step(s, t, 1);
  check_same_shape(x_t, x0, "posterior_params");
  PosteriorParams p;
  p.mean = s.posterior_coef_x0(t) * x0 + s.posterior_coef_xt(t) * x_t;
  p.var = s.beta_tilde[t];
  return p;
}

Eigen::VectorXd log_q_transition(const Schedule& s, const MatrixD& x_t, const MatrixD& x_prev,
                                 int t) {
  check_step(s, t, 1);
  check_same_shape(x_t, x_prev, "log_q_transition");
  const double beta = s.beta[t];
  const double dim = static_cast<double>(x_t.cols());
  const MatrixD resid = x_t - std::sqrt(1.0 - beta) * x_prev;
  Eigen::VectorXd sq = resid.rowwise().squaredNorm();
  return (-0.5 * dim * std::log(2.0 * std::numbers::pi * beta)) - (0.5 / beta) * sq.array();
}

}  // namespace ddaebm
