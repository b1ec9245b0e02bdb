#include "helpers.hpp"
#include "tractable.hpp"

#include "ddaebm/errors.hpp"
#include "ddaebm/objectives.hpp"

#include <numbers>

using namespace ddaebm;
using testutil::numeric_grad;
using testutil::rel_error;
using V = Var<double>;

namespace {

double trapezoid(const std::function<double(double)>& f, double lo, double hi, int n) {
  const double h = (hi - lo) / n;
  double s = 0.5 * (f(lo) + f(hi));
  for (int i = 1; i < n; ++i) s += f(lo + i * h);
  return s * h;
}

double normal_pdf(double x, double m, double v) {
  return std::exp(-0.5 * (x - m) * (x - m) / v) / std::sqrt(2 * std::numbers::pi * v);
}

MatrixD scalar(double v) { return MatrixD::Constant(1, 1, v); }

std::vector<int> all_steps(long n, int t) { return std::vector<int>(static_cast<std::size_t>(n), t); }

ModelTriple<double> small_triple(std::uint64_t seed) {
  Rng rng(seed);
  return make_model_triple<double>(2, 2, testutil::small_config().arch, false, rng);
}

double grad_norm(const V& loss, nn::Registry<double> reg) {
  std::vector<V> leaves;
  for (auto& p : reg.params) leaves.push_back(*p.var);
  double sq = 0.0;
  for (const auto& g : ad::grad(loss, leaves)) sq += g.value().squaredNorm();
  return std::sqrt(sq);
}

}  // namespace

TEST_CASE("gaussian_log_prob") {
  CHECK(gaussian_log_prob(scalar(0.3), scalar(0.3), 1.0)(0) == doctest::Approx(-0.91893853320467).epsilon(1e-12));
  const double q = trapezoid([](double x) { return std::exp(gaussian_log_prob(scalar(x), scalar(0.2), 1.7)(0)); },
                             -10, 10, 100000);
  CHECK(std::abs(q - 1.0) < 1e-6);
  CHECK_THROWS_AS(gaussian_log_prob(scalar(0), scalar(0), 0.0), std::invalid_argument);
  CHECK_THROWS_AS(gaussian_log_prob(scalar(0), scalar(0), -1.0), std::invalid_argument);
  MatrixD var(1, 2);
  var << 0.5, -0.1;
  CHECK_THROWS_AS(gaussian_log_prob(MatrixD::Zero(1, 2), MatrixD::Zero(1, 2), var), std::invalid_argument);
}

TEST_CASE("gaussian_entropy closed form and Monte Carlo") {
  const std::vector<double> zero{0.0};
  CHECK(gaussian_entropy(2, zero) == doctest::Approx(2.8378770664).epsilon(1e-10));
  for (int d : {1, 2, 5, 50})
    CHECK(gaussian_entropy(d, zero) == doctest::Approx(d / 2.0 * (1.0 + std::log(2 * std::numbers::pi))).epsilon(1e-14));

  Rng rng(1);
  const std::vector<double> lv{std::log(0.3), std::log(2.5)};
  const long n = 1000000;
  Eigen::VectorXd vals(n);
  MatrixD mean(1, 2);
  mean << 0.4, -1.0;
  MatrixD var(1, 2);
  var << 0.3, 2.5;
  for (long i = 0; i < n; ++i) {
    MatrixD x(1, 2);
    x << mean(0, 0) + std::sqrt(0.3) * rng.normal(), mean(0, 1) + std::sqrt(2.5) * rng.normal();
    vals(i) = -gaussian_log_prob(x, mean, var)(0);
  }
  const auto r = tractable::mc(vals);
  CHECK(std::abs(r.mean - gaussian_entropy(2, lv)) < 4 * r.se);
}

TEST_CASE("kl_to_standard_normal") {
  CHECK(kl_to_standard_normal(MatrixD::Zero(1, 3), MatrixD::Zero(1, 3))(0) == 0.0);
  MatrixD m(1, 2);
  m << 1.0, 0.0;
  CHECK(kl_to_standard_normal(m, MatrixD::Zero(1, 2))(0) == doctest::Approx(0.5).epsilon(1e-15));
  // 1D quadrature of q log(q / p)
  const double mu = 0.3, v = 0.7;
  const double quad = trapezoid(
      [&](double x) {
        const double q = normal_pdf(x, mu, v);
        return q * (std::log(q) - std::log(normal_pdf(x, 0.0, 1.0)));
      },
      -12, 12, 200000);
  CHECK(std::abs(kl_to_standard_normal(scalar(mu), scalar(std::log(v)))(0) - quad) < 1e-6);
}

TEST_CASE("jeffrey divergence") {
  DiagGaussian p{Eigen::VectorXd::Constant(1, 0.0), Eigen::VectorXd::Constant(1, 1.0)};
  DiagGaussian q{Eigen::VectorXd::Constant(1, 1.0), Eigen::VectorXd::Constant(1, 1.0)};
  CHECK(jeffrey_divergence(p, p) == 0.0);
  CHECK(jeffrey_divergence(p, q) == doctest::Approx(1.0).epsilon(1e-15));

  DiagGaussian a{Eigen::Vector2d(0.2, -1.0), Eigen::Vector2d(0.5, 2.0)};
  DiagGaussian b{Eigen::Vector2d(1.1, 0.3), Eigen::Vector2d(1.5, 0.25)};
  CHECK(std::abs(jeffrey_divergence(a, b) - jeffrey_divergence(b, a)) < 1e-12);

  // 1D quadrature of (p - q) log(p / q)
  const double mp = 0.2, vp = 0.5, mq = 1.1, vq = 1.5;
  const double quad = trapezoid(
      [&](double x) {
        const double pp = normal_pdf(x, mp, vp);
        const double qq = normal_pdf(x, mq, vq);
        return (pp - qq) * (std::log(pp) - std::log(qq));
      },
      -15, 15, 200000);
  DiagGaussian p1{Eigen::VectorXd::Constant(1, mp), Eigen::VectorXd::Constant(1, vp)};
  DiagGaussian q1{Eigen::VectorXd::Constant(1, mq), Eigen::VectorXd::Constant(1, vq)};
  CHECK(std::abs(jeffrey_divergence(p1, q1) - quad) < 1e-6);
  DiagGaussian bad{Eigen::VectorXd::Constant(1, 0.0), Eigen::VectorXd::Constant(1, 0.0)};
  CHECK_THROWS_AS(jeffrey_divergence(p1, bad), std::invalid_argument);
}

TEST_CASE("importance ratio") {
  const Schedule s = make_schedule(4, 0.1, 20.0, TimeMap::equidistant);
  LossWeights unit;
  for (int t = 1; t <= 4; ++t) CHECK(importance_ratio(s, t, unit) == 1.0);
  LossWeights lsun;
  lsun.w = 0.6;
  lsun.w_mid = 0.2;
  // t'(2) = 0.5 and t'(4) = 1 on the equidistant T = 4 map
  CHECK(importance_ratio(s, 2, lsun) == doctest::Approx(0.2).epsilon(1e-15));
  CHECK(importance_ratio(s, 4, lsun) == 0.6);
  CHECK(importance_ratio(s, 1, lsun) == doctest::Approx(0.6 * std::pow(0.25, std::log2(3.0))).epsilon(1e-14));
  for (double w : {0.3, 1.0, 2.5})
    for (double wm : {0.1, 0.7, 4.0}) {
      LossWeights lw;
      lw.w = w;
      lw.w_mid = wm;
      CHECK(importance_ratio(s, 2, lw) == doctest::Approx(wm).epsilon(1e-14));
      CHECK(importance_ratio(s, 4, lw) == w);
    }
  CHECK_THROWS(importance_ratio(s, 0, lsun));
  CHECK_THROWS(importance_ratio(s, 5, lsun));
}

TEST_CASE("weights and ablation validation") {
  LossWeights w;
  CHECK_NOTHROW(w.validate());
  w.gamma = -1;
  CHECK_THROWS_AS(w.validate(), ConfigError);
  w = LossWeights{};
  w.w = 0;
  CHECK_THROWS_AS(w.validate(), ConfigError);
  w = LossWeights{};
  w.fake_term_weight = 1.5;
  CHECK_THROWS_AS(w.validate(), ConfigError);
  Ablation a;
  a.drop_qpsi = true;
  CHECK_THROWS_AS(a.validate(), ConfigError);
  a.kl_only = true;
  CHECK_NOTHROW(a.validate());
  a.no_latent = true;
  CHECK_NOTHROW(a.validate());
}

TEST_CASE("loss_generator leaves the energy untouched; loss_energy leaves generator and encoder untouched") {
  auto triple = small_triple(2);
  const Schedule s = make_schedule(4, 0.1, 20.0, TimeMap::equidistant);
  Rng rng(3);
  const MatrixD x0 = rng.normal_matrix(16, 2);
  std::vector<int> t(16);
  for (auto& v : t) v = rng.uniform_int(1, 4);

  auto gen = loss_generator(make_players(triple, Substep::minimize), s, LossWeights{}, Ablation{}, x0, t, rng);
  CHECK(grad_norm(gen.loss, triple.energy.registry()) == 0.0);
  CHECK(grad_norm(gen.loss, triple.generator.registry()) > 0.0);
  CHECK(grad_norm(gen.loss, triple.encoder.registry()) > 0.0);

  auto en = loss_energy(make_players(triple, Substep::maximize), s, LossWeights{}, Ablation{}, x0, t, rng);
  CHECK(grad_norm(en.loss, triple.generator.registry()) == 0.0);
  CHECK(grad_norm(en.loss, triple.encoder.registry()) == 0.0);
  CHECK(grad_norm(en.loss, triple.energy.registry()) > 0.0);
}

TEST_CASE("loss_generator ablations") {
  const Schedule s = make_schedule(4, 0.1, 20.0, TimeMap::equidistant);
  auto k = tractable::at_step(s, 2, 0.6, 0.5);
  Rng rng(4);
  const MatrixD x0 = rng.normal_matrix(32, 1);
  const auto t = all_steps(32, 2);

  auto rec = std::make_shared<tractable::Recorder>();
  auto full = loss_generator(tractable::players(k, rec), s, LossWeights{}, Ablation{}, x0, t, rng);
  CHECK(full.l2.defined());
  CHECK(full.neg_log_qpsi.defined());
  CHECK(rec->encoder_calls.size() == 2);
  CHECK(full.diagnostics.loss == doctest::Approx(full.diagnostics.l1 + full.diagnostics.l2));

  Ablation kl;
  kl.kl_only = true;
  rec->encoder_calls.clear();
  auto klo = loss_generator(tractable::players(k, rec), s, LossWeights{}, kl, x0, t, rng);
  CHECK_FALSE(klo.l2.defined());
  CHECK(klo.neg_log_qpsi.defined());
  CHECK(rec->encoder_calls.size() == 1);
  CHECK(klo.diagnostics.loss == doctest::Approx(klo.diagnostics.l1));

  kl.drop_qpsi = true;
  rec->encoder_calls.clear();
  auto dq = loss_generator(tractable::players(k, rec), s, LossWeights{}, kl, x0, t, rng);
  CHECK_FALSE(dq.neg_log_qpsi.defined());
  CHECK(rec->encoder_calls.empty());

  Ablation nl;
  nl.no_latent = true;
  rec->encoder_calls.clear();
  auto players = tractable::players(k, rec);
  double z_abs = 0.0;
  auto inner = players.generator;
  players.generator = [&](const V& x_t, const V& z, std::span<const int> tt) {
    z_abs += z.value().cwiseAbs().sum();
    return inner(x_t, z, tt);
  };
  auto nol = loss_generator(players, s, LossWeights{}, nl, x0, t, rng);
  CHECK(z_abs == 0.0);
  CHECK(rec->encoder_calls.empty());
  CHECK(nol.l2.defined());
}

TEST_CASE("loss_generator checks its step indices") {
  const Schedule s = make_schedule(4, 0.1, 20.0, TimeMap::equidistant);
  auto k = tractable::at_step(s, 2, 0.6, 0.5);
  Rng rng(5);
  const MatrixD x0 = rng.normal_matrix(4, 1);
  CHECK_THROWS(loss_generator(tractable::players(k), s, LossWeights{}, Ablation{}, x0, all_steps(4, 0), rng));
  CHECK_THROWS(loss_generator(tractable::players(k), s, LossWeights{}, Ablation{}, x0, all_steps(4, 5), rng));
  CHECK_THROWS(loss_generator(tractable::players(k), s, LossWeights{}, Ablation{}, x0, all_steps(3, 1), rng));
}

// Tractable instance: with the exact encoder the reverse-KL bound is tight and
// any other encoder loosens it.
TEST_CASE("ELBO bound on the linear-Gaussian instance (T = 1)") {
  const Schedule s = make_schedule(1, 0.1, 20.0, TimeMap::equidistant);
  const long n = 100000;
  Rng rng(6);
  const MatrixD x0 = rng.normal_matrix(n, 1);
  const auto t = all_steps(n, 1);
  for (double shift : {0.0, 0.5}) {
    auto k = tractable::at_t1(s, 0.6, 0.5);
    k.mean_shift = shift;
    k.logvar_shift = shift;
    auto rec = std::make_shared<tractable::Recorder>();
    auto terms = loss_generator(tractable::players(k, rec), s, LossWeights{}, Ablation{}, x0, t, rng);
    const auto& [x_prev, x_t] = rec->encoder_calls.back();
    Eigen::VectorXd gap(n);
    for (long i = 0; i < n; ++i) gap(i) = terms.l2.value()(i, 0) + k.log_marginal(x_prev(i, 0), x_t(i, 0));
    const auto r = tractable::mc(gap);
    CAPTURE(shift);
    if (shift == 0.0) CHECK(std::abs(r.mean) < 4 * r.se);
    else CHECK(r.mean > 4 * r.se);
  }
}

TEST_CASE("entropy surrogate bounds the exact conditional entropy") {
  const Schedule s = make_schedule(1, 0.1, 20.0, TimeMap::equidistant);
  Rng rng(7);
  auto k = tractable::at_t1(s, 0.6, 0.5);
  const auto exact = tractable::entropy_surrogate(k, 100000, rng);
  CHECK(std::abs(exact.mean - k.posterior_entropy()) < 4 * exact.se);
  k.mean_shift = 0.3;
  const auto off = tractable::entropy_surrogate(k, 100000, rng);
  CHECK(off.mean - k.posterior_entropy() > 4 * off.se);
}

TEST_CASE("forward-KL bound's q_psi term reproduces the entropy identity") {
  // -E log q_psi at the exact posterior = H[z] + (D/2)(1 + ln 2 pi) + (D/2) ln beta_tilde_t - H[p(x_{t-1} | x_t)]
  const Schedule s = make_schedule(2, 0.1, 20.0, TimeMap::equidistant);
  const long n = 100000;
  Rng rng(8);
  const MatrixD x0 = rng.normal_matrix(n, 1);
  const auto k = tractable::at_step(s, 2, 0.6, 0.5);
  auto terms = loss_generator(tractable::players(k), s, LossWeights{}, Ablation{}, x0, all_steps(n, 2), rng);
  const auto r = tractable::mc(terms.neg_log_qpsi.value().col(0));
  const std::vector<double> zero{0.0};
  const std::vector<double> lbt{std::log(s.beta_tilde[2])};
  const std::vector<double> lmarg{std::log(k.kappa * k.kappa + k.v)};
  const double identity = gaussian_entropy(1, zero) + gaussian_entropy(1, lbt) - gaussian_entropy(1, lmarg);
  CHECK(std::abs(r.mean - identity) < 4 * r.se);
  // the L1 total adds the transition term and the (zero) energy
  CHECK((terms.l1.value() - terms.neg_log_q_transition.value() - terms.neg_log_qpsi.value()).norm() < 1e-9);
}

TEST_CASE("energy loss: symmetric batches, fake weight, penalty") {
  const Schedule s = make_schedule(1, 0.1, 20.0, TimeMap::equidistant);
  auto triple = small_triple(9);
  Rng rng(10);
  const MatrixD x0 = rng.normal_matrix(32, 2);
  const auto t = all_steps(32, 1);
  auto players = make_players(triple, Substep::maximize);
  // generator that reproduces the data: at T = 1 the fake x_0 equals the real one
  players.generator = [&x0](const V&, const V&, std::span<const int>) { return V::constant(x0); };
  LossWeights w;
  w.gamma = 0.0;
  auto r = loss_energy(players, s, w, Ablation{}, x0, t, rng);
  CHECK(std::abs(r.diagnostics.loss) < 1e-9);
  CHECK(std::abs(r.diagnostics.energy_gap) < 1e-9);

  w.gamma = 0.05;
  w.fake_term_weight = 0.1;
  const Schedule s4 = make_schedule(4, 0.1, 20.0, TimeMap::equidistant);
  std::vector<int> t4(32);
  for (auto& v : t4) v = rng.uniform_int(1, 4);
  auto r2 = loss_energy(make_players(triple, Substep::maximize), s4, w, Ablation{}, x0, t4, rng);
  const auto& d = r2.diagnostics;
  CHECK(d.loss == doctest::Approx(-(d.energy_real - 0.1 * d.energy_fake - 0.025 * d.grad_penalty)).epsilon(1e-10));
  CHECK(d.grad_penalty >= 0.0);
  CHECK(d.energy_gap == doctest::Approx(d.energy_real - d.energy_fake));
}

TEST_CASE("penalty inner gradient matches finite differences on 20 points") {
  const Schedule s = make_schedule(4, 0.1, 20.0, TimeMap::equidistant);
  auto triple = small_triple(11);
  auto players = make_players(triple, Substep::maximize);
  Rng rng(12);
  for (int p = 0; p < 20; ++p) {
    const MatrixD xp = rng.normal_matrix(1, 2);
    const MatrixD xt = rng.normal_matrix(1, 2);
    const std::vector<int> t{rng.uniform_int(1, 4)};
    const std::vector<int> prev{t[0] - 1};
    auto leaf = V::leaf(xp);
    const MatrixD analytic = penalty_gradient(players, s, leaf, V::constant(xt), t, false).value();
    const MatrixD numeric = numeric_grad(
        [&](const MatrixD& y) {
          ad::NoGradGuard ng;
          return players.energy(V::constant(y), prev).item() + log_q_transition(s, xt, y, t[0])(0);
        },
        xp, 1e-4);
    CHECK(rel_error(analytic, numeric) <= 1e-4);
  }
}

TEST_CASE("sample_posterior uses the mean when the variance is zero") {
  const Schedule s = make_schedule(4, 0.1, 20.0, TimeMap::equidistant);
  Rng rng(13);
  const auto xt = V::constant(rng.normal_matrix(6, 2));
  const auto x0 = V::constant(rng.normal_matrix(6, 2));
  const auto out = sample_posterior(s, xt, x0, all_steps(6, 1), rng);
  CHECK((out.value() - x0.value()).cwiseAbs().maxCoeff() < 1e-12);
}
