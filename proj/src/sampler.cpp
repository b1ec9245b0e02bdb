#include "ddaebm/sampler.hpp"

#include "ddaebm/rng.hpp"

#include <cmath>
#include <stdexcept>
#include <vector>

namespace ddaebm {

void SampleRequest::validate() const {
  if (n < 1) throw std::invalid_argument("sample count must be >= 1");
  if (refine && !(refine_step_size >= 0.0))
    throw std::invalid_argument("refine step size must be > 0");
}

double default_refine_step(const Schedule& s) { return 1.0 - s.alpha_bar.at(1); }

template <typename T>
MatrixD ancestral_sample(ModelTriple<T>& triple, const Schedule& s, const SampleRequest& request,
                         SampleStats* stats) {
  request.validate();
  auto& gen = request.use_ema ? triple.ema_generator : triple.generator;
  if (gen.data_dim() != triple.data_dim) throw std::invalid_argument("generator/data mismatch");
  const int D = triple.data_dim;
  const int d = triple.latent_dim;
  const nn::Pass pass{.train = false, .frozen = true};
  ad::NoGradGuard no_grad;

  Rng rng(request.seed);
  SampleStats local;
  MatrixD x = rng.normal_matrix(request.n, D);
  ++local.noise_draws;
  std::vector<int> steps(static_cast<std::size_t>(request.n));
  for (int t = s.T; t >= 1; --t) {
    std::fill(steps.begin(), steps.end(), t);
    Matrix<T> z = request.zero_latent ? Matrix<T>::Zero(request.n, d)
                                      : rng.normal_matrix<T>(request.n, d);
    ++local.latent_draws;
    const auto x_t = Var<T>::constant(x.template cast<T>());
    const Var<T> x0_hat = gen.generate_x0(x_t, Var<T>::constant(std::move(z)), steps, pass);
    ++local.generator_evaluations;
    const auto post = posterior_params(s, x, x0_hat.value().template cast<double>(), t);
    x = post.mean;
    if (post.var > 0.0) {
      x += std::sqrt(post.var) * rng.normal_matrix(request.n, D);
      ++local.noise_draws;
    }
  }
  if (stats) {
    stats->generator_evaluations += local.generator_evaluations;
    stats->noise_draws += local.noise_draws;
    stats->latent_draws += local.latent_draws;
  }
  return x;
}

template <typename T>
MatrixD refine(ModelTriple<T>& triple, const MatrixD& x0, double step_size, bool use_ema_energy,
               SampleStats* stats, bool allow_zero_step) {
  if (!(step_size > 0.0) && !(allow_zero_step && step_size == 0.0))
    throw std::invalid_argument("refine step size must be > 0");
  auto& energy = use_ema_energy && triple.ema_energy ? *triple.ema_energy : triple.energy;
  const nn::Pass pass{.train = false, .frozen = true};
  const auto x = Var<T>::leaf(x0.template cast<T>());
  const std::vector<int> zeros(static_cast<std::size_t>(x0.rows()), 0);
  // Rows are independent, so the gradient of the sum is the per-row gradient.
  const auto total = ad::sum(energy.energy(x, zeros, pass));
  const auto g = ad::grad(total, {x})[0].value().template cast<double>();
  if (stats) ++stats->energy_gradient_evaluations;
  if (!g.allFinite()) throw std::domain_error("non-finite energy gradient during refinement");
  return x0 + step_size * g;
}

template <typename T>
MatrixD sample(ModelTriple<T>& triple, const Schedule& s, const SampleRequest& request,
               SampleStats* stats) {
  MatrixD x = ancestral_sample(triple, s, request, stats);
  if (!request.refine) return x;
  const double step = request.refine_step_size > 0.0 ? request.refine_step_size
                                                     : default_refine_step(s);
  return refine(triple, x, step, request.use_ema, stats);
}

#define DDAEBM_INSTANTIATE(T)                                                                   \
  template MatrixD ancestral_sample<T>(ModelTriple<T>&, const Schedule&, const SampleRequest&,  \
                                       SampleStats*);                                           \
  template MatrixD refine<T>(ModelTriple<T>&, const MatrixD&, double, bool, SampleStats*, bool); \
  template MatrixD sample<T>(ModelTriple<T>&, const Schedule&, const SampleRequest&, SampleStats*);

DDAEBM_INSTANTIATE(float)
DDAEBM_INSTANTIATE(double)

#undef DDAEBM_INSTANTIATE

}  // namespace ddaebm
