// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits non-zero if any criterion fails.
//
// Environment:
//   DDAEBM_ACCEPTANCE_ITERS   training iterations per toy run (default 20000)
//   DDAEBM_ACCEPTANCE_SEEDS   seeds per variant (default 5)
//   DDAEBM_ACCEPTANCE_DIR     work directory (default ./acceptance_runs)

#include "tractable.hpp"

#include "ddaebm/errors.hpp"
#include "ddaebm/evaluation.hpp"
#include "ddaebm/objectives.hpp"
#include "ddaebm/persistence.hpp"
#include "ddaebm/sampler.hpp"
#include "ddaebm/trainer.hpp"

#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <numbers>
#include <sstream>

using namespace ddaebm;
namespace fs = std::filesystem;
using V = Var<double>;
using nlohmann::json;

namespace {

int failures = 0;

void report(int id, bool pass, const std::string& what, const std::string& detail) {
  if (!pass) ++failures;
  std::cout << "criterion " << std::setw(2) << id << ": " << (pass ? "PASS" : "FAIL") << "  " << what
            << "  [" << detail << "]" << std::endl;
}

template <typename... A>
std::string fmt(const A&... a) {
  std::ostringstream s;
  s << std::setprecision(6);
  (s << ... << a);
  return s.str();
}

long env_long(const char* name, long fallback) {
  const char* v = std::getenv(name);
  return v && *v ? std::stol(v) : fallback;
}

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

MatrixD fd_grad(const std::function<double(const MatrixD&)>& f, MatrixD x, double h) {
  MatrixD g(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double v = x.data()[i];
    x.data()[i] = v + h;
    const double up = f(x);
    x.data()[i] = v - h;
    const double down = f(x);
    x.data()[i] = v;
    g.data()[i] = (up - down) / (2 * h);
  }
  return g;
}

double rel_err(const MatrixD& a, const MatrixD& b) {
  return (a - b).norm() / std::max({a.norm(), b.norm(), 1e-8});
}

// ---- 1 -----------------------------------------------------------------------

void schedule_exactness() {
  const Schedule s = make_schedule(4, 0.1, 20.0, TimeMap::equidistant);
  // independent scalar evaluation
  auto abar = [](double tp) { return std::exp(-0.1 * tp - 0.5 * (20.0 - 0.1) * tp * tp); };
  const double beta1 = 1.0 - abar(0.25) / abar(0.0);
  const double abar4 = abar(1.0);
  double worst = 0.0;
  for (int t = 0; t <= 4; ++t) worst = std::max(worst, std::abs(s.alpha_bar[t] - (1.0 - vp_sigma2(s.t_prime[t], 0.1, 20.0))));
  const bool pass = std::abs(s.beta[1] - beta1) < 1e-5 && std::abs(s.alpha_bar[4] - abar4) < 1e-5 &&
                    std::abs(s.beta[1] - 0.47633) < 1e-5 && std::abs(s.alpha_bar[4] - 4.32e-5) < 1e-7 &&
                    worst < 1e-12;
  report(1, pass, "schedule exactness",
         fmt("beta_1=", s.beta[1], " alpha_bar_4=", s.alpha_bar[4], " max|abar-(1-sigma2)|=", worst));
}

// ---- 2 -----------------------------------------------------------------------

void gaussian_analytics() {
  std::ostringstream d;
  bool pass = true;

  const double q = trapezoid([](double x) { return std::exp(gaussian_log_prob(scalar(x), scalar(0.2), 1.7)(0)); },
                             -12, 12, 200000);
  const double lp = gaussian_log_prob(scalar(1.1), scalar(0.2), 1.7)(0);
  const double lp_ref = std::log(normal_pdf(1.1, 0.2, 1.7));
  pass &= std::abs(q - 1.0) < 1e-6 && std::abs(lp - lp_ref) < 1e-6;
  d << "log_prob mass-1=" << q - 1.0;

  Rng rng(2024);
  const long n = 1000000;
  const double m = 0.4, v = 0.3;
  Eigen::VectorXd vals(n);
  for (long i = 0; i < n; ++i) {
    const double x = m + std::sqrt(v) * rng.normal();
    vals(i) = -std::log(normal_pdf(x, m, v));
  }
  const auto ent = tractable::mc(vals);
  const std::vector<double> lv{std::log(v)};
  const double h = gaussian_entropy(1, lv);
  const double h_quad = trapezoid([&](double x) { const double p = normal_pdf(x, m, v); return -p * std::log(p); },
                                  -10, 10, 200000);
  pass &= std::abs(ent.mean - h) < 4 * ent.se && std::abs(h - h_quad) < 1e-6;
  d << "; entropy mc_gap/se=" << (ent.mean - h) / ent.se << " quad_gap=" << h - h_quad;

  const double mu = 0.3, var = 0.7;
  const double kl_quad = trapezoid(
      [&](double x) {
        const double qq = normal_pdf(x, mu, var);
        return qq * (std::log(qq) - std::log(normal_pdf(x, 0.0, 1.0)));
      },
      -12, 12, 200000);
  const double kl = kl_to_standard_normal(scalar(mu), scalar(std::log(var)))(0);
  pass &= std::abs(kl - kl_quad) < 1e-6;
  d << "; kl gap=" << kl - kl_quad;

  const double mp = 0.2, vp = 0.5, mq = 1.1, vq = 1.5;
  const double j_quad = trapezoid(
      [&](double x) {
        const double pp = normal_pdf(x, mp, vp);
        const double qq = normal_pdf(x, mq, vq);
        return (pp - qq) * (std::log(pp) - std::log(qq));
      },
      -15, 15, 200000);
  const double j = jeffrey_divergence({Eigen::VectorXd::Constant(1, mp), Eigen::VectorXd::Constant(1, vp)},
                                      {Eigen::VectorXd::Constant(1, mq), Eigen::VectorXd::Constant(1, vq)});
  pass &= std::abs(j - j_quad) < 1e-6;
  d << "; jeffrey gap=" << j - j_quad;
  report(2, pass, "Gaussian analytics vs quadrature / Monte Carlo", d.str());
}

// ---- 3 -----------------------------------------------------------------------

void bound_directions() {
  const Schedule s = make_schedule(1, 0.1, 20.0, TimeMap::equidistant);
  const long n = 100000;
  bool pass = true;
  std::ostringstream d;
  Rng rng(33);

  // entropy surrogate >= H[z | x0, x1], equality at the exact posterior
  for (double shift : {0.0, 0.3, -0.5}) {
    auto k = tractable::at_t1(s, 0.6, 0.5);
    k.mean_shift = shift;
    k.logvar_shift = shift;
    const auto r = tractable::entropy_surrogate(k, n, rng);
    const double gap = r.mean - k.posterior_entropy();
    pass &= shift == 0.0 ? std::abs(gap) < 4 * r.se : gap > 4 * r.se;
    d << "H(shift " << shift << ") gap/se=" << gap / r.se << "; ";
  }

  // ELBO <= log p(x0 | x1), equality at the exact posterior
  const MatrixD x0 = rng.normal_matrix(n, 1);
  const std::vector<int> t(static_cast<std::size_t>(n), 1);
  for (double shift : {0.0, 0.3, -0.5}) {
    auto k = tractable::at_t1(s, 0.6, 0.5);
    k.mean_shift = shift;
    k.logvar_shift = shift;
    auto rec = std::make_shared<tractable::Recorder>();
    auto terms = loss_generator(tractable::players(k, rec), s, LossWeights{}, Ablation{}, x0, t, rng);
    const auto& [x_prev, x_t] = rec->encoder_calls.back();
    Eigen::VectorXd gap(n);
    for (long i = 0; i < n; ++i) gap(i) = terms.l2.value()(i, 0) + k.log_marginal(x_prev(i, 0), x_t(i, 0));
    const auto r = tractable::mc(gap);
    pass &= shift == 0.0 ? std::abs(r.mean) < 4 * r.se : r.mean > 4 * r.se;
    d << "ELBO(shift " << shift << ") gap/se=" << r.mean / r.se << (shift == -0.5 ? "" : "; ");
  }
  report(3, pass, "bound directions on the linear-Gaussian instance (D=1, T=1)", d.str());
}

// ---- 4 -----------------------------------------------------------------------

double grad_norm(const V& loss, nn::Registry<double> reg) {
  std::vector<V> leaves;
  for (auto& p : reg.params) leaves.push_back(*p.var);
  double sq = 0.0;
  for (const auto& g : ad::grad(loss, leaves)) sq += g.value().squaredNorm();
  return std::sqrt(sq);
}

void gradient_integrity() {
  const TrainConfig cfg = preset_config("toy");
  const Schedule s = cfg.schedule();
  Rng rng(44);
  auto triple = make_model_triple<double>(2, cfg.latent_dim, cfg.arch, false, rng);
  auto players = make_players(triple, Substep::maximize);
  const nn::Pass pass_eval{.train = true, .frozen = false};
  double worst_e = 0.0, worst_p = 0.0;
  for (int p = 0; p < 50; ++p) {
    const MatrixD x = 2.0 * rng.normal_matrix(1, 2);
    const MatrixD xt = rng.normal_matrix(1, 2);
    const int step = rng.uniform_int(1, s.T);
    const std::vector<int> t{step}, prev{step - 1};

    auto leaf = V::leaf(x);
    const MatrixD ge = ad::grad(triple.energy.energy(leaf, prev, pass_eval), {leaf})[0].value();
    const MatrixD ne = fd_grad(
        [&](const MatrixD& y) {
          ad::NoGradGuard ng;
          return triple.energy.energy(V::constant(y), prev, pass_eval).item();
        },
        x, 1e-6);
    worst_e = std::max(worst_e, rel_err(ge, ne));

    auto leaf2 = V::leaf(x);
    const MatrixD gp = penalty_gradient(players, s, leaf2, V::constant(xt), t, false).value();
    const MatrixD np = fd_grad(
        [&](const MatrixD& y) {
          ad::NoGradGuard ng;
          return players.energy(V::constant(y), prev).item() + log_q_transition(s, xt, y, step)(0);
        },
        x, 1e-6);
    worst_p = std::max(worst_p, rel_err(gp, np));
  }

  const MatrixD x0 = rng.normal_matrix(64, 2);
  std::vector<int> t(64);
  for (auto& v : t) v = rng.uniform_int(1, s.T);
  auto gen = loss_generator(make_players(triple, Substep::minimize), s, cfg.weights, cfg.ablation, x0, t, rng);
  const double g_theta = grad_norm(gen.loss, triple.energy.registry());
  auto en = loss_energy(make_players(triple, Substep::maximize), s, cfg.weights, cfg.ablation, x0, t, rng);
  const double g_phi = grad_norm(en.loss, triple.generator.registry());
  const double g_psi = grad_norm(en.loss, triple.encoder.registry());
  const bool pass = worst_e <= 1e-4 && worst_p <= 1e-4 && g_theta == 0.0 && g_phi == 0.0 && g_psi == 0.0;
  report(4, pass, "gradient integrity (energy, penalty inner gradient, player isolation)",
         fmt("max rel err energy=", worst_e, " penalty=", worst_p, "; |dLgen/dtheta|=", g_theta,
             " |dLE/dphi|=", g_phi, " |dLE/dpsi|=", g_psi));
}

// ---- 5 -----------------------------------------------------------------------

void importance_ratio_values() {
  const Schedule s = make_schedule(4, 0.1, 20.0, TimeMap::equidistant);
  LossWeights unit;
  bool ones = true;
  for (int t = 1; t <= 4; ++t) ones &= importance_ratio(s, t, unit) == 1.0;
  LossWeights lsun;
  lsun.w = 0.6;
  lsun.w_mid = 0.2;
  // t'(2) = 0.5, t'(4) = 1
  const double mid = importance_ratio(s, 2, lsun);
  const double end = importance_ratio(s, 4, lsun);
  report(5, ones && std::abs(mid - 0.2) < 1e-15 && end == 0.6, "importance ratio",
         fmt("unit weights all 1: ", ones ? "yes" : "no", "; lambda(0.5)=", mid, " lambda(1)=", end));
}

// ---- 11 ----------------------------------------------------------------------

void sampler_accounting() {
  const TrainConfig cfg = preset_config("toy");
  Rng rng(11);
  auto triple = make_model_triple<Real>(2, cfg.latent_dim, cfg.arch, false, rng);
  const Schedule s = cfg.schedule();
  SampleRequest r;
  r.n = 1000;
  SampleStats plain, refined;
  triple.ema_generator.reset_evaluations();
  sample(triple, s, r, &plain);
  const long counted = triple.ema_generator.evaluations();
  r.refine = true;
  triple.energy.reset_evaluations();
  sample(triple, s, r, &refined);
  const bool pass = plain.generator_evaluations == s.T && counted == s.T &&
                    plain.energy_gradient_evaluations == 0 && refined.generator_evaluations == s.T &&
                    refined.energy_gradient_evaluations == 1 && triple.energy.evaluations() == 1;
  report(11, pass, "sampler accounting",
         fmt("T=", s.T, " NFE=", plain.generator_evaluations, " (model counter ", counted,
             "); refine energy-gradient evals=", refined.energy_gradient_evaluations));
}

// ---- 12 ----------------------------------------------------------------------

bool same_params(TrainState& a, TrainState& b) {
  auto regs = [](TrainState& s) {
    return std::vector<nn::Registry<Real>>{s.triple->energy.registry(), s.triple->generator.registry(),
                                           s.triple->encoder.registry(), s.triple->ema_generator.registry()};
  };
  auto ra = regs(a), rb = regs(b);
  for (std::size_t k = 0; k < ra.size(); ++k) {
    for (std::size_t i = 0; i < ra[k].params.size(); ++i)
      if (ra[k].params[i].var->value() != rb[k].params[i].var->value()) return false;
    for (std::size_t i = 0; i < ra[k].buffers.size(); ++i)
      if (*ra[k].buffers[i].value != *rb[k].buffers[i].value) return false;
  }
  return true;
}

void determinism(const fs::path& work) {
  TrainConfig cfg = preset_config("toy");
  cfg.seed = 12;
  const int steps = 100;
  auto a = init_state(cfg);
  auto b = init_state(cfg);
  bool streams = true;
  for (int i = 0; i < steps; ++i) streams &= train_step(a).same_values(train_step(b));
  streams &= same_params(a, b);

  auto straight = init_state(cfg);
  auto first = init_state(cfg);
  for (int i = 0; i < 50; ++i) {
    train_step(straight);
    train_step(first);
  }
  const auto path = (work / "determinism.ckpt").string();
  save_checkpoint(path, first);
  auto resumed = load_checkpoint(path);
  bool resume = resumed.iteration == 50;
  for (int i = 0; i < 10; ++i) resume &= train_step(straight).same_values(train_step(resumed));
  resume &= same_params(straight, resumed);
  report(12, streams && resume, "determinism and checkpoint round trip",
         fmt("two seeded runs identical for ", steps, " steps: ", streams ? "yes" : "no",
             "; resume at 50 identical for 10 steps: ", resume ? "yes" : "no"));
}

// ---- toy training suite (6-10) ------------------------------------------------

struct Variant {
  std::string name;
  int T = 4;
  Ablation ablation;
};

struct RunResult {
  std::string variant;
  std::uint64_t seed = 0;
  bool diverged = false;
  long iterations = 0;
  double cpu_seconds = 0.0;
  int modes = 0;
  double kl = 0.0;
  long assigned = 0;
  double tv = 1.0;
  int hits = 0;
  std::vector<double> energy_means;  // in-distribution, then one per noise std
  double auroc = 0.0;               // in vs noise 0.5
};

const std::vector<double> kNoiseStds{0.01, 0.1, 0.5};

double mode_kl(const RunResult& r) {
  return r.diverged || r.assigned == 0 ? std::numeric_limits<double>::infinity() : r.kl;
}

RunResult evaluate(TrainState& st, const Variant& v, std::uint64_t seed) {
  RunResult r;
  const auto& c = st.config;
  auto& triple = *st.triple;
  SampleRequest req;
  req.n = 10000;
  req.seed = 1000 + seed;
  req.zero_latent = v.ablation.no_latent;
  const MatrixD x = sample(triple, st.schedule, req);
  const auto cov = mode_coverage(x, gaussians25_means(c.toy), 3.0 * c.toy.component_std);
  r.modes = cov.count;
  r.kl = cov.kl;
  r.assigned = cov.assigned;

  const Bounds bounds;
  const int res = 200;
  const auto grid = density_grid(triple.energy, bounds, res);
  const auto truth = mixture_grid(bounds, res, c.toy);
  r.tv = total_variation(normalized_mass(grid.values), normalized_mass(truth.values));
  r.hits = points_matched(grid_local_maxima(grid, 25), gaussians25_means(c.toy), 0.3);

  Rng rng(seed ^ 0x5DEECE66DULL);
  const MatrixD held = toy_draw(c.dataset, 10000, c.toy, rng);
  const Eigen::VectorXd e_in = energy_scores(triple.energy, held);
  r.energy_means.push_back(e_in.mean());
  const std::vector<double> in(e_in.data(), e_in.data() + e_in.size());
  for (double sd : kNoiseStds) {
    const Eigen::VectorXd e = energy_scores(triple.energy, add_noise(held, sd, rng));
    r.energy_means.push_back(e.mean());
    if (sd == 0.5) r.auroc = ood_auroc(in, std::vector<double>(e.data(), e.data() + e.size()));
  }
  return r;
}

json to_json(const RunResult& r) {
  return {{"variant", r.variant}, {"seed", r.seed},   {"diverged", r.diverged}, {"iterations", r.iterations},
          {"cpu_seconds", r.cpu_seconds}, {"modes", r.modes}, {"kl", r.kl}, {"assigned", r.assigned},
          {"tv", r.tv}, {"hits", r.hits}, {"energy_means", r.energy_means}, {"auroc", r.auroc}};
}

RunResult train_and_evaluate(const Variant& v, std::uint64_t seed, long iters, const fs::path& work) {
  TrainConfig c = preset_config("toy");
  c.T = v.T;
  c.ablation = v.ablation;
  c.seed = seed;
  c.total_iterations = iters;
  const std::string tag = v.name + "_s" + std::to_string(seed);
  c.checkpoint_path = (work / (tag + ".ckpt")).string();
  c.metrics_path = (work / (tag + ".ndjson")).string();
  c.log_every = std::max<long>(1, iters / 4);

  std::cerr << "[acceptance] training " << tag << " for " << iters << " iterations" << std::endl;
  const std::clock_t c0 = std::clock();
  auto st = init_state(c);
  RunResult r;
  try {
    fit(st);
  } catch (const DivergenceError& e) {
    r.diverged = true;
    std::cerr << "[acceptance] " << tag << " diverged: " << e.what() << std::endl;
  }
  const double cpu = static_cast<double>(std::clock() - c0) / CLOCKS_PER_SEC;
  if (!r.diverged) r = evaluate(st, v, seed);
  r.variant = v.name;
  r.seed = seed;
  r.iterations = st.iteration;
  r.cpu_seconds = cpu;
  std::ofstream(work / (tag + ".json")) << to_json(r).dump(2) << "\n";
  std::cerr << "[acceptance] " << tag << ": " << to_json(r).dump() << std::endl;
  return r;
}

std::string list(const std::vector<RunResult>& runs, const std::function<std::string(const RunResult&)>& f) {
  std::string s;
  for (std::size_t i = 0; i < runs.size(); ++i) s += (i ? " " : "") + f(runs[i]);
  return s;
}

void toy_suite(const fs::path& work) {
  const long iters = env_long("DDAEBM_ACCEPTANCE_ITERS", 20000);
  const long seeds = env_long("DDAEBM_ACCEPTANCE_SEEDS", 5);
  const long need = seeds - seeds / 5;  // 4 of 5
  const Variant full{"full", 4, {}};
  Variant no_latent{"no_latent", 4, {}};
  no_latent.ablation.no_latent = true;
  Variant kl_only{"kl_only", 4, {}};
  kl_only.ablation.kl_only = true;
  const Variant t1{"T1", 1, {}};

  std::vector<RunResult> F, N, K, S;
  for (long s = 0; s < seeds; ++s) F.push_back(train_and_evaluate(full, static_cast<std::uint64_t>(s), iters, work));

  // 6
  long ok6 = 0;
  bool budget = true;
  for (const auto& r : F) {
    ok6 += !r.diverged && r.modes == 25 && r.kl <= 0.1;
    budget &= r.iterations <= 50000 && r.cpu_seconds <= 1800.0;
  }
  report(6, ok6 >= need && budget, "toy generation: 25/25 modes within 3 sigma, KL <= 0.1",
         fmt(ok6, "/", seeds, " seeds; modes ", list(F, [](auto& r) { return std::to_string(r.modes); }), "; KL ",
             list(F, [](auto& r) { return fmt(r.kl); }), "; cpu s ",
             list(F, [](auto& r) { return fmt(std::lround(r.cpu_seconds)); }), "; iters ", iters));

  // 7
  long ok7 = 0;
  for (const auto& r : F) ok7 += !r.diverged && r.tv <= 0.15 && r.hits >= 20;
  report(7, ok7 >= need, "toy density: grid TV <= 0.15 and >= 20 argmax hits",
         fmt(ok7, "/", seeds, " seeds; TV ", list(F, [](auto& r) { return fmt(r.tv); }), "; hits ",
             list(F, [](auto& r) { return std::to_string(r.hits); })));

  // 8
  long ok8 = 0;
  for (const auto& r : F) {
    if (r.diverged) continue;
    bool mono = true;
    for (std::size_t i = 1; i < r.energy_means.size(); ++i) mono &= r.energy_means[i - 1] > r.energy_means[i];
    ok8 += mono && r.auroc >= 0.9;
  }
  report(8, ok8 >= need, "OOD ordering: monotone mean energy, AUROC(noise 0.5) >= 0.9",
         fmt(ok8, "/", seeds, " seeds; AUROC ", list(F, [](auto& r) { return fmt(r.auroc); }), "; mean E (in,.01,.1,.5) ",
             list(F, [](auto& r) {
               std::string s = "(";
               for (std::size_t i = 0; i < r.energy_means.size(); ++i) s += (i ? "," : "") + fmt(r.energy_means[i]);
               return s + ")";
             })));

  // 9
  for (long s = 0; s < seeds; ++s) N.push_back(train_and_evaluate(no_latent, static_cast<std::uint64_t>(s), iters, work));
  for (long s = 0; s < seeds; ++s) K.push_back(train_and_evaluate(kl_only, static_cast<std::uint64_t>(s), iters, work));
  long kl_worse = 0, auc_worse = 0;
  for (long s = 0; s < seeds; ++s) {
    const auto i = static_cast<std::size_t>(s);
    kl_worse += mode_kl(N[i]) > mode_kl(F[i]);
    auc_worse += !F[i].diverged && (K[i].diverged || K[i].auroc < F[i].auroc);
  }
  report(9, kl_worse >= need && auc_worse >= need, "ablation direction: no_latent worsens mode KL, kl_only worsens AUROC",
         fmt("KL worse on ", kl_worse, "/", seeds, " (no_latent ", list(N, [](auto& r) { return fmt(mode_kl(r)); }),
             "); AUROC worse on ", auc_worse, "/", seeds, " (kl_only ", list(K, [](auto& r) { return fmt(r.auroc); }), ")"));

  // 10
  for (long s = 0; s < seeds; ++s) S.push_back(train_and_evaluate(t1, static_cast<std::uint64_t>(s), iters, work));
  long t1_ok = 0, t4_ok = 0;
  for (long s = 0; s < seeds; ++s) {
    const auto i = static_cast<std::size_t>(s);
    t1_ok += S[i].diverged || mode_kl(S[i]) > mode_kl(F[i]);
    t4_ok += !F[i].diverged;
  }
  report(10, t1_ok == seeds && t4_ok == seeds, "T sweep: T=1 diverges or has worse mode KL; T=4 never diverges",
         fmt("T=1 worse on ", t1_ok, "/", seeds, " (KL ",
             list(S, [](auto& r) { return r.diverged ? std::string("diverged") : fmt(mode_kl(r)); }),
             "); T=4 completed ", t4_ok, "/", seeds));
}

}  // namespace

int main() {
  const char* dir = std::getenv("DDAEBM_ACCEPTANCE_DIR");
  const fs::path work = dir && *dir ? fs::path(dir) : fs::current_path() / "acceptance_runs";
  fs::create_directories(work);
  try {
    schedule_exactness();
    gaussian_analytics();
    bound_directions();
    gradient_integrity();
    importance_ratio_values();
    sampler_accounting();
    determinism(work);
    toy_suite(work);
  } catch (const std::exception& e) {
    std::cout << "acceptance aborted: " << e.what() << std::endl;
    return 2;
  }
  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << std::endl;
  return failures == 0 ? 0 : 1;
}
