#include "ddaebm/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>
#include <stdexcept>

namespace ddaebm {

template <typename T>
Eigen::VectorXd energy_scores(EnergyModel<T>& model, const MatrixD& x, long chunk) {
  if (x.cols() != model.data_dim()) throw std::invalid_argument("energy_scores: dimension mismatch");
  if (chunk < 1) chunk = std::max<long>(1, x.rows());
  const nn::Pass pass{.train = false, .frozen = true};
  ad::NoGradGuard no_grad;
  Eigen::VectorXd out(x.rows());
  for (Eigen::Index start = 0; start < x.rows(); start += chunk) {
    const Eigen::Index n = std::min<Eigen::Index>(chunk, x.rows() - start);
    const std::vector<int> zeros(static_cast<std::size_t>(n), 0);
    const auto xb = Var<T>::constant(x.middleRows(start, n).template cast<T>());
    out.segment(start, n) = model.energy(xb, zeros, pass).value().col(0).template cast<double>();
  }
  return out;
}

template <typename T>
Scorer energy_scorer(EnergyModel<T>& model, long chunk) {
  return [&model, chunk](const MatrixD& x) { return energy_scores(model, x, chunk); };
}

MatrixD grid_points(const Bounds& b, int resolution) {
  if (resolution < 2) throw std::invalid_argument("grid resolution must be >= 2");
  if (!(b.x_max > b.x_min) || !(b.y_max > b.y_min)) throw std::invalid_argument("empty bounds");
  MatrixD pts(static_cast<Eigen::Index>(resolution) * resolution, 2);
  const double dx = (b.x_max - b.x_min) / (resolution - 1);
  const double dy = (b.y_max - b.y_min) / (resolution - 1);
  for (int i = 0; i < resolution; ++i)
    for (int j = 0; j < resolution; ++j) {
      pts(i * resolution + j, 0) = b.x_min + j * dx;
      pts(i * resolution + j, 1) = b.y_min + i * dy;
    }
  return pts;
}

DensityGrid density_grid(const Scorer& scorer, const Bounds& bounds, int resolution, long chunk) {
  const MatrixD pts = grid_points(bounds, resolution);
  DensityGrid g;
  g.bounds = bounds;
  g.resolution = resolution;
  for (int j = 0; j < resolution; ++j) g.xs.push_back(pts(j, 0));
  for (int i = 0; i < resolution; ++i) g.ys.push_back(pts(i * resolution, 1));
  Eigen::VectorXd v(pts.rows());
  if (chunk < 1) chunk = pts.rows();
  for (Eigen::Index start = 0; start < pts.rows(); start += chunk) {
    const Eigen::Index n = std::min<Eigen::Index>(chunk, pts.rows() - start);
    const Eigen::VectorXd part = scorer(pts.middleRows(start, n));
    if (part.size() != n) throw std::logic_error("scorer returned the wrong number of scores");
    v.segment(start, n) = part;
  }
  g.values = Eigen::Map<const MatrixD>(v.data(), resolution, resolution);
  return g;
}

template <typename T>
DensityGrid density_grid(EnergyModel<T>& model, const Bounds& bounds, int resolution, long chunk) {
  if (model.data_dim() != 2) throw std::invalid_argument("density grids need a 2D model");
  return density_grid(energy_scorer(model, chunk), bounds, resolution, 0);
}

MatrixD normalized_mass(const MatrixD& log_values) {
  const double m = log_values.maxCoeff();
  MatrixD p = (log_values.array() - m).exp().matrix();
  return p / p.sum();
}

DensityGrid mixture_grid(const Bounds& bounds, int resolution, const ToyParams& toy) {
  return density_grid([&toy](const MatrixD& x) { return gaussians25_log_density(x, toy); }, bounds,
                      resolution, 0);
}

double total_variation(const MatrixD& p, const MatrixD& q) {
  if (p.rows() != q.rows() || p.cols() != q.cols())
    throw std::invalid_argument("total_variation: grid shapes differ");
  return 0.5 * (p - q).cwiseAbs().sum();
}

std::vector<GridPoint> grid_local_maxima(const DensityGrid& grid, int k) {
  const auto& v = grid.values;
  std::vector<GridPoint> found;
  for (Eigen::Index i = 0; i < v.rows(); ++i)
    for (Eigen::Index j = 0; j < v.cols(); ++j) {
      bool is_max = true;
      for (int di = -1; di <= 1 && is_max; ++di)
        for (int dj = -1; dj <= 1; ++dj) {
          if (di == 0 && dj == 0) continue;
          const Eigen::Index a = i + di;
          const Eigen::Index b = j + dj;
          if (a < 0 || b < 0 || a >= v.rows() || b >= v.cols()) continue;
          // ties broken by index so a plateau yields one maximum
          if (v(a, b) > v(i, j) || (v(a, b) == v(i, j) && (a < i || (a == i && b < j)))) {
            is_max = false;
            break;
          }
        }
      if (is_max) found.push_back({grid.xs[j], grid.ys[i], v(i, j)});
    }
  std::sort(found.begin(), found.end(),
            [](const GridPoint& a, const GridPoint& b) { return a.value > b.value; });
  if (static_cast<int>(found.size()) > k) found.resize(static_cast<std::size_t>(k));
  return found;
}

int points_matched(const std::vector<GridPoint>& found, const MatrixD& reference, double tol) {
  int hits = 0;
  for (Eigen::Index r = 0; r < reference.rows(); ++r)
    for (const auto& p : found)
      if (std::hypot(p.x - reference(r, 0), p.y - reference(r, 1)) <= tol) {
        ++hits;
        break;
      }
  return hits;
}

double ood_auroc(std::span<const double> in, std::span<const double> out) {
  if (in.empty() || out.empty()) throw std::invalid_argument("ood_auroc: empty score set");
  struct Item {
    double score;
    bool positive;
  };
  std::vector<Item> all;
  all.reserve(in.size() + out.size());
  for (double s : in) all.push_back({s, true});
  for (double s : out) all.push_back({s, false});
  std::sort(all.begin(), all.end(), [](const Item& a, const Item& b) { return a.score < b.score; });
  // Mann-Whitney U from average ranks (1-based).
  double rank_sum = 0.0;
  std::size_t i = 0;
  while (i < all.size()) {
    std::size_t j = i;
    while (j < all.size() && all[j].score == all[i].score) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k)
      if (all[k].positive) rank_sum += avg_rank;
    i = j;
  }
  const double n_in = static_cast<double>(in.size());
  const double n_out = static_cast<double>(out.size());
  const double u = rank_sum - n_in * (n_in + 1.0) / 2.0;
  return u / (n_in * n_out);
}

ModeCoverage mode_coverage(const MatrixD& samples, const MatrixD& modes, double radius) {
  if (modes.rows() == 0) throw std::invalid_argument("mode_coverage: no modes");
  if (!(radius > 0.0)) throw std::invalid_argument("mode_coverage: radius must be > 0");
  if (samples.cols() != modes.cols()) throw std::invalid_argument("mode_coverage: dimension mismatch");
  ModeCoverage r;
  r.counts.assign(static_cast<std::size_t>(modes.rows()), 0);
  for (Eigen::Index i = 0; i < samples.rows(); ++i) {
    Eigen::Index best = 0;
    const double d2 = (modes.rowwise() - samples.row(i)).rowwise().squaredNorm().minCoeff(&best);
    if (std::sqrt(d2) <= radius) {
      ++r.counts[static_cast<std::size_t>(best)];
      ++r.assigned;
    }
  }
  if (r.assigned == 0) {
    r.warning = true;
    std::cerr << "warning: mode_coverage found no sample within radius " << radius
              << " of any mode\n";
    return r;
  }
  const double m = static_cast<double>(modes.rows());
  for (long c : r.counts) {
    if (c == 0) continue;
    ++r.count;
    const double p = static_cast<double>(c) / static_cast<double>(r.assigned);
    r.kl += p * std::log(p * m);
  }
  return r;
}

HistogramSet histogram(const std::map<std::string, Eigen::VectorXd>& scores, int bins) {
  if (bins < 2) throw std::invalid_argument("histogram: bins must be >= 2");
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (const auto& [name, v] : scores) {
    if (v.size() == 0) throw std::invalid_argument("histogram: empty score set '" + name + "'");
    lo = std::min(lo, v.minCoeff());
    hi = std::max(hi, v.maxCoeff());
  }
  if (hi == lo) {
    lo -= 0.5;
    hi += 0.5;
  }
  HistogramSet h;
  for (int b = 0; b <= bins; ++b) h.edges.push_back(lo + (hi - lo) * b / bins);
  for (const auto& [name, v] : scores) {
    std::vector<long> c(static_cast<std::size_t>(bins), 0);
    for (double s : v) {
      int b = static_cast<int>((s - lo) / (hi - lo) * bins);
      c[static_cast<std::size_t>(std::clamp(b, 0, bins - 1))] += 1;
    }
    h.counts[name] = std::move(c);
  }
  return h;
}

HistogramSet energy_histogram(const Scorer& scorer, const std::map<std::string, MatrixD>& data,
                              int bins) {
  std::map<std::string, Eigen::VectorXd> scores;
  for (const auto& [name, x] : data) {
    if (x.rows() == 0) throw std::invalid_argument("energy_histogram: empty dataset '" + name + "'");
    scores[name] = scorer(x);
  }
  return histogram(scores, bins);
}

MatrixD add_noise(const MatrixD& x, double std, Rng& rng) {
  return x + std * rng.normal_matrix(x.rows(), x.cols());
}

template <typename T>
MatrixD one_step_fakes(ModelTriple<T>& triple, const Schedule& s, const MatrixD& x0, Rng& rng,
                       bool use_ema, bool zero_latent) {
  auto& gen = use_ema ? triple.ema_generator : triple.generator;
  const nn::Pass pass{.train = false, .frozen = true};
  ad::NoGradGuard no_grad;
  const MatrixD x1 = forward_sample(s, x0, 1, rng.normal_matrix(x0.rows(), x0.cols()));
  Matrix<T> z = zero_latent ? Matrix<T>::Zero(x0.rows(), triple.latent_dim)
                            : rng.normal_matrix<T>(x0.rows(), triple.latent_dim);
  const std::vector<int> ones(static_cast<std::size_t>(x0.rows()), 1);
  const auto x0_hat = gen.generate_x0(Var<T>::constant(x1.template cast<T>()),
                                      Var<T>::constant(std::move(z)), ones, pass);
  // beta_tilde_1 = 0: the t = 1 posterior is its mean
  return posterior_params(s, x1, x0_hat.value().template cast<double>(), 1).mean;
}

#define DDAEBM_INSTANTIATE(T)                                                                  \
  template Eigen::VectorXd energy_scores<T>(EnergyModel<T>&, const MatrixD&, long);            \
  template Scorer energy_scorer<T>(EnergyModel<T>&, long);                                     \
  template DensityGrid density_grid<T>(EnergyModel<T>&, const Bounds&, int, long);             \
  template MatrixD one_step_fakes<T>(ModelTriple<T>&, const Schedule&, const MatrixD&, Rng&,   \
                                     bool, bool);

DDAEBM_INSTANTIATE(float)
DDAEBM_INSTANTIATE(double)

#undef DDAEBM_INSTANTIATE

}  // namespace ddaebm
