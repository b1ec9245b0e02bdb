#pragma once

// Read-only measurements of a trained model: energy density grids, OOD AUROC,
// mode coverage and energy histograms.

#include "ddaebm/datasets.hpp"
#include "ddaebm/models.hpp"
#include "ddaebm/schedule.hpp"

#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace ddaebm {

// Per-row score of a batch of points.
using Scorer = std::function<Eigen::VectorXd(const MatrixD&)>;

// E(x, 0) per row, evaluated in chunks on frozen parameters.
template <typename T>
Eigen::VectorXd energy_scores(EnergyModel<T>& model, const MatrixD& x, long chunk = 4096);
template <typename T>
Scorer energy_scorer(EnergyModel<T>& model, long chunk = 4096);

struct Bounds {
  double x_min = -6.0;
  double x_max = 6.0;
  double y_min = -6.0;
  double y_max = 6.0;
};

struct DensityGrid {
  Bounds bounds;
  int resolution = 0;
  std::vector<double> xs;  // column coordinates
  std::vector<double> ys;  // row coordinates
  MatrixD values;          // values(i, j) = score at (xs[j], ys[i])
};

// resolution^2 points, row i = ys[i], column j = xs[j], flattened row-major.
MatrixD grid_points(const Bounds& bounds, int resolution);
DensityGrid density_grid(const Scorer& scorer, const Bounds& bounds, int resolution,
                         long chunk = 0);
template <typename T>
DensityGrid density_grid(EnergyModel<T>& model, const Bounds& bounds, int resolution,
                         long chunk = 4096);

// exp(values) normalized to unit mass over the grid cells.
MatrixD normalized_mass(const MatrixD& log_values);
// Closed-form 25-Gaussians log density on the same grid.
DensityGrid mixture_grid(const Bounds& bounds, int resolution, const ToyParams& toy = {});
// 1/2 sum |p - q| over two unit-mass grids.
double total_variation(const MatrixD& p, const MatrixD& q);

struct GridPoint {
  double x = 0.0;
  double y = 0.0;
  double value = 0.0;
};
// The k highest 8-neighbourhood local maxima, in decreasing value.
std::vector<GridPoint> grid_local_maxima(const DensityGrid& grid, int k);
// Number of reference points with some grid point within tol.
int points_matched(const std::vector<GridPoint>& found, const MatrixD& reference, double tol);

// P(in > out) + 1/2 P(in == out), by ranking with averaged ties.
double ood_auroc(std::span<const double> scores_in, std::span<const double> scores_out);

struct ModeCoverage {
  int count = 0;              // modes with >= 1 sample assigned within radius
  double kl = 0.0;            // KL(empirical || uniform over modes)
  long assigned = 0;          // samples within radius of their nearest mode
  std::vector<long> counts;   // per mode
  bool warning = false;       // no sample fell within radius
};
ModeCoverage mode_coverage(const MatrixD& samples, const MatrixD& modes, double radius);

struct HistogramSet {
  std::vector<double> edges;  // bins + 1 shared edges over the pooled range
  std::map<std::string, std::vector<long>> counts;
};
HistogramSet histogram(const std::map<std::string, Eigen::VectorXd>& scores, int bins);
HistogramSet energy_histogram(const Scorer& scorer, const std::map<std::string, MatrixD>& data,
                              int bins);

// x + std * noise with noise drawn from rng.
MatrixD add_noise(const MatrixD& x, double std, Rng& rng);

// Diffuse x0 one step, then draw from p(x0 | x1) with the generator.
template <typename T>
MatrixD one_step_fakes(ModelTriple<T>& triple, const Schedule& s, const MatrixD& x0, Rng& rng,
                       bool use_ema = true, bool zero_latent = false);

}  // namespace ddaebm
