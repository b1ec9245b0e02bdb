#include "ddaebm/plot.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>

namespace ddaebm {

namespace {

using Rgb = std::array<std::uint8_t, 3>;

RasterImage blank(int w, int h, Rgb fill) {
  RasterImage img;
  img.width = w;
  img.height = h;
  img.channels = 3;
  img.pixels.resize(static_cast<std::size_t>(w) * h * 3);
  for (std::size_t i = 0; i < img.pixels.size(); i += 3)
    std::copy(fill.begin(), fill.end(), img.pixels.begin() + static_cast<long>(i));
  return img;
}

void put(RasterImage& img, int x, int y, Rgb c) {
  if (x < 0 || y < 0 || x >= img.width || y >= img.height) return;
  auto* p = &img.pixels[(static_cast<std::size_t>(y) * img.width + x) * 3];
  p[0] = c[0];
  p[1] = c[1];
  p[2] = c[2];
}

// black -> purple -> orange -> pale yellow
Rgb ramp(double v) {
  v = std::clamp(v, 0.0, 1.0);
  static const std::array<std::array<double, 3>, 4> stops = {
      {{0, 0, 4}, {120, 28, 109}, {237, 105, 37}, {252, 255, 164}}};
  const double pos = v * 3.0;
  const int k = std::min(2, static_cast<int>(pos));
  const double f = pos - k;
  Rgb c;
  for (int i = 0; i < 3; ++i)
    c[static_cast<std::size_t>(i)] =
        static_cast<std::uint8_t>(stops[k][i] + f * (stops[k + 1][i] - stops[k][i]));
  return c;
}

}  // namespace

RasterImage scatter_image(const MatrixD& points, const Bounds& b, int size) {
  if (points.cols() != 2) throw std::invalid_argument("scatter needs 2D points");
  RasterImage img = blank(size, size, {255, 255, 255});
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    const int x = static_cast<int>((points(i, 0) - b.x_min) / (b.x_max - b.x_min) * (size - 1));
    const int y = static_cast<int>((b.y_max - points(i, 1)) / (b.y_max - b.y_min) * (size - 1));
    put(img, x, y, {30, 80, 180});
    put(img, x + 1, y, {30, 80, 180});
    put(img, x, y + 1, {30, 80, 180});
    put(img, x + 1, y + 1, {30, 80, 180});
  }
  return img;
}

RasterImage heatmap_image(const DensityGrid& grid) {
  const int n = grid.resolution;
  RasterImage img = blank(n, n, {0, 0, 0});
  const double m = grid.values.maxCoeff();
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) put(img, j, n - 1 - i, ramp(std::exp(grid.values(i, j) - m)));
  return img;
}

RasterImage image_grid(const MatrixD& rows, int channels, int height, int width, int max_tiles) {
  if (channels != 1 && channels != 3) throw std::invalid_argument("image_grid: 1 or 3 channels");
  if (rows.cols() != static_cast<Eigen::Index>(channels) * height * width)
    throw std::invalid_argument("image_grid: row width does not match (C, H, W)");
  const int count = static_cast<int>(std::min<Eigen::Index>(rows.rows(), max_tiles));
  const int per_row = std::max(1, static_cast<int>(std::ceil(std::sqrt(count))));
  const int tile_rows = (count + per_row - 1) / per_row;
  RasterImage img;
  img.width = per_row * (width + 2) + 2;
  img.height = tile_rows * (height + 2) + 2;
  img.channels = channels;
  img.pixels.assign(static_cast<std::size_t>(img.width) * img.height * channels, 0);
  const int plane = height * width;
  for (int k = 0; k < count; ++k) {
    const int ox = 2 + (k % per_row) * (width + 2);
    const int oy = 2 + (k / per_row) * (height + 2);
    for (int c = 0; c < channels; ++c)
      for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x) {
          const double v = rows(k, c * plane + y * width + x);
          const auto byte = static_cast<std::uint8_t>(std::lround(std::clamp((v + 1.0) * 127.5, 0.0, 255.0)));
          img.pixels[(static_cast<std::size_t>(oy + y) * img.width + ox + x) * channels + c] = byte;
        }
  }
  return img;
}

RasterImage histogram_image(const HistogramSet& h, int width, int height) {
  static const std::array<Rgb, 6> colours = {
      {{31, 119, 180}, {255, 127, 14}, {44, 160, 44}, {214, 39, 40}, {148, 103, 189}, {140, 86, 75}}};
  RasterImage img = blank(width, height, {255, 255, 255});
  const int bins = static_cast<int>(h.edges.size()) - 1;
  if (bins < 1) return img;
  double peak = 0.0;
  for (const auto& [name, c] : h.counts) {
    long total = 0;
    for (long v : c) total += v;
    for (long v : c) peak = std::max(peak, total ? static_cast<double>(v) / total : 0.0);
  }
  if (peak <= 0.0) return img;
  std::size_t series = 0;
  for (const auto& [name, c] : h.counts) {
    long total = 0;
    for (long v : c) total += v;
    const Rgb colour = colours[series++ % colours.size()];
    // outline of each normalized histogram
    int prev_y = height - 1;
    for (int b = 0; b < bins; ++b) {
      const double frac = total ? static_cast<double>(c[static_cast<std::size_t>(b)]) / total / peak : 0.0;
      const int y = height - 1 - static_cast<int>(frac * (height - 10));
      const int x0 = b * width / bins;
      const int x1 = (b + 1) * width / bins;
      for (int x = x0; x < x1; ++x) put(img, x, y, colour);
      for (int yy = std::min(prev_y, y); yy <= std::max(prev_y, y); ++yy) put(img, x0, yy, colour);
      prev_y = y;
    }
  }
  return img;
}

}  // namespace ddaebm
