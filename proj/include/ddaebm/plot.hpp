#pragma once

// Minimal raster plots written as PNG.

#include "ddaebm/evaluation.hpp"
#include "ddaebm/image_io.hpp"

#include <string>

namespace ddaebm {

RasterImage scatter_image(const MatrixD& points, const Bounds& bounds, int size = 512);
// Heat map of exp(values - max) with a perceptual-ish colour ramp; row 0 at the bottom.
RasterImage heatmap_image(const DensityGrid& grid);
// Rows in [-1, 1], channel-major (C, H, W); tiled into a near-square grid.
RasterImage image_grid(const MatrixD& rows, int channels, int height, int width, int max_tiles = 100);
RasterImage histogram_image(const HistogramSet& h, int width = 640, int height = 360);

}  // namespace ddaebm
