#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace ddaebm {

// 8-bit raster, interleaved channels (HWC). channels is 1 (gray) or 3 (RGB).
struct RasterImage {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<std::uint8_t> pixels;
};

// Decodes PNG or JPEG by extension. Gray+alpha and RGBA drop the alpha channel.
RasterImage read_image(const std::string& path);
void write_png(const std::string& path, const RasterImage& image);

}  // namespace ddaebm
