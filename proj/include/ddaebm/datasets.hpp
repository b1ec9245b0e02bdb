#pragma once

#include "ddaebm/rng.hpp"
#include "ddaebm/schedule.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace ddaebm {

enum class DatasetName { gaussians25, pinwheel, swissroll, mnist, image_folder };

std::string to_string(DatasetName name);
DatasetName dataset_from_string(const std::string& name);
bool is_toy(DatasetName name);

// Generative parameters of the 2D toy sets.
struct ToyParams {
  double grid_spacing = 2.0;   // 25-Gaussians means on {-2s, -s, 0, s, 2s}^2
  double component_std = 0.05;
  int pinwheel_blades = 5;
  double pinwheel_radial_std = 0.3;
  double pinwheel_tangential_std = 0.1;
  double pinwheel_rate = 0.25;
  double pinwheel_scale = 2.0;
  double swiss_noise = 0.5;
  double swiss_scale = 1.0 / 4.5;

  friend bool operator==(const ToyParams&, const ToyParams&) = default;
};

struct DatasetSpec {
  DatasetName name = DatasetName::gaussians25;
  long n = 0;
  std::string path;
  std::uint64_t seed = 0;
  bool scale_to_unit = true;  // images only: map [0, 255] onto [-1, 1]
  ToyParams toy;
};

// n x 2 points; a pure function of (name, n, seed, toy params).
MatrixD toy_sample(const DatasetSpec& spec);
// Streaming variant drawing from an existing random stream.
MatrixD toy_draw(DatasetName name, long n, const ToyParams& params, Rng& rng);

// 25 x 2 component means of the 25-Gaussians mixture.
MatrixD gaussians25_means(const ToyParams& params = {});
// Closed-form mixture log density at each row of x.
Eigen::VectorXd gaussians25_log_density(const MatrixD& x, const ToyParams& params = {});

struct ImageArray {
  int channels = 0;
  int height = 0;
  int width = 0;
  MatrixD data;  // one image per row, flattened channel-major (C, H, W)
};

// image_folder: every .png/.jpg/.jpeg in spec.path (sorted by name).
// mnist: spec.path is the IDX image file (e.g. train-images-idx3-ubyte).
ImageArray load_images(const DatasetSpec& spec);

double scale_pixel(std::uint8_t v);

// Deterministic shuffled batches over an in-memory image set. Pass k over the
// data uses a permutation derived from (seed, k), so the position
// (epoch, cursor) fully describes the stream.
class ImageStream {
 public:
  ImageStream(ImageArray images, std::uint64_t seed);
  MatrixD next_batch(long n);
  const ImageArray& images() const { return images_; }

  long epoch() const { return epoch_; }
  long cursor() const { return static_cast<long>(cursor_); }
  void seek(long epoch, long cursor);

 private:
  void shuffle_epoch();
  ImageArray images_;
  std::uint64_t seed_;
  long epoch_ = 0;
  std::vector<long> order_;
  std::size_t cursor_ = 0;
};

}  // namespace ddaebm
