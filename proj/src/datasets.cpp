#include "ddaebm/datasets.hpp"

#include "ddaebm/errors.hpp"
#include "ddaebm/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <stdexcept>

namespace ddaebm {

std::string to_string(DatasetName name) {
  switch (name) {
    case DatasetName::gaussians25: return "gaussians25";
    case DatasetName::pinwheel: return "pinwheel";
    case DatasetName::swissroll: return "swissroll";
    case DatasetName::mnist: return "mnist";
    case DatasetName::image_folder: return "image_folder";
  }
  return "unknown";
}

DatasetName dataset_from_string(const std::string& name) {
  for (auto n : {DatasetName::gaussians25, DatasetName::pinwheel, DatasetName::swissroll,
                 DatasetName::mnist, DatasetName::image_folder})
    if (to_string(n) == name) return n;
  throw std::invalid_argument("unknown dataset '" + name + "'");
}

bool is_toy(DatasetName name) {
  return name == DatasetName::gaussians25 || name == DatasetName::pinwheel ||
         name == DatasetName::swissroll;
}

MatrixD gaussians25_means(const ToyParams& params) {
  MatrixD means(25, 2);
  int k = 0;
  for (int i = -2; i <= 2; ++i)
    for (int j = -2; j <= 2; ++j) {
      means(k, 0) = i * params.grid_spacing;
      means(k, 1) = j * params.grid_spacing;
      ++k;
    }
  return means;
}

Eigen::VectorXd gaussians25_log_density(const MatrixD& x, const ToyParams& params) {
  const MatrixD means = gaussians25_means(params);
  const double var = params.component_std * params.component_std;
  const double log_norm = -std::log(2.0 * std::numbers::pi * var) - std::log(25.0);
  Eigen::VectorXd out(x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    Eigen::VectorXd logs(25);
    for (int k = 0; k < 25; ++k)
      logs(k) = log_norm - 0.5 * (x.row(i) - means.row(k)).squaredNorm() / var;
    const double m = logs.maxCoeff();
    out(i) = m + std::log((logs.array() - m).exp().sum());
  }
  return out;
}

MatrixD toy_draw(DatasetName name, long n, const ToyParams& p, Rng& rng) {
  if (!is_toy(name)) throw std::invalid_argument(to_string(name) + " is not a toy dataset");
  if (n < 1) throw std::invalid_argument("toy dataset size must be >= 1");
  MatrixD out(n, 2);
  switch (name) {
    case DatasetName::gaussians25: {
      const MatrixD means = gaussians25_means(p);
      for (long i = 0; i < n; ++i) {
        const int k = rng.uniform_int(0, 24);
        out(i, 0) = means(k, 0) + p.component_std * rng.normal();
        out(i, 1) = means(k, 1) + p.component_std * rng.normal();
      }
      break;
    }
    case DatasetName::pinwheel: {
      // Gaussian blades stretched along x, then rotated by an angle that grows
      // exponentially with the radial coordinate.
      const double blade_angle = 2.0 * std::numbers::pi / p.pinwheel_blades;
      for (long i = 0; i < n; ++i) {
        const int label = rng.uniform_int(0, p.pinwheel_blades - 1);
        const double r = 1.0 + p.pinwheel_radial_std * rng.normal();
        const double tang = p.pinwheel_tangential_std * rng.normal();
        const double angle = label * blade_angle + p.pinwheel_rate * std::exp(r);
        const double c = std::cos(angle);
        const double s = std::sin(angle);
        out(i, 0) = p.pinwheel_scale * (c * r - s * tang);
        out(i, 1) = p.pinwheel_scale * (s * r + c * tang);
      }
      break;
    }
    case DatasetName::swissroll: {
      for (long i = 0; i < n; ++i) {
        const double t = 1.5 * std::numbers::pi * (1.0 + 2.0 * rng.uniform());
        out(i, 0) = p.swiss_scale * (t * std::cos(t) + p.swiss_noise * rng.normal());
        out(i, 1) = p.swiss_scale * (t * std::sin(t) + p.swiss_noise * rng.normal());
      }
      break;
    }
    default:
      break;
  }
  return out;
}

MatrixD toy_sample(const DatasetSpec& spec) {
  Rng rng(spec.seed);
  return toy_draw(spec.name, spec.n, spec.toy, rng);
}

double scale_pixel(std::uint8_t v) { return static_cast<double>(v) / 127.5 - 1.0; }

namespace {

std::uint32_t read_be32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw IoError("truncated IDX header");
  return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) | (std::uint32_t(b[2]) << 8) |
         std::uint32_t(b[3]);
}

ImageArray load_idx(const std::string& path, bool scale) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open IDX file '" + path + "'");
  const std::uint32_t magic = read_be32(in);
  if (magic != 0x00000803) throw IoError("'" + path + "' is not an IDX3 ubyte image file");
  const std::uint32_t count = read_be32(in);
  const std::uint32_t rows = read_be32(in);
  const std::uint32_t cols = read_be32(in);
  ImageArray out;
  out.channels = 1;
  out.height = static_cast<int>(rows);
  out.width = static_cast<int>(cols);
  out.data.resize(count, static_cast<Eigen::Index>(rows) * cols);
  std::vector<unsigned char> buf(static_cast<std::size_t>(rows) * cols);
  for (std::uint32_t i = 0; i < count; ++i) {
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!in) throw IoError("truncated IDX payload in '" + path + "'");
    for (std::size_t k = 0; k < buf.size(); ++k)
      out.data(i, static_cast<Eigen::Index>(k)) = scale ? scale_pixel(buf[k]) : buf[k];
  }
  return out;
}

ImageArray load_folder(const std::string& path, bool scale) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(path)) throw IoError("image folder '" + path + "' does not exist");
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(path)) {
    if (!entry.is_regular_file()) continue;
    auto ext = entry.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (ext == ".png" || ext == ".jpg" || ext == ".jpeg") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw IoError("no PNG/JPEG files in '" + path + "'");

  ImageArray out;
  for (std::size_t i = 0; i < files.size(); ++i) {
    RasterImage img = read_image(files[i].string());
    if (i == 0) {
      out.channels = img.channels;
      out.height = img.height;
      out.width = img.width;
      out.data.resize(static_cast<Eigen::Index>(files.size()),
                      static_cast<Eigen::Index>(img.channels) * img.height * img.width);
    } else if (img.channels != out.channels || img.height != out.height ||
               img.width != out.width) {
      throw IoError("image '" + files[i].string() + "' differs in shape from the first image");
    }
    // interleaved HWC -> planar CHW
    const int plane = img.height * img.width;
    for (int c = 0; c < img.channels; ++c)
      for (int p = 0; p < plane; ++p) {
        const std::uint8_t v = img.pixels[static_cast<std::size_t>(p) * img.channels + c];
        out.data(static_cast<Eigen::Index>(i), c * plane + p) = scale ? scale_pixel(v) : v;
      }
  }
  return out;
}

}  // namespace

ImageArray load_images(const DatasetSpec& spec) {
  switch (spec.name) {
    case DatasetName::mnist: return load_idx(spec.path, spec.scale_to_unit);
    case DatasetName::image_folder: return load_folder(spec.path, spec.scale_to_unit);
    default: throw std::invalid_argument(to_string(spec.name) + " is not an image dataset");
  }
}

ImageStream::ImageStream(ImageArray images, std::uint64_t seed)
    : images_(std::move(images)), seed_(seed) {
  if (images_.data.rows() == 0) throw std::invalid_argument("empty image set");
  order_.resize(static_cast<std::size_t>(images_.data.rows()));
  shuffle_epoch();
}

void ImageStream::shuffle_epoch() {
  for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = static_cast<long>(i);
  Rng rng(seed_ + 0x9E3779B97F4A7C15ULL * static_cast<std::uint64_t>(epoch_ + 1));
  std::shuffle(order_.begin(), order_.end(), rng.engine());
  cursor_ = 0;
}

void ImageStream::seek(long epoch, long cursor) {
  if (epoch < 0 || cursor < 0 || cursor > static_cast<long>(order_.size()))
    throw std::out_of_range("image stream position out of range");
  epoch_ = epoch;
  shuffle_epoch();
  cursor_ = static_cast<std::size_t>(cursor);
}

MatrixD ImageStream::next_batch(long n) {
  MatrixD out(n, images_.data.cols());
  for (long i = 0; i < n; ++i) {
    if (cursor_ == order_.size()) {
      ++epoch_;
      shuffle_epoch();
    }
    out.row(i) = images_.data.row(order_[cursor_++]);
  }
  return out;
}

}  // namespace ddaebm
