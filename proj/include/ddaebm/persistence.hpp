#pragma once

// On-disk formats: NPY arrays, JSON run configs with named presets, binary
// checkpoints, the NDJSON metrics log, and the per-run lock file.

#include "ddaebm/trainer.hpp"

#include <json.hpp>

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

namespace ddaebm {

// ---- arrays (NPY v1.0, little-endian, C order) -----------------------------

struct NpyArray {
  std::vector<std::size_t> shape;
  std::string dtype;  // "<f8" or "<f4"
  std::vector<double> values;

  std::size_t size() const;
  // Collapses trailing dimensions: (n, a, b, ...) -> n x (a*b*...).
  MatrixD to_matrix() const;
};

// shape defaults to {rows, cols}; a custom shape must hold the same count.
void write_npy(const std::string& path, const MatrixD& m, std::vector<std::size_t> shape = {});
NpyArray read_npy(const std::string& path);

// ---- run configuration ------------------------------------------------------

const std::vector<std::string>& preset_names();
// Reference presets document large-scale settings; they are not desk-trainable.
bool is_reference_preset(const std::string& name);
TrainConfig preset_config(const std::string& name);

nlohmann::json config_to_json(const TrainConfig& config);
// Starts from the document's "preset" (default toy) and applies every other
// key. Unknown keys and ill-typed values raise ConfigError naming the key.
TrainConfig config_from_json(const nlohmann::json& doc);
TrainConfig load_config_file(const std::string& path);
// key=value override; value parsed as JSON when possible, else taken as a string.
void apply_override(TrainConfig& config, const std::string& key, const std::string& value);

// ---- checkpoints ------------------------------------------------------------

inline constexpr std::uint32_t kCheckpointVersion = 1;

// Written to a temporary file, then renamed into place.
void save_checkpoint(const std::string& path, const TrainState& state);
// attach_data re-resolves the training data so training can resume; sampling
// and evaluation can skip it.
TrainState load_checkpoint(const std::string& path, bool attach_data = true);

// ---- metrics ----------------------------------------------------------------

nlohmann::json metrics_to_json(const StepMetrics& m);
StepMetrics metrics_from_json(const nlohmann::json& j);

class MetricsWriter {
 public:
  MetricsWriter(const std::string& path, bool append);
  void write(const StepMetrics& m);
  void flush();

 private:
  std::string path_;
  std::ofstream out_;
};

std::vector<StepMetrics> read_metrics(const std::string& path);

// ---- locking ----------------------------------------------------------------

// Holds "<target>.lock" for its lifetime. A lock left by a dead process is
// taken over; a live holder raises IoError.
class FileLock {
 public:
  explicit FileLock(const std::string& target);
  ~FileLock();
  FileLock(const FileLock&) = delete;
  FileLock& operator=(const FileLock&) = delete;

  const std::string& path() const { return path_; }

 private:
  std::string path_;
};

}  // namespace ddaebm
