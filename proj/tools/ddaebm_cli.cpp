// ddaebm: train, sample and evaluate denoising diffusion adversarial EBMs.
//
//   ddaebm train --preset toy --dataset gaussians25 --iters 20000 --seed 7
//   ddaebm sample run/checkpoint.ckpt --n 10000 --refine --out samples.npy
//   ddaebm eval run/checkpoint.ckpt --task density ood modes --bounds -6 6 --res 200
//
// Exit codes: 0 ok, 2 config error, 3 divergence, 4 I/O.

#include "ddaebm/errors.hpp"
#include "ddaebm/evaluation.hpp"
#include "ddaebm/persistence.hpp"
#include "ddaebm/plot.hpp"
#include "ddaebm/sampler.hpp"
#include "ddaebm/trainer.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>

namespace fs = std::filesystem;
using namespace ddaebm;
using nlohmann::json;

namespace {

constexpr int kOk = 0;
constexpr int kConfig = 2;
constexpr int kDiverged = 3;
constexpr int kIo = 4;

constexpr const char* kSeedEnv = "DDAEBM_SEED";

std::optional<std::uint64_t> env_seed() {
  const char* v = std::getenv(kSeedEnv);
  if (!v || !*v) return std::nullopt;
  try {
    std::size_t used = 0;
    const auto s = std::stoull(v, &used);
    if (used != std::string(v).size()) throw std::invalid_argument(v);
    return s;
  } catch (const std::exception&) {
    throw ConfigError(std::string(kSeedEnv) + " is not an unsigned integer: '" + v + "'");
  }
}

void ensure_parent(const std::string& path) {
  const fs::path parent = fs::path(path).parent_path();
  std::error_code ec;
  if (!parent.empty()) fs::create_directories(parent, ec);
  if (ec) throw IoError("cannot create directory " + parent.string() + ": " + ec.message());
}

void write_text(const std::string& path, const std::string& text) {
  ensure_parent(path);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  out << text;
  if (!out) throw IoError("write failed: " + path);
}

std::string stem_path(const std::string& out) {
  fs::path p(out);
  if (p.extension() == ".npy") p.replace_extension();
  return p.string();
}

// ---- train -----------------------------------------------------------------

struct TrainArgs {
  std::string preset;
  std::string config_path;
  std::string dataset;
  std::string data_path;
  long iters = -1;
  long epochs = -1;
  std::optional<std::uint64_t> seed;
  std::string ablation;
  std::vector<std::string> overrides;
  std::string out_dir = "run";
  long log_every = 1000;
  long checkpoint_every = 0;
  bool resume = false;
};

void apply_ablation(TrainConfig& c, const std::string& name) {
  if (name.empty()) return;
  c.ablation = Ablation{};
  if (name == "full") return;
  if (name == "no_latent") {
    c.ablation.no_latent = true;
  } else if (name == "kl_only") {
    c.ablation.kl_only = true;
  } else if (name == "drop_qpsi") {
    c.ablation.kl_only = true;
    c.ablation.drop_qpsi = true;
  } else {
    throw ConfigError("unknown ablation '" + name +
                      "' (expected full, no_latent, kl_only or drop_qpsi)");
  }
}

TrainConfig build_train_config(const TrainArgs& a) {
  TrainConfig c;
  if (!a.config_path.empty()) {
    c = load_config_file(a.config_path);
    if (!a.preset.empty() && a.preset != c.preset)
      throw ConfigError("--preset " + a.preset + " conflicts with the config file's preset " +
                        c.preset);
  } else {
    c = preset_config(a.preset.empty() ? "toy" : a.preset);
  }
  if (!a.dataset.empty()) c.dataset = dataset_from_string(a.dataset);
  if (!a.data_path.empty()) c.data_path = a.data_path;
  if (a.iters >= 0) {
    c.total_iterations = a.iters;
    c.epochs = 0;
  }
  if (a.epochs >= 0) c.epochs = a.epochs;
  apply_ablation(c, a.ablation);
  for (const auto& kv : a.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override must be key=value: " + kv);
    apply_override(c, kv.substr(0, eq), kv.substr(eq + 1));
  }
  // Flag beats environment beats file.
  if (auto s = env_seed()) c.seed = *s;
  if (a.seed) c.seed = *a.seed;
  c.checkpoint_path = (fs::path(a.out_dir) / "checkpoint.ckpt").string();
  c.metrics_path = (fs::path(a.out_dir) / "metrics.ndjson").string();
  c.log_every = a.log_every;
  c.checkpoint_every = a.checkpoint_every;
  c.validate();
  return c;
}

int run_train(const TrainArgs& a) {
  TrainConfig c = build_train_config(a);
  if (is_reference_preset(c.preset))
    std::cerr << "warning: preset '" << c.preset
              << "' documents large-scale settings and is not meant to be trained on a desktop\n";
  std::error_code ec;
  fs::create_directories(a.out_dir, ec);
  if (ec) throw IoError("cannot create " + a.out_dir + ": " + ec.message());

  TrainState state = [&] {
    if (a.resume && fs::exists(c.checkpoint_path)) {
      TrainState s = load_checkpoint(c.checkpoint_path);
      if (c.total_iterations < s.iteration)
        throw ConfigError("total_iterations is below the checkpoint's iteration");
      // Only the run length may change on resume.
      TrainConfig stored = s.config;
      stored.total_iterations = c.total_iterations;
      stored.epochs = c.epochs;
      stored.log_every = c.log_every;
      stored.checkpoint_every = c.checkpoint_every;
      stored.checkpoint_path = c.checkpoint_path;
      stored.metrics_path = c.metrics_path;
      if (!(stored == c)) throw ConfigError("--resume with a config that differs from the checkpoint");
      s.config = stored;
      std::cerr << "resuming at iteration " << s.iteration << "\n";
      return s;
    }
    return init_state(c);
  }();
  write_text((fs::path(a.out_dir) / "config.json").string(), config_to_json(state.config).dump(2) + "\n");
  fit(state);
  std::cout << "checkpoint " << c.checkpoint_path << "\nmetrics " << c.metrics_path << "\n";
  return kOk;
}

// ---- sample ----------------------------------------------------------------

struct SampleArgs {
  std::string checkpoint;
  long n = 1000;
  bool refine = false;
  double refine_step = 0.0;
  bool raw = false;
  std::optional<std::uint64_t> seed;
  std::string out = "samples.npy";
};

std::uint64_t resolve_seed(const std::optional<std::uint64_t>& flag, std::uint64_t fallback) {
  if (flag) return *flag;
  if (auto s = env_seed()) return *s;
  return fallback;
}

void write_sample_png(const std::string& path, const MatrixD& x, const DataShape& shape) {
  ensure_parent(path);
  if (shape.is_image()) {
    write_png(path, image_grid(x, shape.channels, shape.height, shape.width));
  } else if (shape.dim == 2) {
    write_png(path, scatter_image(x, Bounds{}));
  }
}

int run_sample(const SampleArgs& a) {
  TrainState state = load_checkpoint(a.checkpoint, /*attach_data=*/false);
  SampleRequest r;
  r.n = a.n;
  r.refine = a.refine;
  r.refine_step_size = a.refine_step;
  r.use_ema = !a.raw;
  r.zero_latent = state.config.ablation.no_latent;
  r.seed = resolve_seed(a.seed, state.config.seed);
  r.validate();
  SampleStats stats;
  const MatrixD x = sample(*state.triple, state.schedule, r, &stats);

  const std::string stem = stem_path(a.out);
  ensure_parent(stem + ".npy");
  if (state.shape.is_image()) {
    write_npy(stem + ".npy", x,
              {static_cast<std::size_t>(x.rows()), static_cast<std::size_t>(state.shape.channels),
               static_cast<std::size_t>(state.shape.height),
               static_cast<std::size_t>(state.shape.width)});
  } else {
    write_npy(stem + ".npy", x);
  }
  write_sample_png(stem + ".png", x, state.shape);
  std::cout << "wrote " << x.rows() << " samples to " << stem << ".npy (NFE "
            << stats.generator_evaluations << ", energy gradients "
            << stats.energy_gradient_evaluations << ")\n";
  return kOk;
}

// ---- eval ------------------------------------------------------------------

struct EvalArgs {
  std::string checkpoint;
  std::vector<std::string> tasks{"density", "ood", "modes", "histograms"};
  std::vector<double> bounds{-6.0, 6.0};
  int res = 200;
  std::vector<double> noise_stds{0.01, 0.1, 0.5};
  long n = 10000;
  double radius = 0.0;
  int bins = 50;
  bool raw = false;
  std::optional<std::uint64_t> seed;
  std::string out_dir = "eval";
};

Bounds parse_bounds(const std::vector<double>& v) {
  Bounds b;
  if (v.size() == 2) {
    b = {v[0], v[1], v[0], v[1]};
  } else if (v.size() == 4) {
    b = {v[0], v[1], v[2], v[3]};
  } else {
    throw ConfigError("--bounds takes 2 (lo hi) or 4 (xlo xhi ylo yhi) numbers");
  }
  if (!(b.x_max > b.x_min) || !(b.y_max > b.y_min)) throw ConfigError("--bounds must have lo < hi");
  return b;
}

// Held-out in-distribution data for the OOD and histogram tasks.
MatrixD held_out(const TrainState& state, long n, std::uint64_t seed) {
  const auto& c = state.config;
  if (is_toy(c.dataset)) {
    Rng rng(seed ^ 0x5DEECE66DULL);
    return toy_draw(c.dataset, n, c.toy, rng);
  }
  DatasetSpec spec;
  spec.name = c.dataset;
  spec.path = c.data_path;
  const ImageArray images = load_images(spec);
  if (images.channels != state.shape.channels || images.height != state.shape.height ||
      images.width != state.shape.width)
    throw ConfigError("dataset at " + c.data_path + " does not match the checkpoint's image shape");
  const long m = std::min<long>(n, images.data.rows());
  return images.data.topRows(m);
}

void write_histogram(const std::string& path, const HistogramSet& h) {
  json j;
  j["edges"] = h.edges;
  for (const auto& [name, c] : h.counts) j["counts"][name] = c;
  write_text(path + ".json", j.dump(2) + "\n");
  write_png(path + ".png", histogram_image(h));
}

int run_eval(const EvalArgs& a) {
  static const std::vector<std::string> known{"density", "ood", "modes", "histograms"};
  for (const auto& t : a.tasks)
    if (std::find(known.begin(), known.end(), t) == known.end())
      throw ConfigError("unknown eval task '" + t + "' (expected density, ood, modes, histograms)");
  const Bounds bounds = parse_bounds(a.bounds);
  if (a.res < 2) throw ConfigError("--res must be >= 2");
  if (a.n < 1) throw ConfigError("--n must be >= 1");
  for (double s : a.noise_stds)
    if (!(s > 0.0)) throw ConfigError("--noise-stds must be positive");

  TrainState state = load_checkpoint(a.checkpoint, /*attach_data=*/false);
  const auto& c = state.config;
  const bool point_model = !state.shape.is_image() && state.shape.dim == 2;
  auto has = [&](const char* t) { return std::find(a.tasks.begin(), a.tasks.end(), t) != a.tasks.end(); };
  if (has("density") && !point_model)
    throw ConfigError("task 'density' needs a 2D point model; this checkpoint holds " +
                      (state.shape.is_image() ? std::string("images") : std::to_string(state.shape.dim) + "D data"));
  if (has("modes") && c.dataset != DatasetName::gaussians25)
    throw ConfigError("task 'modes' is defined for gaussians25 only (checkpoint dataset: " +
                      to_string(c.dataset) + ")");

  const std::uint64_t seed = resolve_seed(a.seed, c.seed);
  std::error_code ec;
  fs::create_directories(a.out_dir, ec);
  if (ec) throw IoError("cannot create " + a.out_dir + ": " + ec.message());
  const fs::path out(a.out_dir);

  json report;
  report["checkpoint"] = a.checkpoint;
  report["iteration"] = state.iteration;
  report["dataset"] = to_string(c.dataset);
  report["seed"] = seed;
  auto& energy = state.triple->energy;

  if (has("density")) {
    const DensityGrid g = density_grid(energy, bounds, a.res);
    write_npy((out / "density.npy").string(), g.values);
    write_png((out / "density.png").string(), heatmap_image(g));
    json d{{"resolution", a.res},
           {"bounds", {bounds.x_min, bounds.x_max, bounds.y_min, bounds.y_max}},
           {"file", "density.npy"}};
    if (c.dataset == DatasetName::gaussians25) {
      const DensityGrid truth = mixture_grid(bounds, a.res, c.toy);
      d["total_variation"] = total_variation(normalized_mass(g.values), normalized_mass(truth.values));
      const auto maxima = grid_local_maxima(g, 25);
      d["argmax_means_within_0.3"] = points_matched(maxima, gaussians25_means(c.toy), 0.3);
    }
    report["density"] = d;
  }

  std::optional<MatrixD> held;
  auto held_data = [&]() -> const MatrixD& {
    if (!held) held = held_out(state, a.n, seed);
    return *held;
  };

  if (has("ood")) {
    Rng rng(seed ^ 0xA0761D6478BD642FULL);
    const Eigen::VectorXd e_in = energy_scores(energy, held_data());
    const std::vector<double> in(e_in.data(), e_in.data() + e_in.size());
    json o;
    o["mean_energy_in"] = e_in.mean();
    for (double s : a.noise_stds) {
      const Eigen::VectorXd e = energy_scores(energy, add_noise(held_data(), s, rng));
      const std::vector<double> noisy(e.data(), e.data() + e.size());
      std::ostringstream key;
      key << s;
      o["noise"][key.str()] = {{"mean_energy", e.mean()}, {"auroc", ood_auroc(in, noisy)}};
    }
    report["ood"] = o;
  }

  if (has("modes")) {
    SampleRequest r;
    r.n = a.n;
    r.use_ema = !a.raw;
    r.zero_latent = c.ablation.no_latent;
    r.seed = seed;
    const MatrixD x = sample(*state.triple, state.schedule, r);
    const double radius = a.radius > 0.0 ? a.radius : 3.0 * c.toy.component_std;
    const ModeCoverage m = mode_coverage(x, gaussians25_means(c.toy), radius);
    report["modes"] = {{"count", m.count},  {"kl", m.kl},           {"assigned", m.assigned},
                       {"samples", x.rows()}, {"radius", radius}, {"per_mode", m.counts}};
    write_npy((out / "mode_samples.npy").string(), x);
    write_png((out / "mode_samples.png").string(), scatter_image(x, bounds));
  }

  if (has("histograms")) {
    Rng rng(seed ^ 0xE7037ED1A0B428DBULL);
    std::map<std::string, MatrixD> sets;
    sets["real"] = held_data();
    for (double s : a.noise_stds) {
      std::ostringstream key;
      key << "noise_" << s;
      sets[key.str()] = add_noise(held_data(), s, rng);
    }
    sets["fake"] = one_step_fakes(*state.triple, state.schedule, held_data(), rng, !a.raw,
                                  c.ablation.no_latent);
    const HistogramSet h = energy_histogram(energy_scorer(energy), sets, a.bins);
    write_histogram((out / "histograms").string(), h);
    report["histograms"] = {{"bins", a.bins}, {"file", "histograms.json"}};
  }

  write_text((out / "report.json").string(), report.dump(2) + "\n");
  std::cout << report.dump(2) << "\n";
  return kOk;
}

template <typename F>
int guarded(F&& body) {
  try {
    return body();
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const DivergenceError& e) {
    std::cerr << "diverged: " << e.what() << "\n";
    return kDiverged;
  } catch (const IoError& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return kIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kIo;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Denoising diffusion adversarial energy-based models"};
  app.require_subcommand(1);

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "Train a model and write checkpoint + metrics log");
  train->add_option("--preset", ta.preset, "toy, mnist, cifar10-reference, celeba-reference, lsun-reference");
  train->add_option("--config", ta.config_path, "JSON run config")->check(CLI::ExistingFile);
  train->add_option("--dataset", ta.dataset, "gaussians25, pinwheel, swissroll, mnist, image_folder");
  train->add_option("--data", ta.data_path, "IDX file (mnist) or image directory");
  train->add_option("--iters", ta.iters, "Training iterations");
  train->add_option("--epochs", ta.epochs, "Epochs over image data (replaces --iters)");
  train->add_option("--seed", ta.seed, std::string("Run seed (overrides ") + kSeedEnv + ")");
  train->add_option("--ablation", ta.ablation, "full, no_latent, kl_only, drop_qpsi");
  train->add_option("--set", ta.overrides, "key=value config override (repeatable)");
  train->add_option("--out", ta.out_dir, "Run directory")->capture_default_str();
  train->add_option("--log-every", ta.log_every, "Progress line interval (0: silent)")->capture_default_str();
  train->add_option("--checkpoint-every", ta.checkpoint_every, "Periodic checkpoint interval");
  train->add_flag("--resume", ta.resume, "Continue from the run directory's checkpoint");

  SampleArgs sa;
  auto* samp = app.add_subcommand("sample", "Draw samples from a checkpoint");
  samp->add_option("checkpoint", sa.checkpoint)->required();
  samp->add_option("--n", sa.n, "Number of samples")->capture_default_str();
  samp->add_flag("--refine", sa.refine, "One energy-gradient step on the final sample");
  samp->add_option("--refine-step", sa.refine_step, "Refine step size (default 1 - alpha_bar_1)");
  samp->add_flag("--raw", sa.raw, "Use the trained generator instead of its EMA shadow");
  samp->add_option("--seed", sa.seed, "Sampling seed");
  samp->add_option("--out", sa.out, "Output .npy (a .png is written alongside)")->capture_default_str();

  EvalArgs ea;
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint");
  eval->add_option("checkpoint", ea.checkpoint)->required();
  eval->add_option("--task", ea.tasks, "density, ood, modes, histograms")->capture_default_str();
  eval->add_option("--bounds", ea.bounds, "lo hi, or xlo xhi ylo yhi")->capture_default_str();
  eval->add_option("--res", ea.res, "Density grid resolution")->capture_default_str();
  eval->add_option("--noise-stds", ea.noise_stds, "Noise levels for ood/histograms")->capture_default_str();
  eval->add_option("--n", ea.n, "Samples / held-out points")->capture_default_str();
  eval->add_option("--radius", ea.radius, "Mode radius (default 3 component stds)");
  eval->add_option("--bins", ea.bins, "Histogram bins")->capture_default_str();
  eval->add_flag("--raw", ea.raw, "Use the trained generator instead of its EMA shadow");
  eval->add_option("--seed", ea.seed, "Evaluation seed");
  eval->add_option("--out", ea.out_dir, "Report directory")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  if (*train) return guarded([&] { return run_train(ta); });
  if (*samp) return guarded([&] { return run_sample(sa); });
  return guarded([&] { return run_eval(ea); });
}
