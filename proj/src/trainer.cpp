#include "ddaebm/trainer.hpp"

#include "ddaebm/errors.hpp"
#include "ddaebm/persistence.hpp"

#include <chrono>
#include <cmath>
#include <iostream>
#include <sstream>

namespace ddaebm {

void TrainConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError(msg); };
  if (T < 1) fail("T must be >= 1");
  if (!(beta_min > 0.0)) fail("beta_min must be > 0");
  if (!(beta_max > beta_min)) fail("beta_max must exceed beta_min");
  if (time_map == TimeMap::truncated && T > 999) fail("truncated time map requires T <= 999");
  weights.validate();
  ablation.validate();
  if (latent_dim < 1) fail("latent_dim must be >= 1");
  if (!(lr_energy >= 0.0) || !(lr_generator >= 0.0) || !(lr_encoder >= 0.0))
    fail("learning rates must be >= 0");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0)) fail("adam_beta1 must lie in [0, 1)");
  if (!(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) fail("adam_beta2 must lie in [0, 1)");
  if (!(adam_eps > 0.0)) fail("adam_eps must be > 0");
  if (!(grad_clip >= 0.0)) fail("grad_clip must be >= 0");
  if (!(ema_decay >= 0.0 && ema_decay < 1.0)) fail("ema_decay must lie in [0, 1)");
  if (batch_size < 2) fail("batch_size must be >= 2");
  if (total_iterations < 0) fail("total_iterations must be >= 0");
  if (epochs < 0) fail("epochs must be >= 0");
  if (epochs > 0 && is_toy(dataset)) fail("epochs applies to image datasets only");
  if (checkpoint_every < 0) fail("checkpoint_every must be >= 0");
  if (log_every < 0) fail("log_every must be >= 0");
  if (!is_toy(dataset) && data_path.empty()) fail("dataset " + to_string(dataset) + " needs data_path");
  if (arch.trunk.empty()) fail("arch.trunk must list at least one layer");
  if (arch.time_embed_dim < 4 || arch.time_embed_dim % 2 != 0)
    fail("arch.time_embed_dim must be even and >= 4");
  if (!(divergence_gap > 0.0)) fail("divergence_gap must be > 0");
  try {
    (void)make_schedule(T, beta_min, beta_max, time_map);
  } catch (const std::invalid_argument& e) {
    fail(e.what());
  }
}

Schedule TrainConfig::schedule() const { return make_schedule(T, beta_min, beta_max, time_map); }

BatchSource BatchSource::toy(DatasetName name, const ToyParams& params, std::uint64_t seed) {
  if (!is_toy(name)) throw std::invalid_argument(to_string(name) + " is not a toy dataset");
  BatchSource b;
  b.name_ = name;
  b.toy_ = params;
  b.rng_ = Rng(seed);
  return b;
}

BatchSource BatchSource::images(ImageArray images, std::uint64_t seed) {
  BatchSource b;
  b.name_ = DatasetName::image_folder;
  b.stream_ = std::make_shared<ImageStream>(std::move(images), seed);
  return b;
}

BatchSource BatchSource::from_config(const TrainConfig& config) {
  // The data stream is seeded apart from the model and noise streams.
  const std::uint64_t data_seed = config.seed ^ 0xD1B54A32D192ED03ULL;
  if (is_toy(config.dataset)) return toy(config.dataset, config.toy, data_seed);
  DatasetSpec spec;
  spec.name = config.dataset;
  spec.path = config.data_path;
  auto b = images(load_images(spec), data_seed);
  b.name_ = config.dataset;
  return b;
}

MatrixD BatchSource::next(long n) {
  if (stream_) return stream_->next_batch(n);
  return toy_draw(name_, n, toy_, rng_);
}

DataShape BatchSource::shape() const {
  if (!stream_) return {};
  const auto& im = stream_->images();
  return {static_cast<int>(im.data.cols()), im.channels, im.height, im.width};
}

const ImageArray* BatchSource::image_set() const {
  return stream_ ? &stream_->images() : nullptr;
}

std::string BatchSource::state() const {
  if (!stream_) return rng_.serialize();
  return std::to_string(stream_->epoch()) + " " + std::to_string(stream_->cursor());
}

void BatchSource::restore(const std::string& state) {
  if (!stream_) {
    rng_ = Rng::deserialize(state);
    return;
  }
  std::istringstream in(state);
  long epoch = 0;
  long cursor = 0;
  if (!(in >> epoch >> cursor)) throw IoError("bad image stream state '" + state + "'");
  stream_->seek(epoch, cursor);
}

bool StepMetrics::same_values(const StepMetrics& o) const {
  return iteration == o.iteration && loss_gen == o.loss_gen && loss_energy == o.loss_energy &&
         energy_gap == o.energy_gap && grad_penalty == o.grad_penalty &&
         energy_real == o.energy_real && energy_fake == o.energy_fake;
}

void RunningMetrics::add(const StepMetrics& m) {
  ++count;
  sum_loss_gen += m.loss_gen;
  sum_loss_energy += m.loss_energy;
  sum_gap += m.energy_gap;
  max_abs_gap = std::max(max_abs_gap, std::abs(m.energy_gap));
}

std::vector<int> sample_steps(int T, long n, Rng& rng) {
  std::vector<int> t(static_cast<std::size_t>(n));
  for (int& v : t) v = rng.uniform_int(1, T);
  return t;
}

TrainState init_state(const TrainConfig& config, const DataShape& shape) {
  config.validate();
  TrainState s;
  s.config = config;
  s.schedule = config.schedule();
  s.shape = shape;
  Rng init_rng(config.seed);
  s.triple = std::make_unique<ModelTriple<Real>>(make_model_triple<Real>(
      shape.dim, config.latent_dim, config.arch, config.ema_energy, init_rng));
  auto adam = [&](double lr) {
    return Adam<Real>(AdamConfig{lr, config.adam_beta1, config.adam_beta2, config.adam_eps,
                                 config.grad_clip});
  };
  s.energy_opt = adam(config.lr_energy);
  s.generator_opt = adam(config.lr_generator);
  s.encoder_opt = adam(config.lr_encoder);
  s.noise_rng = init_rng.split();
  return s;
}

TrainState init_state(const TrainConfig& config, BatchSource data) {
  TrainState s = init_state(config, data.shape());
  if (config.epochs > 0 && data.image_set()) {
    const long n = data.image_set()->data.rows();
    s.config.total_iterations = config.epochs * ((n + config.batch_size - 1) / config.batch_size);
  }
  s.data = std::move(data);
  return s;
}

TrainState init_state(const TrainConfig& config) {
  config.validate();
  return init_state(config, BatchSource::from_config(config));
}

namespace {

std::vector<Var<Real>> leaves(const nn::Registry<Real>& reg) {
  std::vector<Var<Real>> out;
  out.reserve(reg.params.size());
  for (const auto& p : reg.params) out.push_back(*p.var);
  return out;
}

bool all_finite(const std::vector<Var<Real>>& grads) {
  for (const auto& g : grads)
    if (!g.value().allFinite()) return false;
  return true;
}

}  // namespace

StepMetrics train_step(TrainState& state, const MatrixD& x0) {
  const auto start = std::chrono::steady_clock::now();
  const TrainConfig& cfg = state.config;
  if (x0.rows() < 2) throw std::invalid_argument("train_step: batch size must be >= 2");
  auto& triple = *state.triple;
  const long next_iter = state.iteration + 1;

  // minimization over (phi, psi)
  const auto gen_reg = triple.generator.registry();
  const auto enc_reg = triple.encoder.registry();
  std::vector<Var<Real>> gen_grads;
  std::vector<Var<Real>> enc_grads;
  double loss_gen = 0.0;
  {
    const auto t = sample_steps(cfg.T, x0.rows(), state.noise_rng);
    auto players = make_players(triple, Substep::minimize);
    auto terms = loss_generator(players, state.schedule, cfg.weights, cfg.ablation, x0, t,
                                state.noise_rng);
    loss_gen = terms.diagnostics.loss;
    if (!std::isfinite(loss_gen)) throw DivergenceError("non-finite generator loss", next_iter);
    auto inputs = leaves(gen_reg);
    const auto enc_inputs = leaves(enc_reg);
    inputs.insert(inputs.end(), enc_inputs.begin(), enc_inputs.end());
    auto grads = ad::grad(terms.loss, inputs);
    if (!all_finite(grads)) throw DivergenceError("non-finite generator gradient", next_iter);
    gen_grads.assign(grads.begin(), grads.begin() + static_cast<long>(gen_reg.params.size()));
    enc_grads.assign(grads.begin() + static_cast<long>(gen_reg.params.size()), grads.end());
  }
  state.generator_opt.step(gen_reg, gen_grads);
  state.encoder_opt.step(enc_reg, enc_grads);

  // maximization over theta
  const auto energy_reg = triple.energy.registry();
  EnergyDiagnostics ed;
  {
    const auto t = sample_steps(cfg.T, x0.rows(), state.noise_rng);
    auto players = make_players(triple, Substep::maximize);
    auto terms =
        loss_energy(players, state.schedule, cfg.weights, cfg.ablation, x0, t, state.noise_rng);
    ed = terms.diagnostics;
    if (!std::isfinite(ed.loss)) throw DivergenceError("non-finite energy loss", next_iter);
    if (!(std::abs(ed.energy_gap) <= cfg.divergence_gap))
      throw DivergenceError("energy gap " + std::to_string(ed.energy_gap) + " out of bounds",
                            next_iter);
    auto grads = ad::grad(terms.loss, leaves(energy_reg));
    if (!all_finite(grads)) throw DivergenceError("non-finite energy gradient", next_iter);
    state.energy_opt.step(energy_reg, grads);
  }

  ema_update(triple, cfg.ema_decay);
  state.iteration = next_iter;

  StepMetrics m;
  m.iteration = state.iteration;
  m.loss_gen = loss_gen;
  m.loss_energy = ed.loss;
  m.energy_gap = ed.energy_gap;
  m.grad_penalty = ed.grad_penalty;
  m.energy_real = ed.energy_real;
  m.energy_fake = ed.energy_fake;
  m.wallclock = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  state.running.add(m);
  return m;
}

StepMetrics train_step(TrainState& state) {
  if (!state.data) throw std::logic_error("train_step: state has no data source");
  const MatrixD x0 = state.data->next(state.config.batch_size);
  return train_step(state, x0);
}

void fit(TrainState& state, const StepCallback& on_step) {
  const TrainConfig& cfg = state.config;
  std::optional<FileLock> lock;
  if (!cfg.checkpoint_path.empty()) lock.emplace(cfg.checkpoint_path);
  std::optional<MetricsWriter> metrics;
  if (!cfg.metrics_path.empty()) metrics.emplace(cfg.metrics_path, state.iteration > 0);

  while (state.iteration < cfg.total_iterations) {
    StepMetrics m;
    try {
      m = train_step(state);
    } catch (const DivergenceError&) {
      if (!cfg.checkpoint_path.empty()) save_checkpoint(cfg.checkpoint_path + ".diverged", state);
      throw;
    }
    if (metrics) metrics->write(m);
    if (on_step) on_step(state, m);
    if (cfg.log_every > 0 && state.iteration % cfg.log_every == 0)
      std::cerr << "iter " << m.iteration << " loss_gen " << m.loss_gen << " loss_energy "
                << m.loss_energy << " gap " << m.energy_gap << " gp " << m.grad_penalty << "\n";
    if (!cfg.checkpoint_path.empty() && cfg.checkpoint_every > 0 &&
        state.iteration % cfg.checkpoint_every == 0 && state.iteration < cfg.total_iterations)
      save_checkpoint(cfg.checkpoint_path, state);
  }
  if (metrics) metrics->flush();
  if (!cfg.checkpoint_path.empty()) save_checkpoint(cfg.checkpoint_path, state);
}

TrainState fit(const TrainConfig& config, const StepCallback& on_step) {
  TrainState state = init_state(config);
  fit(state, on_step);
  return state;
}

}  // namespace ddaebm
