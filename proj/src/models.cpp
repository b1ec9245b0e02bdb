#include "ddaebm/models.hpp"

#include <stdexcept>

namespace ddaebm {

template <typename T>
TwoBranchNet<T>::TwoBranchNet(int in_dim, int out_dim, const ArchConfig& arch, bool batch_norm,
                              Rng& rng, double head_gain)
    : in_dim_(in_dim), out_dim_(out_dim), time_dim_(arch.time_embed_dim), batch_norm_(batch_norm) {
  if (arch.trunk.empty()) throw std::invalid_argument("trunk needs at least one hidden layer");
  in_fc1_ = nn::Linear<T>(in_dim, arch.input_hidden, rng);
  in_fc2_ = nn::Linear<T>(arch.input_hidden, arch.input_out, rng);
  if (batch_norm) in_bn_ = nn::BatchNorm<T>(arch.input_hidden);
  t_fc1_ = nn::Linear<T>(arch.time_embed_dim, arch.time_hidden, rng);
  t_fc2_ = nn::Linear<T>(arch.time_hidden, arch.time_out, rng);
  int width = arch.input_out + arch.time_out;
  for (int h : arch.trunk) {
    trunk_fc_.emplace_back(width, h, rng);
    trunk_act_.emplace_back();
    if (batch_norm) trunk_bn_.emplace_back(h);
    width = h;
  }
  head_ = nn::Linear<T>(width, out_dim, rng, head_gain);
}

template <typename T>
Var<T> TwoBranchNet<T>::forward(const Var<T>& x, std::span<const int> t, const nn::Pass& pass) {
  if (static_cast<Eigen::Index>(t.size()) != x.rows())
    throw std::invalid_argument("one time index per row required");
  auto h = in_act_.forward(in_fc1_.forward(x, pass), pass);
  if (batch_norm_) h = in_bn_.forward(h, pass);
  h = in_fc2_.forward(h, pass);

  auto emb = Var<T>::constant(nn::sinusoidal_embedding<T>(t, time_dim_));
  auto th = t_fc2_.forward(t_act_.forward(t_fc1_.forward(emb, pass), pass), pass);

  auto y = ad::concat_cols(h, th);
  for (std::size_t i = 0; i < trunk_fc_.size(); ++i) {
    y = trunk_act_[i].forward(trunk_fc_[i].forward(y, pass), pass);
    if (batch_norm_) y = trunk_bn_[i].forward(y, pass);
  }
  return head_.forward(y, pass);
}

template <typename T>
void TwoBranchNet<T>::collect(const std::string& prefix, nn::Registry<T>& reg) {
  in_fc1_.collect(prefix + ".in.fc1", reg);
  in_act_.collect(prefix + ".in.act", reg);
  if (batch_norm_) in_bn_.collect(prefix + ".in.bn", reg);
  in_fc2_.collect(prefix + ".in.fc2", reg);
  t_fc1_.collect(prefix + ".time.fc1", reg);
  t_act_.collect(prefix + ".time.act", reg);
  t_fc2_.collect(prefix + ".time.fc2", reg);
  for (std::size_t i = 0; i < trunk_fc_.size(); ++i) {
    const std::string p = prefix + ".trunk" + std::to_string(i);
    trunk_fc_[i].collect(p + ".fc", reg);
    trunk_act_[i].collect(p + ".act", reg);
    if (batch_norm_) trunk_bn_[i].collect(p + ".bn", reg);
  }
  head_.collect(prefix + ".head", reg);
}

template <typename T>
EnergyModel<T>::EnergyModel(int data_dim, const ArchConfig& arch, Rng& rng)
    : net_(data_dim, data_dim, arch, /*batch_norm=*/false, rng) {}

template <typename T>
Var<T> EnergyModel<T>::backbone(const Var<T>& x, std::span<const int> t, const nn::Pass& pass) {
  if (x.cols() != net_.in_dim())
    throw std::invalid_argument("energy expects points of dimension " +
                                std::to_string(net_.in_dim()));
  return net_.forward(x, t, pass);
}

template <typename T>
Var<T> EnergyModel<T>::energy(const Var<T>& x, std::span<const int> t, const nn::Pass& pass) {
  ++evaluations_;
  auto resid = x - backbone(x, t, pass);
  return ad::scale(ad::row_sq_norm(resid), T(-0.5));
}

template <typename T>
nn::Registry<T> EnergyModel<T>::registry() {
  nn::Registry<T> reg;
  net_.collect("energy", reg);
  return reg;
}

template <typename T>
GeneratorModel<T>::GeneratorModel(int data_dim, int latent_dim, const ArchConfig& arch, Rng& rng)
    : data_dim_(data_dim),
      latent_dim_(latent_dim),
      net_(data_dim + latent_dim, data_dim, arch, /*batch_norm=*/true, rng, /*head_gain=*/0.1) {}

template <typename T>
Var<T> GeneratorModel<T>::generate_x0(const Var<T>& x_t, const Var<T>& z, std::span<const int> t,
                                      const nn::Pass& pass) {
  if (x_t.cols() != data_dim_)
    throw std::invalid_argument("generator expects points of dimension " +
                                std::to_string(data_dim_));
  if (z.cols() != latent_dim_ || z.rows() != x_t.rows())
    throw std::invalid_argument("generator expects latents of dimension " +
                                std::to_string(latent_dim_));
  ++evaluations_;
  return net_.forward(ad::concat_cols(x_t, z), t, pass);
}

template <typename T>
nn::Registry<T> GeneratorModel<T>::registry() {
  nn::Registry<T> reg;
  net_.collect("generator", reg);
  return reg;
}

template <typename T>
EncoderModel<T>::EncoderModel(int data_dim, int latent_dim, const ArchConfig& arch, Rng& rng)
    : data_dim_(data_dim),
      latent_dim_(latent_dim),
      net_(2 * data_dim, arch.encoder_features, arch, /*batch_norm=*/true, rng),
      mean_head_(arch.encoder_features, latent_dim, rng),
      logvar_head_(arch.encoder_features, latent_dim, rng) {}

template <typename T>
GaussianParams<T> EncoderModel<T>::encode(const Var<T>& x_prev, const Var<T>& x_t,
                                          std::span<const int> t, const nn::Pass& pass) {
  if (x_prev.cols() != data_dim_ || x_t.cols() != data_dim_ || x_prev.rows() != x_t.rows())
    throw std::invalid_argument("encoder expects two aligned batches of dimension " +
                                std::to_string(data_dim_));
  auto h = net_.forward(ad::concat_cols(x_prev, x_t), t, pass);
  GaussianParams<T> out;
  out.mean = mean_head_.forward(h, pass);
  out.logvar = ad::clamp(logvar_head_.forward(h, pass), static_cast<T>(kLogvarMin),
                         static_cast<T>(kLogvarMax));
  return out;
}

template <typename T>
nn::Registry<T> EncoderModel<T>::registry() {
  nn::Registry<T> reg;
  net_.collect("encoder", reg);
  mean_head_.collect("encoder.mean", reg);
  logvar_head_.collect("encoder.logvar", reg);
  return reg;
}

template <typename T>
void copy_values(nn::Registry<T> dst, nn::Registry<T> src) {
  if (dst.params.size() != src.params.size() || dst.buffers.size() != src.buffers.size())
    throw std::invalid_argument("copy_values: registries differ in layout");
  for (std::size_t i = 0; i < dst.params.size(); ++i) {
    auto& d = dst.params[i].var->mutable_value();
    const auto& s = src.params[i].var->value();
    if (d.rows() != s.rows() || d.cols() != s.cols())
      throw std::invalid_argument("copy_values: shape mismatch at " + dst.params[i].name);
    d = s;
  }
  for (std::size_t i = 0; i < dst.buffers.size(); ++i) *dst.buffers[i].value = *src.buffers[i].value;
}

template <typename T>
ModelTriple<T> make_model_triple(int data_dim, int latent_dim, const ArchConfig& arch,
                                 bool track_energy_ema, Rng& rng) {
  if (data_dim < 1 || latent_dim < 1)
    throw std::invalid_argument("data and latent dimensions must be positive");
  ModelTriple<T> m;
  m.data_dim = data_dim;
  m.latent_dim = latent_dim;
  m.arch = arch;
  m.energy = EnergyModel<T>(data_dim, arch, rng);
  m.generator = GeneratorModel<T>(data_dim, latent_dim, arch, rng);
  m.encoder = EncoderModel<T>(data_dim, latent_dim, arch, rng);
  Rng scratch(0);
  m.ema_generator = GeneratorModel<T>(data_dim, latent_dim, arch, scratch);
  copy_values(m.ema_generator.registry(), m.generator.registry());
  if (track_energy_ema) {
    m.ema_energy = EnergyModel<T>(data_dim, arch, scratch);
    copy_values(m.ema_energy->registry(), m.energy.registry());
  }
  return m;
}

namespace {

template <typename T>
void blend(nn::Registry<T> shadow, nn::Registry<T> current, double decay) {
  const T d = static_cast<T>(decay);
  const T c = static_cast<T>(1.0 - decay);
  for (std::size_t i = 0; i < shadow.params.size(); ++i) {
    auto& s = shadow.params[i].var->mutable_value();
    s = d * s + c * current.params[i].var->value();
  }
  for (std::size_t i = 0; i < shadow.buffers.size(); ++i) {
    auto& s = *shadow.buffers[i].value;
    s = d * s + c * *current.buffers[i].value;
  }
}

}  // namespace

template <typename T>
void ema_update(ModelTriple<T>& triple, double decay) {
  if (!(decay >= 0.0 && decay < 1.0)) throw std::invalid_argument("EMA decay must lie in [0, 1)");
  blend(triple.ema_generator.registry(), triple.generator.registry(), decay);
  if (triple.ema_energy) blend(triple.ema_energy->registry(), triple.energy.registry(), decay);
}

#define DDAEBM_INSTANTIATE(T)                                                              \
  template class TwoBranchNet<T>;                                                          \
  template class EnergyModel<T>;                                                           \
  template class GeneratorModel<T>;                                                        \
  template class EncoderModel<T>;                                                          \
  template ModelTriple<T> make_model_triple<T>(int, int, const ArchConfig&, bool, Rng&);   \
  template void copy_values<T>(nn::Registry<T>, nn::Registry<T>);                          \
  template void ema_update<T>(ModelTriple<T>&, double);

DDAEBM_INSTANTIATE(float)
DDAEBM_INSTANTIATE(double)

#undef DDAEBM_INSTANTIATE

}  // namespace ddaebm
