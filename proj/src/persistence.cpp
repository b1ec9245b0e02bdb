#include "ddaebm/persistence.hpp"

#include "ddaebm/errors.hpp"

#include <fcntl.h>
#include <signal.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cstring>
#include <filesystem>
#include <functional>
#include <map>
#include <numeric>
#include <regex>
#include <sstream>

namespace ddaebm {

using nlohmann::json;

// ---- NPY --------------------------------------------------------------------

std::size_t NpyArray::size() const {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

MatrixD NpyArray::to_matrix() const {
  if (shape.empty()) return MatrixD::Constant(1, 1, values.at(0));
  const auto rows = static_cast<Eigen::Index>(shape[0]);
  const auto cols = rows == 0 ? Eigen::Index{0} : static_cast<Eigen::Index>(size() / shape[0]);
  MatrixD m(rows, shape.size() == 1 ? 1 : cols);
  std::copy(values.begin(), values.end(), m.data());
  return m;
}

void write_npy(const std::string& path, const MatrixD& m, std::vector<std::size_t> shape) {
  if (shape.empty()) shape = {static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())};
  const std::size_t count =
      std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
  if (count != static_cast<std::size_t>(m.size()))
    throw std::invalid_argument("write_npy: shape does not match element count");

  std::string dict = "{'descr': '<f8', 'fortran_order': False, 'shape': (";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    dict += std::to_string(shape[i]);
    if (shape.size() == 1 || i + 1 < shape.size()) dict += ",";
    if (i + 1 < shape.size()) dict += " ";
  }
  dict += "), }";
  // magic(6) + version(2) + len(2) + dict + '\n' must be a multiple of 64
  const std::size_t unpadded = 10 + dict.size() + 1;
  dict.append((64 - unpadded % 64) % 64, ' ');
  dict += '\n';

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path + "'");
  out.write("\x93NUMPY\x01\x00", 8);
  const auto len = static_cast<std::uint16_t>(dict.size());
  const char len_bytes[2] = {static_cast<char>(len & 0xff), static_cast<char>(len >> 8)};
  out.write(len_bytes, 2);
  out.write(dict.data(), static_cast<std::streamsize>(dict.size()));
  // RowMajor storage is C order; the payload is host little-endian.
  out.write(reinterpret_cast<const char*>(m.data()),
            static_cast<std::streamsize>(count * sizeof(double)));
  if (!out) throw IoError("short write to '" + path + "'");
}

NpyArray read_npy(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, "\x93NUMPY", 6) != 0) throw IoError("'" + path + "' is not NPY");
  std::size_t header_len = 0;
  if (magic[6] == 1) {
    unsigned char b[2];
    in.read(reinterpret_cast<char*>(b), 2);
    header_len = b[0] | (b[1] << 8);
  } else if (magic[6] == 2 || magic[6] == 3) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    header_len = b[0] | (b[1] << 8) | (b[2] << 16) | (std::size_t(b[3]) << 24);
  } else {
    throw IoError("unsupported NPY version in '" + path + "'");
  }
  std::string header(header_len, '\0');
  in.read(header.data(), static_cast<std::streamsize>(header_len));
  if (!in) throw IoError("truncated NPY header in '" + path + "'");

  std::smatch match;
  NpyArray arr;
  if (!std::regex_search(header, match, std::regex(R"('descr':\s*'([^']+)')")))
    throw IoError("NPY header without descr in '" + path + "'");
  arr.dtype = match[1];
  if (arr.dtype != "<f8" && arr.dtype != "<f4")
    throw IoError("unsupported NPY dtype " + arr.dtype + " in '" + path + "'");
  if (std::regex_search(header, std::regex(R"('fortran_order':\s*True)")))
    throw IoError("Fortran-ordered NPY not supported: '" + path + "'");
  if (!std::regex_search(header, match, std::regex(R"('shape':\s*\(([^)]*)\))")))
    throw IoError("NPY header without shape in '" + path + "'");
  const std::string dims = match[1];
  const std::regex digits(R"(\d+)");
  for (std::sregex_iterator it(dims.begin(), dims.end(), digits), end; it != end; ++it)
    arr.shape.push_back(std::stoull(it->str()));

  const std::size_t n = arr.size();
  arr.values.resize(n);
  if (arr.dtype == "<f8") {
    in.read(reinterpret_cast<char*>(arr.values.data()), static_cast<std::streamsize>(n * 8));
  } else {
    std::vector<float> buf(n);
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(n * 4));
    std::copy(buf.begin(), buf.end(), arr.values.begin());
  }
  if (!in) throw IoError("truncated NPY payload in '" + path + "'");
  return arr;
}

// ---- config -----------------------------------------------------------------

namespace {

template <typename V>
void read_value(const std::string& key, const json& j, V& out) {
  auto bad = [&](const char* want) {
    throw ConfigError("config key '" + key + "' expects " + want + ", got " + j.dump());
  };
  if constexpr (std::is_same_v<V, bool>) {
    if (!j.is_boolean()) bad("a boolean");
    out = j.get<bool>();
  } else if constexpr (std::is_integral_v<V>) {
    if (!j.is_number_integer()) bad("an integer");
    if constexpr (std::is_unsigned_v<V>) {
      if (j.is_number_unsigned() || j.get<long long>() >= 0) {
        out = j.get<V>();
        return;
      }
      bad("a nonnegative integer");
    }
    out = j.get<V>();
  } else if constexpr (std::is_floating_point_v<V>) {
    if (!j.is_number()) bad("a number");
    out = j.get<V>();
  } else if constexpr (std::is_same_v<V, std::string>) {
    if (!j.is_string()) bad("a string");
    out = j.get<std::string>();
  } else if constexpr (std::is_same_v<V, std::vector<int>>) {
    if (!j.is_array()) bad("an array of integers");
    out.clear();
    for (const auto& e : j) {
      if (!e.is_number_integer()) bad("an array of integers");
      out.push_back(e.get<int>());
    }
  }
}

struct Field {
  std::string key;
  std::function<json(const TrainConfig&)> get;
  std::function<void(TrainConfig&, const json&)> set;
};

#define DDAEBM_FIELD(name, member)                                                        \
  Field {                                                                                 \
    name, [](const TrainConfig& c) { return json(c.member); },                            \
        [](TrainConfig& c, const json& j) { read_value(name, j, c.member); }              \
  }

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      DDAEBM_FIELD("T", T),
      DDAEBM_FIELD("beta_min", beta_min),
      DDAEBM_FIELD("beta_max", beta_max),
      Field{"time_map", [](const TrainConfig& c) { return json(to_string(c.time_map)); },
            [](TrainConfig& c, const json& j) {
              std::string v;
              read_value("time_map", j, v);
              try {
                c.time_map = time_map_from_string(v);
              } catch (const std::invalid_argument& e) {
                throw ConfigError(std::string("config key 'time_map': ") + e.what());
              }
            }},
      DDAEBM_FIELD("w", weights.w),
      DDAEBM_FIELD("w_mid", weights.w_mid),
      DDAEBM_FIELD("gamma", weights.gamma),
      DDAEBM_FIELD("fake_term_weight", weights.fake_term_weight),
      DDAEBM_FIELD("l2_multiplier", weights.l2_multiplier),
      DDAEBM_FIELD("no_latent", ablation.no_latent),
      DDAEBM_FIELD("kl_only", ablation.kl_only),
      DDAEBM_FIELD("drop_qpsi", ablation.drop_qpsi),
      DDAEBM_FIELD("latent_dim", latent_dim),
      DDAEBM_FIELD("time_embed_dim", arch.time_embed_dim),
      DDAEBM_FIELD("input_hidden", arch.input_hidden),
      DDAEBM_FIELD("input_out", arch.input_out),
      DDAEBM_FIELD("time_hidden", arch.time_hidden),
      DDAEBM_FIELD("time_out", arch.time_out),
      DDAEBM_FIELD("trunk", arch.trunk),
      DDAEBM_FIELD("encoder_features", arch.encoder_features),
      DDAEBM_FIELD("lr_energy", lr_energy),
      DDAEBM_FIELD("lr_generator", lr_generator),
      DDAEBM_FIELD("lr_encoder", lr_encoder),
      DDAEBM_FIELD("adam_beta1", adam_beta1),
      DDAEBM_FIELD("adam_beta2", adam_beta2),
      DDAEBM_FIELD("adam_eps", adam_eps),
      DDAEBM_FIELD("grad_clip", grad_clip),
      DDAEBM_FIELD("ema_decay", ema_decay),
      DDAEBM_FIELD("ema_energy", ema_energy),
      DDAEBM_FIELD("batch_size", batch_size),
      DDAEBM_FIELD("total_iterations", total_iterations),
      DDAEBM_FIELD("epochs", epochs),
      DDAEBM_FIELD("seed", seed),
      Field{"dataset", [](const TrainConfig& c) { return json(to_string(c.dataset)); },
            [](TrainConfig& c, const json& j) {
              std::string v;
              read_value("dataset", j, v);
              try {
                c.dataset = dataset_from_string(v);
              } catch (const std::invalid_argument& e) {
                throw ConfigError(std::string("config key 'dataset': ") + e.what());
              }
            }},
      DDAEBM_FIELD("data_path", data_path),
      DDAEBM_FIELD("toy_grid_spacing", toy.grid_spacing),
      DDAEBM_FIELD("toy_component_std", toy.component_std),
      DDAEBM_FIELD("toy_pinwheel_blades", toy.pinwheel_blades),
      DDAEBM_FIELD("toy_pinwheel_radial_std", toy.pinwheel_radial_std),
      DDAEBM_FIELD("toy_pinwheel_tangential_std", toy.pinwheel_tangential_std),
      DDAEBM_FIELD("toy_pinwheel_rate", toy.pinwheel_rate),
      DDAEBM_FIELD("toy_pinwheel_scale", toy.pinwheel_scale),
      DDAEBM_FIELD("toy_swiss_noise", toy.swiss_noise),
      DDAEBM_FIELD("toy_swiss_scale", toy.swiss_scale),
      DDAEBM_FIELD("checkpoint_path", checkpoint_path),
      DDAEBM_FIELD("metrics_path", metrics_path),
      DDAEBM_FIELD("checkpoint_every", checkpoint_every),
      DDAEBM_FIELD("log_every", log_every),
      DDAEBM_FIELD("divergence_gap", divergence_gap),
  };
  return table;
}

#undef DDAEBM_FIELD

const Field& find_field(const std::string& key) {
  for (const auto& f : fields())
    if (f.key == key) return f;
  throw ConfigError("unknown config key '" + key + "'");
}

}  // namespace

const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> names = {"toy", "mnist", "cifar10-reference",
                                                 "celeba-reference", "lsun-reference"};
  return names;
}

bool is_reference_preset(const std::string& name) {
  return name.size() > 10 && name.substr(name.size() - 10) == "-reference";
}

TrainConfig preset_config(const std::string& name) {
  TrainConfig c;
  c.preset = name;
  c.T = 4;
  c.beta_min = 0.1;
  c.adam_beta1 = 0.0;
  c.adam_beta2 = 0.9;
  if (name == "toy") {
    c.beta_max = 20.0;
    c.lr_energy = c.lr_generator = c.lr_encoder = 1e-4;
    c.ema_decay = 0.999;
    c.batch_size = 200;
    c.total_iterations = 180000;
    c.latent_dim = 2;
    c.dataset = DatasetName::gaussians25;
    return c;
  }
  c.latent_dim = 100;
  c.dataset = DatasetName::image_folder;
  if (name == "mnist") {
    c.beta_max = 10.0;
    c.lr_energy = c.lr_generator = c.lr_encoder = 1e-4;
    c.ema_decay = 0.0;
    c.batch_size = 128;
    c.epochs = 400;
    c.latent_dim = 50;
    c.dataset = DatasetName::mnist;
    c.arch.trunk = {1000, 1000};
  } else if (name == "cifar10-reference") {
    c.beta_max = 20.0;
    c.lr_energy = c.lr_generator = c.lr_encoder = 1e-4;
    c.ema_decay = 0.9999;
    c.batch_size = 64;
    c.epochs = 1200;
  } else if (name == "celeba-reference") {
    c.beta_max = 20.0;
    c.lr_energy = c.lr_generator = c.lr_encoder = 5e-5;
    c.ema_decay = 0.999;
    c.batch_size = 32;
    c.epochs = 400;
  } else if (name == "lsun-reference") {
    c.beta_max = 20.0;
    c.lr_energy = c.lr_generator = c.lr_encoder = 5e-5;
    c.weights.w = 0.6;
    c.weights.w_mid = 0.2;
    c.ema_decay = 0.999;
    c.batch_size = 12;
    c.epochs = 400;
    c.time_map = TimeMap::truncated;
  } else {
    throw ConfigError("unknown preset '" + name + "'");
  }
  return c;
}

json config_to_json(const TrainConfig& config) {
  json j;
  j["preset"] = config.preset;
  for (const auto& f : fields()) j[f.key] = f.get(config);
  return j;
}

TrainConfig config_from_json(const json& doc) {
  if (!doc.is_object()) throw ConfigError("config document must be a JSON object");
  std::string preset = "toy";
  if (doc.contains("preset")) read_value("preset", doc.at("preset"), preset);
  TrainConfig c = preset_config(preset);
  for (const auto& [key, value] : doc.items()) {
    if (key == "preset") continue;
    find_field(key).set(c, value);
  }
  return c;
}

TrainConfig load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config '" + path + "'");
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config '" + path + "' is not valid JSON: " + e.what());
  }
  return config_from_json(doc);
}

void apply_override(TrainConfig& config, const std::string& key, const std::string& value) {
  if (key == "preset") throw ConfigError("'preset' cannot be overridden per key");
  const Field& f = find_field(key);
  json j;
  try {
    j = json::parse(value);
  } catch (const json::parse_error&) {
    j = value;
  }
  f.set(config, j);
}

// ---- checkpoints --------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'D', 'D', 'A', 'E', 'B', 'M', 'C', 'K'};
constexpr std::uint8_t kDtypeF32 = 1;
constexpr std::uint8_t kDtypeF64 = 2;

template <typename V>
void put(std::ostream& out, V v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(V));
}

template <typename V>
V get(std::istream& in, const std::string& path) {
  V v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(V));
  if (!in) throw IoError("truncated checkpoint '" + path + "'");
  return v;
}

using NamedArrays = std::map<std::string, Matrix<Real>>;

void collect_registry(const std::string& prefix, nn::Registry<Real> reg, NamedArrays& out) {
  for (const auto& p : reg.params) out[prefix + "/param/" + p.name] = p.var->value();
  for (const auto& b : reg.buffers) out[prefix + "/buffer/" + b.name] = *b.value;
}

void collect_adam(const std::string& prefix, const Adam<Real>& opt, NamedArrays& out) {
  auto& o = const_cast<Adam<Real>&>(opt);
  for (std::size_t i = 0; i < o.first_moments().size(); ++i) {
    out[prefix + "/m/" + std::to_string(i)] = o.first_moments()[i];
    out[prefix + "/v/" + std::to_string(i)] = o.second_moments()[i];
  }
}

const Matrix<Real>& take(const NamedArrays& arrays, const std::string& name, Eigen::Index rows,
                         Eigen::Index cols, const std::string& path) {
  auto it = arrays.find(name);
  if (it == arrays.end()) throw IoError("checkpoint '" + path + "' lacks array '" + name + "'");
  if (it->second.rows() != rows || it->second.cols() != cols)
    throw IoError("checkpoint '" + path + "': array '" + name + "' has the wrong shape");
  return it->second;
}

void restore_registry(const std::string& prefix, nn::Registry<Real> reg, const NamedArrays& arrays,
                      const std::string& path) {
  for (const auto& p : reg.params) {
    const auto& v = take(arrays, prefix + "/param/" + p.name, p.var->rows(), p.var->cols(), path);
    p.var->mutable_value() = v;
  }
  for (const auto& b : reg.buffers)
    *b.value = take(arrays, prefix + "/buffer/" + b.name, b.value->rows(), b.value->cols(), path);
}

void restore_adam(const std::string& prefix, Adam<Real>& opt, const nn::Registry<Real>& reg,
                  long steps, const NamedArrays& arrays, const std::string& path) {
  opt.set_steps(steps);
  opt.first_moments().clear();
  opt.second_moments().clear();
  if (!arrays.contains(prefix + "/m/0")) return;  // never stepped
  for (std::size_t i = 0; i < reg.params.size(); ++i) {
    const auto r = reg.params[i].var->rows();
    const auto c = reg.params[i].var->cols();
    opt.first_moments().push_back(take(arrays, prefix + "/m/" + std::to_string(i), r, c, path));
    opt.second_moments().push_back(take(arrays, prefix + "/v/" + std::to_string(i), r, c, path));
  }
}

json schedule_json(const Schedule& s) {
  return {{"T", s.T},
          {"beta_min", s.beta_min},
          {"beta_max", s.beta_max},
          {"time_map", to_string(s.time_map)}};
}

}  // namespace

void save_checkpoint(const std::string& path, const TrainState& state) {
  auto& triple = *state.triple;
  json meta;
  meta["config"] = config_to_json(state.config);
  meta["schedule"] = schedule_json(state.schedule);
  meta["iteration"] = state.iteration;
  meta["shape"] = {{"dim", state.shape.dim},
                   {"channels", state.shape.channels},
                   {"height", state.shape.height},
                   {"width", state.shape.width}};
  meta["noise_rng"] = state.noise_rng.serialize();
  meta["data_state"] = state.data ? json(state.data->state()) : json(nullptr);
  meta["adam_steps"] = {{"energy", state.energy_opt.steps()},
                        {"generator", state.generator_opt.steps()},
                        {"encoder", state.encoder_opt.steps()}};
  meta["running"] = {{"count", state.running.count},
                     {"sum_loss_gen", state.running.sum_loss_gen},
                     {"sum_loss_energy", state.running.sum_loss_energy},
                     {"sum_gap", state.running.sum_gap},
                     {"max_abs_gap", state.running.max_abs_gap}};
  meta["ema_energy"] = triple.ema_energy.has_value();

  NamedArrays arrays;
  collect_registry("energy", triple.energy.registry(), arrays);
  collect_registry("generator", triple.generator.registry(), arrays);
  collect_registry("encoder", triple.encoder.registry(), arrays);
  collect_registry("ema_generator", triple.ema_generator.registry(), arrays);
  if (triple.ema_energy) collect_registry("ema_energy", triple.ema_energy->registry(), arrays);
  collect_adam("adam/energy", state.energy_opt, arrays);
  collect_adam("adam/generator", state.generator_opt, arrays);
  collect_adam("adam/encoder", state.encoder_opt, arrays);

  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint '" + tmp + "'");
    out.write(kMagic, 8);
    put<std::uint32_t>(out, kCheckpointVersion);
    const std::string text = meta.dump();
    put<std::uint64_t>(out, text.size());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    put<std::uint64_t>(out, arrays.size());
    for (const auto& [name, m] : arrays) {
      put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
      out.write(name.data(), static_cast<std::streamsize>(name.size()));
      put<std::uint8_t>(out, kDtypeF32);
      put<std::uint64_t>(out, static_cast<std::uint64_t>(m.rows()));
      put<std::uint64_t>(out, static_cast<std::uint64_t>(m.cols()));
      out.write(reinterpret_cast<const char*>(m.data()),
                static_cast<std::streamsize>(m.size() * sizeof(Real)));
    }
    out.flush();
    if (!out) throw IoError("short write to checkpoint '" + tmp + "'");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move checkpoint into '" + path + "': " + ec.message());
}

TrainState load_checkpoint(const std::string& path, bool attach_data) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path + "'");
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kMagic, 8) != 0)
    throw IoError("'" + path + "' is not a checkpoint file");
  const auto version = get<std::uint32_t>(in, path);
  if (version != kCheckpointVersion)
    throw IoError("checkpoint '" + path + "' has format version " + std::to_string(version) +
                  "; this build reads version " + std::to_string(kCheckpointVersion));
  const auto meta_len = get<std::uint64_t>(in, path);
  std::string text(meta_len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(meta_len));
  if (!in) throw IoError("truncated checkpoint '" + path + "'");
  json meta;
  try {
    meta = json::parse(text);
  } catch (const json::parse_error& e) {
    throw IoError("corrupt checkpoint metadata in '" + path + "': " + e.what());
  }

  NamedArrays arrays;
  const auto count = get<std::uint64_t>(in, path);
  for (std::uint64_t k = 0; k < count; ++k) {
    const auto name_len = get<std::uint32_t>(in, path);
    if (name_len > 4096) throw IoError("corrupt checkpoint '" + path + "'");
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    const auto dtype = get<std::uint8_t>(in, path);
    if (dtype != kDtypeF32)
      throw IoError("checkpoint '" + path + "': array '" + name + "' has dtype code " +
                    std::to_string(dtype) + (dtype == kDtypeF64 ? " (f64)" : "") +
                    ", expected f32");
    const auto rows = get<std::uint64_t>(in, path);
    const auto cols = get<std::uint64_t>(in, path);
    if (rows > (1u << 28) || cols > (1u << 28)) throw IoError("corrupt checkpoint '" + path + "'");
    Matrix<Real> m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(Real)));
    if (!in) throw IoError("truncated checkpoint '" + path + "'");
    arrays.emplace(std::move(name), std::move(m));
  }

  try {
    const TrainConfig config = config_from_json(meta.at("config"));
    const auto& sh = meta.at("shape");
    DataShape shape{sh.at("dim").get<int>(), sh.at("channels").get<int>(),
                    sh.at("height").get<int>(), sh.at("width").get<int>()};
    TrainState state;
    if (attach_data) {
      auto data = BatchSource::from_config(config);
      if (data.shape() != shape)
        throw IoError("training data at '" + config.data_path + "' no longer matches checkpoint '" +
                      path + "'");
      state = init_state(config, std::move(data));
      if (!meta.at("data_state").is_null()) state.data->restore(meta.at("data_state").get<std::string>());
    } else {
      state = init_state(config, shape);
    }
    state.config = config;
    if (schedule_json(state.schedule) != meta.at("schedule"))
      throw IoError("checkpoint '" + path + "': schedule constants disagree with its config");

    auto& triple = *state.triple;
    restore_registry("energy", triple.energy.registry(), arrays, path);
    restore_registry("generator", triple.generator.registry(), arrays, path);
    restore_registry("encoder", triple.encoder.registry(), arrays, path);
    restore_registry("ema_generator", triple.ema_generator.registry(), arrays, path);
    if (triple.ema_energy) restore_registry("ema_energy", triple.ema_energy->registry(), arrays, path);
    const auto& steps = meta.at("adam_steps");
    restore_adam("adam/energy", state.energy_opt, triple.energy.registry(),
                 steps.at("energy").get<long>(), arrays, path);
    restore_adam("adam/generator", state.generator_opt, triple.generator.registry(),
                 steps.at("generator").get<long>(), arrays, path);
    restore_adam("adam/encoder", state.encoder_opt, triple.encoder.registry(),
                 steps.at("encoder").get<long>(), arrays, path);

    state.iteration = meta.at("iteration").get<long>();
    state.noise_rng = Rng::deserialize(meta.at("noise_rng").get<std::string>());
    const auto& r = meta.at("running");
    state.running.count = r.at("count").get<long>();
    state.running.sum_loss_gen = r.at("sum_loss_gen").get<double>();
    state.running.sum_loss_energy = r.at("sum_loss_energy").get<double>();
    state.running.sum_gap = r.at("sum_gap").get<double>();
    state.running.max_abs_gap = r.at("max_abs_gap").get<double>();
    return state;
  } catch (const json::exception& e) {
    throw IoError("corrupt checkpoint metadata in '" + path + "': " + e.what());
  } catch (const ConfigError& e) {
    throw IoError("checkpoint '" + path + "' holds an invalid config: " + e.what());
  }
}

// ---- metrics ------------------------------------------------------------------

json metrics_to_json(const StepMetrics& m) {
  return {{"iteration", m.iteration},       {"loss_gen", m.loss_gen},
          {"loss_energy", m.loss_energy},   {"energy_gap", m.energy_gap},
          {"grad_penalty", m.grad_penalty}, {"energy_real", m.energy_real},
          {"energy_fake", m.energy_fake},   {"wallclock", m.wallclock}};
}

StepMetrics metrics_from_json(const json& j) {
  StepMetrics m;
  m.iteration = j.at("iteration").get<long>();
  m.loss_gen = j.at("loss_gen").get<double>();
  m.loss_energy = j.at("loss_energy").get<double>();
  m.energy_gap = j.at("energy_gap").get<double>();
  m.grad_penalty = j.at("grad_penalty").get<double>();
  m.energy_real = j.value("energy_real", 0.0);
  m.energy_fake = j.value("energy_fake", 0.0);
  m.wallclock = j.at("wallclock").get<double>();
  return m;
}

MetricsWriter::MetricsWriter(const std::string& path, bool append)
    : path_(path), out_(path, append ? std::ios::app : std::ios::trunc) {
  if (!out_) throw IoError("cannot open metrics log '" + path + "'");
}

void MetricsWriter::write(const StepMetrics& m) {
  out_ << metrics_to_json(m).dump() << '\n';
  out_.flush();
  if (!out_) throw IoError("cannot write metrics log '" + path_ + "'");
}

void MetricsWriter::flush() { out_.flush(); }

std::vector<StepMetrics> read_metrics(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open metrics log '" + path + "'");
  std::vector<StepMetrics> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      out.push_back(metrics_from_json(json::parse(line)));
    } catch (const json::exception& e) {
      throw IoError("bad metrics record in '" + path + "': " + e.what());
    }
  }
  return out;
}

// ---- lock -----------------------------------------------------------------------

FileLock::FileLock(const std::string& target) : path_(target + ".lock") {
  for (int attempt = 0; attempt < 2; ++attempt) {
    const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd >= 0) {
      const std::string pid = std::to_string(::getpid()) + "\n";
      const auto written = ::write(fd, pid.data(), pid.size());
      ::close(fd);
      if (written != static_cast<ssize_t>(pid.size())) throw IoError("cannot write '" + path_ + "'");
      return;
    }
    if (errno != EEXIST) throw IoError("cannot create lock '" + path_ + "': " + std::strerror(errno));
    std::ifstream in(path_);
    long holder = 0;
    in >> holder;
    const bool alive = holder > 0 && (::kill(static_cast<pid_t>(holder), 0) == 0 || errno == EPERM);
    if (alive)
      throw IoError("'" + target + "' is locked by process " + std::to_string(holder) + " (" +
                    path_ + ")");
    std::filesystem::remove(path_);
  }
  throw IoError("cannot acquire lock '" + path_ + "'");
}

FileLock::~FileLock() {
  std::error_code ec;
  std::filesystem::remove(path_, ec);
}

}  // namespace ddaebm
