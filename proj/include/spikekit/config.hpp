#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "spikekit/errors.hpp"
#include "spikekit/loss.hpp"
#include "spikekit/model.hpp"
#include "spikekit/optim.hpp"

namespace spikekit {

/// Full run configuration. Defaults reproduce the reference recipe: Table-1
/// style architecture, surrogate scale 10, RAdam at 1e-3 with one warmup
/// epoch and 0.85 exponential decay, batch 128, 20 epochs, reg weight 0.1.
struct RunConfig {
  ModelConfig model;
  struct DataConfig {
    std::string root;
    uint32_t seed = 1;
    int batch = 128;
    std::string cache_dir;
    int limit_train = 0;  // 0 = use every train entry
  } data;
  OptimConfig optim;
  LossConfig loss;
  struct TrainConfig {
    int epochs = 20;
    std::string out_dir = "runs/default";
    int log_every = 1;
  } train;
};

namespace detail {

inline std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  size_t b = s.find_last_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  return s.substr(a, b - a + 1);
}

inline bool parse_bool(const std::string& v, const std::string& key) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("bad boolean '" + v + "' for key '" + key + "'");
}

inline float parse_float(const std::string& v, const std::string& key) {
  try {
    size_t end = 0;
    const float f = std::stof(v, &end);
    if (end != v.size()) throw std::invalid_argument(v);
    return f;
  } catch (const std::exception&) {
    throw ConfigError("bad number '" + v + "' for key '" + key + "'");
  }
}

inline int64_t parse_int(const std::string& v, const std::string& key) {
  try {
    size_t end = 0;
    const int64_t i = std::stoll(v, &end);
    if (end != v.size()) throw std::invalid_argument(v);
    return i;
  } catch (const std::exception&) {
    throw ConfigError("bad integer '" + v + "' for key '" + key + "'");
  }
}

// "C,kt,kf,dt,df; C,kt,kf,dt,df; ..."
inline std::vector<LayerSpec> parse_layers(const std::string& v) {
  std::vector<LayerSpec> out;
  std::stringstream layers(v);
  std::string part;
  while (std::getline(layers, part, ';')) {
    part = trim(part);
    if (part.empty()) continue;
    std::stringstream fields(part);
    std::string f;
    std::vector<int64_t> nums;
    while (std::getline(fields, f, ',')) nums.push_back(parse_int(trim(f), "model.layers"));
    if (nums.size() != 5) {
      throw ConfigError("layer spec '" + part + "' needs 5 fields: C,kt,kf,dt,df");
    }
    out.push_back(LayerSpec{nums[0], nums[1], nums[2], nums[3], nums[4]});
  }
  if (out.empty()) throw ConfigError("model.layers is empty");
  return out;
}

inline std::string layers_to_string(const std::vector<LayerSpec>& layers) {
  std::ostringstream os;
  for (size_t i = 0; i < layers.size(); ++i) {
    if (i) os << "; ";
    os << layers[i].channels << ',' << layers[i].kernel_t << ',' << layers[i].kernel_f << ','
       << layers[i].dil_t << ',' << layers[i].dil_f;
  }
  return os.str();
}

inline std::vector<float> parse_float_list(const std::string& v, const std::string& key) {
  std::vector<float> out;
  std::stringstream ss(v);
  std::string part;
  while (std::getline(ss, part, ',')) {
    part = trim(part);
    if (!part.empty()) out.push_back(parse_float(part, key));
  }
  return out;
}

inline std::string fmt_float(float v) {
  std::ostringstream os;
  os << v;
  return os.str();
}

}  // namespace detail

inline void config_set(RunConfig& cfg, const std::string& key, const std::string& raw) {
  const std::string v = detail::trim(raw);
  auto& m = cfg.model;
  if (key == "model.layers") {
    m.layers = detail::parse_layers(v);
  } else if (key == "model.mode") {
    m.mode = neuron_mode_from_string(v);
  } else if (key == "model.surrogate_a") {
    m.surrogate_a = detail::parse_float(v, key);
  } else if (key == "model.readout") {
    if (v == "mean") {
      m.readout = ReadoutVariant::Mean;
    } else if (v == "maxpot") {
      m.readout = ReadoutVariant::MaxPot;
    } else {
      throw ConfigError("bad readout variant '" + v + "'");
    }
  } else if (key == "model.readout_beta") {
    m.readout_beta = detail::parse_float(v, key);
  } else if (key == "model.freeze_beta") {
    m.freeze_beta = detail::parse_bool(v, key);
  } else if (key == "model.freeze_b") {
    m.freeze_b = detail::parse_bool(v, key);
  } else if (key == "model.stop_grad_norm") {
    m.stop_grad_norm = detail::parse_bool(v, key);
  } else if (key == "model.reset_detach") {
    m.reset_detach = detail::parse_bool(v, key);
  } else if (key == "model.padding") {
    if (v == "same") {
      m.padding = ConvPadding::SameSymmetric;
    } else if (v == "causal") {
      m.padding = ConvPadding::CausalTime;
    } else {
      throw ConfigError("bad padding '" + v + "' (same|causal)");
    }
  } else if (key == "model.n_classes") {
    m.n_classes = static_cast<int>(detail::parse_int(v, key));
  } else if (key == "model.in_t") {
    m.in_t = detail::parse_int(v, key);
  } else if (key == "model.in_f") {
    m.in_f = detail::parse_int(v, key);
  } else if (key == "init.b_mean") {
    m.b_init_mean = detail::parse_float(v, key);
  } else if (key == "init.b_std") {
    m.b_init_std = detail::parse_float(v, key);
  } else if (key == "init.beta_mean") {
    m.beta_init_mean = detail::parse_float(v, key);
  } else if (key == "init.beta_std") {
    m.beta_init_std = detail::parse_float(v, key);
  } else if (key == "data.root") {
    cfg.data.root = v;
  } else if (key == "data.seed") {
    cfg.data.seed = static_cast<uint32_t>(detail::parse_int(v, key));
  } else if (key == "data.batch") {
    cfg.data.batch = static_cast<int>(detail::parse_int(v, key));
  } else if (key == "data.cache_dir") {
    cfg.data.cache_dir = v;
  } else if (key == "data.limit_train") {
    cfg.data.limit_train = static_cast<int>(detail::parse_int(v, key));
  } else if (key == "optim.lr") {
    cfg.optim.lr = detail::parse_float(v, key);
  } else if (key == "optim.beta1") {
    cfg.optim.beta1 = detail::parse_float(v, key);
  } else if (key == "optim.beta2") {
    cfg.optim.beta2 = detail::parse_float(v, key);
  } else if (key == "optim.eps") {
    cfg.optim.eps = detail::parse_float(v, key);
  } else if (key == "optim.weight_decay") {
    cfg.optim.weight_decay = detail::parse_float(v, key);
  } else if (key == "optim.grad_clip") {
    cfg.optim.grad_clip = detail::parse_float(v, key);
  } else if (key == "optim.lr_gamma") {
    cfg.optim.lr_gamma = detail::parse_float(v, key);
  } else if (key == "optim.warmup_epochs") {
    cfg.optim.warmup_epochs = static_cast<int>(detail::parse_int(v, key));
  } else if (key == "optim.decoupled_decay") {
    cfg.optim.decoupled_decay = detail::parse_bool(v, key);
  } else if (key == "loss.reg_weight") {
    cfg.loss.reg_weight = detail::parse_float(v, key);
  } else if (key == "loss.reg_enabled") {
    cfg.loss.reg_enabled = detail::parse_bool(v, key);
  } else if (key == "loss.reg_layer_weights") {
    cfg.loss.reg_layer_weights = detail::parse_float_list(v, key);
  } else if (key == "train.epochs") {
    cfg.train.epochs = static_cast<int>(detail::parse_int(v, key));
  } else if (key == "train.out_dir") {
    cfg.train.out_dir = v;
  } else if (key == "train.log_every") {
    cfg.train.log_every = static_cast<int>(detail::parse_int(v, key));
  } else {
    throw ConfigError("unknown config key '" + key + "'");
  }
}

/// Canonical dump: one `key = value` line per logical field, fixed order.
inline std::string dump_config(const RunConfig& cfg) {
  using detail::fmt_float;
  std::ostringstream os;
  const auto& m = cfg.model;
  os << "model.layers = " << detail::layers_to_string(m.layers) << '\n';
  os << "model.mode = " << (m.mode == NeuronMode::LIF ? "lif" : "nlif") << '\n';
  os << "model.surrogate_a = " << fmt_float(m.surrogate_a) << '\n';
  os << "model.readout = " << (m.readout == ReadoutVariant::Mean ? "mean" : "maxpot") << '\n';
  os << "model.readout_beta = " << fmt_float(m.readout_beta) << '\n';
  os << "model.freeze_beta = " << (m.freeze_beta ? "true" : "false") << '\n';
  os << "model.freeze_b = " << (m.freeze_b ? "true" : "false") << '\n';
  os << "model.stop_grad_norm = " << (m.stop_grad_norm ? "true" : "false") << '\n';
  os << "model.reset_detach = " << (m.reset_detach ? "true" : "false") << '\n';
  os << "model.padding = " << (m.padding == ConvPadding::SameSymmetric ? "same" : "causal")
     << '\n';
  os << "model.n_classes = " << m.n_classes << '\n';
  os << "model.in_t = " << m.in_t << '\n';
  os << "model.in_f = " << m.in_f << '\n';
  os << "init.b_mean = " << fmt_float(m.b_init_mean) << '\n';
  os << "init.b_std = " << fmt_float(m.b_init_std) << '\n';
  os << "init.beta_mean = " << fmt_float(m.beta_init_mean) << '\n';
  os << "init.beta_std = " << fmt_float(m.beta_init_std) << '\n';
  os << "data.root = " << cfg.data.root << '\n';
  os << "data.seed = " << cfg.data.seed << '\n';
  os << "data.batch = " << cfg.data.batch << '\n';
  os << "data.cache_dir = " << cfg.data.cache_dir << '\n';
  os << "data.limit_train = " << cfg.data.limit_train << '\n';
  os << "optim.lr = " << fmt_float(cfg.optim.lr) << '\n';
  os << "optim.beta1 = " << fmt_float(cfg.optim.beta1) << '\n';
  os << "optim.beta2 = " << fmt_float(cfg.optim.beta2) << '\n';
  os << "optim.eps = " << fmt_float(cfg.optim.eps) << '\n';
  os << "optim.weight_decay = " << fmt_float(cfg.optim.weight_decay) << '\n';
  os << "optim.grad_clip = " << fmt_float(cfg.optim.grad_clip) << '\n';
  os << "optim.lr_gamma = " << fmt_float(cfg.optim.lr_gamma) << '\n';
  os << "optim.warmup_epochs = " << cfg.optim.warmup_epochs << '\n';
  os << "optim.decoupled_decay = " << (cfg.optim.decoupled_decay ? "true" : "false") << '\n';
  os << "loss.reg_weight = " << fmt_float(cfg.loss.reg_weight) << '\n';
  os << "loss.reg_enabled = " << (cfg.loss.reg_enabled ? "true" : "false") << '\n';
  {
    os << "loss.reg_layer_weights = ";
    for (size_t i = 0; i < cfg.loss.reg_layer_weights.size(); ++i) {
      if (i) os << ',';
      os << fmt_float(cfg.loss.reg_layer_weights[i]);
    }
    os << '\n';
  }
  os << "train.epochs = " << cfg.train.epochs << '\n';
  os << "train.out_dir = " << cfg.train.out_dir << '\n';
  os << "train.log_every = " << cfg.train.log_every << '\n';
  return os.str();
}

/// Parses `key = value` lines; '#' starts a comment.
inline RunConfig parse_config_text(std::istream& in, const std::string& origin) {
  RunConfig cfg;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(origin + " line " + std::to_string(lineno) + ": expected key = value");
    }
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    config_set(cfg, key, value);
  }
  return cfg;
}

inline RunConfig parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file '" + path + "'");
  return parse_config_text(in, "'" + path + "'");
}

/// Applies a `key=value` override string.
inline void apply_override(RunConfig& cfg, const std::string& kv) {
  const size_t eq = kv.find('=');
  if (eq == std::string::npos) throw ConfigError("override '" + kv + "' is not key=value");
  config_set(cfg, detail::trim(kv.substr(0, eq)), detail::trim(kv.substr(eq + 1)));
}

/// Logical fields whose values differ between two configs.
inline std::vector<std::string> config_diff(const RunConfig& a, const RunConfig& b) {
  std::istringstream da(dump_config(a)), db(dump_config(b));
  std::vector<std::string> out;
  std::string la, lb;
  while (std::getline(da, la) && std::getline(db, lb)) {
    if (la != lb) out.push_back(la.substr(0, la.find(" =")));
  }
  return out;
}

/// FNV-1a hash of the canonical dump; stored in checkpoints.
inline uint64_t config_hash(const RunConfig& cfg) {
  const std::string dump = dump_config(cfg);
  uint64_t h = 1469598103934665603ull;
  for (unsigned char c : dump) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace spikekit
