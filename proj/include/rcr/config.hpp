#pragma once

#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "rcr/core.hpp"
#include "rcr/trainer.hpp"

namespace rcr {

/// Plain key = value run configuration ("#" starts a comment). Unknown keys
/// are rejected; defaults follow the reference hyperparameters. Rotation and
/// flip default to "auto": resolved against the dataset dimensionality
/// (15 degrees / flips off for 2D, 180 degrees / flips on for 3D).
struct RunConfig {
  std::string dataset_path;
  std::string dataset_name;  // defaults to the dataset_path stem
  int tasks = 0;             // 0 = as many as the class count allows
  int classes_per_task = 2;
  std::string ordering = "by_population";  // or "split_order"
  int z_size = 2048;
  int decoder_points = 2048;
  bool reconstruction = true;
  std::string rehearsal_strategy = "random";  // or "argmax"
  int rehearsal_points = 100;
  bool with_replacement = false;
  int batch_size = 32;
  int max_epochs = 1000;
  int patience = 100;
  double lr_initial = 1e-3;
  double lr_decay = 0.7;
  std::int64_t lr_interval = 100000;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double bn_momentum_initial = 0.5;
  double bn_momentum_decay = 0.5;
  std::int64_t bn_momentum_interval = 100000;
  double bn_momentum_floor = 0.01;
  double dropout_p = 0.3;
  double augment_rotation_deg = -1.0;  // -1 = auto
  double augment_noise_sigma = 0.02;
  double augment_noise_cap = 0.05;
  int augment_flip = -1;  // -1 = auto, 0 = off, 1 = on
  std::uint64_t seed = 0;
  std::string scenarios = "task_il,class_il";
  std::string method = "rcr";

  bool rotation_auto = true;
  bool flip_auto = true;
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  const auto e = s.find_last_not_of(" \t\r");
  return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
}

inline bool parse_on_off(const std::string& key, const std::string& value) {
  if (value == "on") return true;
  if (value == "off") return false;
  throw std::invalid_argument("config: " + key + " must be on or off, got '" + value + "'");
}

template <class T>
T parse_number(const std::string& key, const std::string& value) {
  std::istringstream is(value);
  T out;
  is >> out;
  if (is.fail() || !is.eof())
    throw std::invalid_argument("config: bad numeric value for " + key + ": '" + value + "'");
  return out;
}

}  // namespace detail

inline RunConfig parse_run_config(const std::string& text) {
  RunConfig cfg;
  std::set<std::string> seen;
  std::istringstream is(text);
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config: line " + std::to_string(line_no) +
                                  " is not key = value");
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    if (!seen.insert(key).second)
      throw std::invalid_argument("config: duplicate key " + key);

    if (key == "dataset_path") {
      cfg.dataset_path = value;
    } else if (key == "dataset_name") {
      cfg.dataset_name = value;
    } else if (key == "tasks") {
      cfg.tasks = detail::parse_number<int>(key, value);
    } else if (key == "classes_per_task") {
      cfg.classes_per_task = detail::parse_number<int>(key, value);
    } else if (key == "ordering") {
      cfg.ordering = value;
    } else if (key == "z_size") {
      cfg.z_size = detail::parse_number<int>(key, value);
    } else if (key == "decoder_points") {
      cfg.decoder_points = detail::parse_number<int>(key, value);
    } else if (key == "reconstruction") {
      cfg.reconstruction = detail::parse_on_off(key, value);
    } else if (key == "rehearsal_strategy") {
      cfg.rehearsal_strategy = value;
    } else if (key == "rehearsal_points") {
      cfg.rehearsal_points = detail::parse_number<int>(key, value);
    } else if (key == "with_replacement") {
      cfg.with_replacement = detail::parse_on_off(key, value);
    } else if (key == "batch_size") {
      cfg.batch_size = detail::parse_number<int>(key, value);
    } else if (key == "max_epochs") {
      cfg.max_epochs = detail::parse_number<int>(key, value);
    } else if (key == "patience") {
      cfg.patience = detail::parse_number<int>(key, value);
    } else if (key == "lr_initial") {
      cfg.lr_initial = detail::parse_number<double>(key, value);
    } else if (key == "lr_decay") {
      cfg.lr_decay = detail::parse_number<double>(key, value);
    } else if (key == "lr_interval") {
      cfg.lr_interval = detail::parse_number<std::int64_t>(key, value);
    } else if (key == "adam_beta1") {
      cfg.adam_beta1 = detail::parse_number<double>(key, value);
    } else if (key == "adam_beta2") {
      cfg.adam_beta2 = detail::parse_number<double>(key, value);
    } else if (key == "bn_momentum_initial") {
      cfg.bn_momentum_initial = detail::parse_number<double>(key, value);
    } else if (key == "bn_momentum_decay") {
      cfg.bn_momentum_decay = detail::parse_number<double>(key, value);
    } else if (key == "bn_momentum_interval") {
      cfg.bn_momentum_interval = detail::parse_number<std::int64_t>(key, value);
    } else if (key == "bn_momentum_floor") {
      cfg.bn_momentum_floor = detail::parse_number<double>(key, value);
    } else if (key == "dropout_p") {
      cfg.dropout_p = detail::parse_number<double>(key, value);
    } else if (key == "augment_rotation_deg") {
      if (value == "auto") {
        cfg.rotation_auto = true;
        cfg.augment_rotation_deg = -1.0;
      } else {
        cfg.augment_rotation_deg = detail::parse_number<double>(key, value);
        cfg.rotation_auto = false;
      }
    } else if (key == "augment_noise_sigma") {
      cfg.augment_noise_sigma = detail::parse_number<double>(key, value);
    } else if (key == "augment_noise_cap") {
      cfg.augment_noise_cap = detail::parse_number<double>(key, value);
    } else if (key == "augment_flip") {
      if (value == "auto") {
        cfg.flip_auto = true;
        cfg.augment_flip = -1;
      } else {
        cfg.augment_flip = detail::parse_on_off(key, value) ? 1 : 0;
        cfg.flip_auto = false;
      }
    } else if (key == "seed") {
      cfg.seed = detail::parse_number<std::uint64_t>(key, value);
    } else if (key == "scenarios") {
      cfg.scenarios = value;
    } else if (key == "method") {
      cfg.method = value;
    } else {
      throw std::invalid_argument("config: unknown key '" + key + "'");
    }
  }
  return cfg;
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("config: cannot open " + path);
  std::stringstream buffer;
  buffer << is.rdbuf();
  return parse_run_config(buffer.str());
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream is(s);
  while (std::getline(is, item, ',')) {
    item = detail::trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

inline void validate_run_config(const RunConfig& cfg) {
  auto check = [](bool ok, const std::string& msg) {
    if (!ok) throw std::invalid_argument("config: " + msg);
  };
  check(!cfg.dataset_path.empty(), "dataset_path is required");
  check(cfg.tasks >= 0, "tasks must be >= 0");
  check(cfg.classes_per_task >= 1, "classes_per_task must be >= 1");
  check(cfg.ordering == "by_population" || cfg.ordering == "split_order",
        "ordering must be by_population or split_order");
  check(cfg.z_size >= 1, "z_size must be >= 1");
  check(cfg.decoder_points >= 1, "decoder_points must be >= 1");
  check(cfg.rehearsal_strategy == "random" || cfg.rehearsal_strategy == "argmax",
        "rehearsal_strategy must be random or argmax");
  check(cfg.rehearsal_points >= 1, "rehearsal_points must be >= 1");
  check(cfg.batch_size >= 2, "batch_size must be >= 2");
  check(cfg.max_epochs >= 1, "max_epochs must be >= 1");
  check(cfg.patience >= 1 && cfg.patience <= cfg.max_epochs,
        "patience must be in [1, max_epochs]");
  check(cfg.lr_initial > 0.0, "lr_initial must be > 0");
  check(cfg.lr_decay > 0.0 && cfg.lr_decay <= 1.0, "lr_decay must be in (0, 1]");
  check(cfg.lr_interval >= 1, "lr_interval must be >= 1");
  check(cfg.adam_beta1 >= 0.0 && cfg.adam_beta1 < 1.0, "adam_beta1 must be in [0, 1)");
  check(cfg.adam_beta2 >= 0.0 && cfg.adam_beta2 < 1.0, "adam_beta2 must be in [0, 1)");
  check(cfg.bn_momentum_initial > 0.0 && cfg.bn_momentum_initial <= 1.0,
        "bn_momentum_initial must be in (0, 1]");
  check(cfg.bn_momentum_decay > 0.0 && cfg.bn_momentum_decay <= 1.0,
        "bn_momentum_decay must be in (0, 1]");
  check(cfg.bn_momentum_interval >= 1, "bn_momentum_interval must be >= 1");
  check(cfg.bn_momentum_floor > 0.0 && cfg.bn_momentum_floor <= 1.0,
        "bn_momentum_floor must be in (0, 1]");
  check(cfg.dropout_p >= 0.0 && cfg.dropout_p < 1.0, "dropout_p must be in [0, 1)");
  check(cfg.rotation_auto || cfg.augment_rotation_deg >= 0.0,
        "augment_rotation_deg must be >= 0 or auto");
  check(cfg.augment_noise_sigma >= 0.0, "augment_noise_sigma must be >= 0");
  check(cfg.augment_noise_cap >= 0.0, "augment_noise_cap must be >= 0");
  const auto scenarios = split_list(cfg.scenarios);
  check(!scenarios.empty(), "scenarios must name at least one of task_il, class_il");
  for (const auto& s : scenarios)
    check(s == "task_il" || s == "class_il", "unknown scenario '" + s + "'");
  check(cfg.method == "rcr" || cfg.method == "fine_tune" ||
            cfg.method == "incremental" || cfg.method == "joint",
        "method must be rcr, fine_tune, incremental or joint");
}

/// Fills the auto fields against the dataset dimensionality and derives the
/// dataset name when missing.
inline void resolve_run_config(RunConfig& cfg, int dims) {
  if (cfg.rotation_auto) {
    cfg.augment_rotation_deg = dims == 2 ? 15.0 : 180.0;
    cfg.rotation_auto = false;
  }
  if (cfg.flip_auto) {
    cfg.augment_flip = dims == 2 ? 0 : 1;
    cfg.flip_auto = false;
  }
  if (cfg.dataset_name.empty()) {
    std::string stem = cfg.dataset_path;
    const auto slash = stem.find_last_of('/');
    if (slash != std::string::npos) stem = stem.substr(slash + 1);
    const auto dot = stem.find_last_of('.');
    if (dot != std::string::npos) stem = stem.substr(0, dot);
    cfg.dataset_name = stem.empty() ? "dataset" : stem;
  }
}

inline Method method_from_string(const std::string& s) {
  if (s == "rcr") return Method::kRcr;
  if (s == "fine_tune") return Method::kFineTune;
  if (s == "incremental") return Method::kIncremental;
  if (s == "joint") return Method::kJointSupervised;
  throw std::invalid_argument("config: unknown method '" + s + "'");
}

/// Maps a validated + resolved config onto the trainer's run spec.
inline RunSpec run_spec_from_config(const RunConfig& cfg, int dims) {
  RunSpec spec;
  spec.model.input_dims = dims;
  spec.model.z_size = cfg.z_size;
  spec.model.decoder_points = cfg.decoder_points;
  spec.model.reconstruction = cfg.reconstruction;
  spec.model.dropout_p = cfg.dropout_p;
  spec.train.max_epochs = cfg.max_epochs;
  spec.train.patience_epochs = cfg.patience;
  spec.train.batch_size = cfg.batch_size;
  spec.train.seed = cfg.seed;
  spec.compression.strategy = cfg.rehearsal_strategy == "argmax"
                                  ? CompressionStrategy::kArgmax
                                  : CompressionStrategy::kRandom;
  spec.compression.points_to_keep = cfg.rehearsal_points;
  spec.compression.with_replacement = cfg.with_replacement;
  spec.augment.rotation_limit_degrees = cfg.augment_rotation_deg;
  spec.augment.noise_sigma = cfg.augment_noise_sigma;
  spec.augment.noise_cap = cfg.augment_noise_cap;
  spec.augment.flip_enabled = cfg.augment_flip == 1;
  spec.adam.lr_initial = cfg.lr_initial;
  spec.adam.lr_decay = cfg.lr_decay;
  spec.adam.lr_interval_steps = cfg.lr_interval;
  spec.adam.beta1 = cfg.adam_beta1;
  spec.adam.beta2 = cfg.adam_beta2;
  spec.bn.initial_momentum = cfg.bn_momentum_initial;
  spec.bn.decay_factor = cfg.bn_momentum_decay;
  spec.bn.decay_interval_samples = cfg.bn_momentum_interval;
  spec.bn.momentum_floor = cfg.bn_momentum_floor;
  return spec;
}

namespace detail {
inline std::string format_double_key(double v) {
  // Shortest representation that round-trips through the parser.
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  double back = 0.0;
  std::sscanf(buf, "%lf", &back);
  for (int prec = 1; prec <= 16; ++prec) {
    char probe[48];
    std::snprintf(probe, sizeof(probe), "%.*g", prec, v);
    std::sscanf(probe, "%lf", &back);
    if (back == v) return probe;
  }
  return buf;
}
}  // namespace detail

/// Every effective value, fixed order; parses back to an identical config.
inline std::string echo_run_config(const RunConfig& cfg) {
  std::ostringstream os;
  os << "dataset_path = " << cfg.dataset_path << "\n";
  os << "dataset_name = " << cfg.dataset_name << "\n";
  os << "tasks = " << cfg.tasks << "\n";
  os << "classes_per_task = " << cfg.classes_per_task << "\n";
  os << "ordering = " << cfg.ordering << "\n";
  os << "z_size = " << cfg.z_size << "\n";
  os << "decoder_points = " << cfg.decoder_points << "\n";
  os << "reconstruction = " << (cfg.reconstruction ? "on" : "off") << "\n";
  os << "rehearsal_strategy = " << cfg.rehearsal_strategy << "\n";
  os << "rehearsal_points = " << cfg.rehearsal_points << "\n";
  os << "with_replacement = " << (cfg.with_replacement ? "on" : "off") << "\n";
  os << "batch_size = " << cfg.batch_size << "\n";
  os << "max_epochs = " << cfg.max_epochs << "\n";
  os << "patience = " << cfg.patience << "\n";
  os << "lr_initial = " << detail::format_double_key(cfg.lr_initial) << "\n";
  os << "lr_decay = " << detail::format_double_key(cfg.lr_decay) << "\n";
  os << "lr_interval = " << cfg.lr_interval << "\n";
  os << "adam_beta1 = " << detail::format_double_key(cfg.adam_beta1) << "\n";
  os << "adam_beta2 = " << detail::format_double_key(cfg.adam_beta2) << "\n";
  os << "bn_momentum_initial = " << detail::format_double_key(cfg.bn_momentum_initial) << "\n";
  os << "bn_momentum_decay = " << detail::format_double_key(cfg.bn_momentum_decay) << "\n";
  os << "bn_momentum_interval = " << cfg.bn_momentum_interval << "\n";
  os << "bn_momentum_floor = " << detail::format_double_key(cfg.bn_momentum_floor) << "\n";
  os << "dropout_p = " << detail::format_double_key(cfg.dropout_p) << "\n";
  os << "augment_rotation_deg = "
     << (cfg.rotation_auto ? std::string("auto")
                           : detail::format_double_key(cfg.augment_rotation_deg))
     << "\n";
  os << "augment_noise_sigma = " << detail::format_double_key(cfg.augment_noise_sigma) << "\n";
  os << "augment_noise_cap = " << detail::format_double_key(cfg.augment_noise_cap) << "\n";
  os << "augment_flip = "
     << (cfg.flip_auto ? "auto" : (cfg.augment_flip == 1 ? "on" : "off")) << "\n";
  os << "seed = " << cfg.seed << "\n";
  os << "scenarios = " << cfg.scenarios << "\n";
  os << "method = " << cfg.method << "\n";
  return os.str();
}

/// Raw key/value assignments of a config text, in file order, with comments
/// stripped and duplicates rejected. Keys are not interpreted here.
inline std::vector<std::pair<std::string, std::string>> parse_config_pairs(
    const std::string& text) {
  std::vector<std::pair<std::string, std::string>> pairs;
  std::set<std::string> seen;
  std::istringstream is(text);
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config: line " + std::to_string(line_no) +
                                  " is not key = value");
    const std::string key = detail::trim(line.substr(0, eq));
    if (!seen.insert(key).second)
      throw std::invalid_argument("config: duplicate key " + key);
    pairs.emplace_back(key, detail::trim(line.substr(eq + 1)));
  }
  return pairs;
}

/// Merges --key value overrides into config text and parses the result.
inline RunConfig parse_run_config_with_overrides(
    const std::string& text,
    const std::vector<std::pair<std::string, std::string>>& overrides) {
  auto pairs = parse_config_pairs(text);
  for (const auto& [key, value] : overrides) {
    bool replaced = false;
    for (auto& p : pairs)
      if (p.first == key) {
        p.second = value;
        replaced = true;
        break;
      }
    if (!replaced) pairs.emplace_back(key, value);
  }
  std::ostringstream merged;
  for (const auto& [key, value] : pairs) merged << key << " = " << value << "\n";
  return parse_run_config(merged.str());
}

}  // namespace rcr
