#include "ferm/harness/config.hpp"

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include "ferm/util/error.hpp"

namespace ferm::harness {

namespace {

std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  size_t e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

int64_t parse_i64(const std::string& key, const std::string& value) {
  int64_t v = 0;
  auto res = std::from_chars(value.data(), value.data() + value.size(), v);
  if (res.ec != std::errc() || res.ptr != value.data() + value.size())
    raise(ErrorKind::config, "malformed integer '" + value + "' for " + key);
  return v;
}

int parse_int_min(const std::string& key, const std::string& value, int min_v) {
  int64_t v = parse_i64(key, value);
  if (v < min_v)
    raise(ErrorKind::config, key + " must be >= " + std::to_string(min_v) + ", got " + value);
  if (v > 1000000000)
    raise(ErrorKind::config, key + " is implausibly large: " + value);
  return static_cast<int>(v);
}

uint64_t parse_u64(const std::string& key, const std::string& value) {
  uint64_t v = 0;
  auto res = std::from_chars(value.data(), value.data() + value.size(), v);
  if (res.ec != std::errc() || res.ptr != value.data() + value.size())
    raise(ErrorKind::config, "malformed unsigned integer '" + value + "' for " + key);
  return v;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "on" || value == "true" || value == "1") return true;
  if (value == "off" || value == "false" || value == "0") return false;
  raise(ErrorKind::config, "malformed boolean '" + value + "' for " + key +
                               " (use on/off, true/false, or 1/0)");
}

}  // namespace

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = {
      "task",       "profile",       "num_demos",     "pretrain_iters",
      "augmentation", "view",        "seed",          "total_steps",
      "init_random_steps", "eval_episodes", "batch_size", "replay_capacity",
      "out_dir",    "demos_file"};
  return keys;
}

void set_key(ExperimentConfig& cfg, const std::string& key, const std::string& value) {
  if (key == "task") {
    try {
      cfg.task = env::task_from_string(value);
    } catch (const FermError& e) {
      raise(ErrorKind::config, e.what());
    }
  } else if (key == "profile") {
    if (value != "desk" && value != "paper")
      raise(ErrorKind::config, "profile must be 'desk' or 'paper', got '" + value + "'");
    cfg.profile = value;
  } else if (key == "num_demos") {
    cfg.num_demos = parse_int_min(key, value, 0);
  } else if (key == "pretrain_iters") {
    cfg.pretrain_iters = parse_int_min(key, value, 0);
  } else if (key == "augmentation") {
    cfg.augmentation = parse_bool(key, value);
  } else if (key == "view") {
    try {
      cfg.view = env::view_mode_from_string(value);
    } catch (const FermError& e) {
      raise(ErrorKind::config, e.what());
    }
  } else if (key == "seed") {
    cfg.seed = parse_u64(key, value);
  } else if (key == "total_steps") {
    cfg.total_steps = parse_int_min(key, value, 0);
  } else if (key == "init_random_steps") {
    cfg.init_random_steps = parse_int_min(key, value, 0);
  } else if (key == "eval_episodes") {
    cfg.eval_episodes = parse_int_min(key, value, 1);
  } else if (key == "batch_size") {
    cfg.batch_size = parse_int_min(key, value, 1);
  } else if (key == "replay_capacity") {
    cfg.replay_capacity = parse_int_min(key, value, 1);
  } else if (key == "out_dir") {
    if (value.empty()) raise(ErrorKind::config, "out_dir must not be empty");
    cfg.out_dir = value;
  } else if (key == "demos_file") {
    cfg.demos_file = value;
  } else {
    raise(ErrorKind::config, "unknown key '" + key + "'");
  }
}

ExperimentConfig parse_config(const std::string& text) {
  ExperimentConfig cfg;
  std::set<std::string> seen;
  std::istringstream is(text);
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos)
      raise(ErrorKind::config,
            "line " + std::to_string(line_no) + ": expected key=value, got '" + line + "'");
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.empty())
      raise(ErrorKind::config, "line " + std::to_string(line_no) + ": empty key");
    if (!seen.insert(key).second)
      raise(ErrorKind::config,
            "line " + std::to_string(line_no) + ": duplicate key '" + key + "'");
    try {
      set_key(cfg, key, value);
    } catch (const FermError& e) {
      raise(ErrorKind::config, "line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) raise(ErrorKind::io, "cannot open config file: " + path);
  std::ostringstream ss;
  ss << is.rdbuf();
  return parse_config(ss.str());
}

std::string serialize_config(const ExperimentConfig& cfg) {
  std::ostringstream os;
  os << "task=" << env::task_name(cfg.task) << '\n';
  os << "profile=" << cfg.profile << '\n';
  os << "num_demos=" << cfg.num_demos << '\n';
  os << "pretrain_iters=" << cfg.pretrain_iters << '\n';
  os << "augmentation=" << (cfg.augmentation ? "on" : "off") << '\n';
  os << "view=" << env::view_mode_name(cfg.view) << '\n';
  os << "seed=" << cfg.seed << '\n';
  os << "total_steps=" << cfg.total_steps << '\n';
  os << "init_random_steps=" << cfg.init_random_steps << '\n';
  os << "eval_episodes=" << cfg.eval_episodes << '\n';
  os << "batch_size=" << cfg.batch_size << '\n';
  os << "replay_capacity=" << cfg.replay_capacity << '\n';
  os << "out_dir=" << cfg.out_dir << '\n';
  os << "demos_file=" << cfg.demos_file << '\n';
  return os.str();
}

void apply_seed_override(ExperimentConfig& cfg, const char* value) {
  if (value == nullptr) return;
  std::string v(value);
  if (v.empty()) return;
  try {
    cfg.seed = parse_u64("FERM_SEED", v);
  } catch (const FermError& e) {
    raise(ErrorKind::config, std::string("FERM_SEED: ") + e.what());
  }
}

void apply_env_overrides(ExperimentConfig& cfg) {
  apply_seed_override(cfg, std::getenv("FERM_SEED"));
}

int obs_size(const ExperimentConfig& cfg) {
  if (cfg.profile == "desk") return 48;
  if (cfg.profile == "paper") return 100;
  raise(ErrorKind::config, "unknown profile '" + cfg.profile + "'");
}

int crop_size(const ExperimentConfig& cfg) {
  if (cfg.profile == "desk") return 40;
  if (cfg.profile == "paper") return 84;
  raise(ErrorKind::config, "unknown profile '" + cfg.profile + "'");
}

env::RigidEnvConfig env_config(const ExperimentConfig& cfg) {
  env::RigidEnvConfig ec;
  ec.task = cfg.task;
  ec.view = cfg.view;
  ec.obs_h = obs_size(cfg);
  ec.obs_w = obs_size(cfg);
  return ec;
}

}  // namespace ferm::harness
