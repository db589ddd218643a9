#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ferm/env/rigid.hpp"

namespace ferm::harness {

// One experiment, fully specified. A run is a pure function of this struct:
// same config (including seed) means byte-identical outputs.
struct ExperimentConfig {
  env::Task task = env::Task::move;
  std::string profile = "desk";  // desk: 48x48 obs cropped to 40; paper: 100 -> 84
  int num_demos = 10;
  int pretrain_iters = 1600;
  bool augmentation = true;
  env::ViewMode view = env::ViewMode::both;
  uint64_t seed = 1;
  int total_steps = 30000;
  int init_random_steps = 1000;
  int eval_episodes = 100;
  int batch_size = 128;
  int replay_capacity = 100000;
  std::string out_dir = "runs/exp";
  std::string demos_file;  // when set, demos are loaded instead of collected

  bool operator==(const ExperimentConfig&) const = default;
};

// The recognized keys, in serialization order.
const std::vector<std::string>& config_keys();

// Applies one key=value pair; unknown keys and malformed values raise
// ErrorKind::config. Used by the parser and by CLI flag overrides.
void set_key(ExperimentConfig& cfg, const std::string& key, const std::string& value);

// key=value lines with '#' comments. Unknown keys, malformed values, and
// duplicate keys are errors that name the offending line; missing keys keep
// their defaults.
ExperimentConfig parse_config(const std::string& text);

ExperimentConfig load_config(const std::string& path);

// All keys in a fixed order; parse_config(serialize_config(c)) == c.
std::string serialize_config(const ExperimentConfig& cfg);

// FERM_SEED, when present in the environment, overrides cfg.seed.
void apply_env_overrides(ExperimentConfig& cfg);

// Same, with the value passed explicitly (testable without setenv).
void apply_seed_override(ExperimentConfig& cfg, const char* value);

// Derived env/test geometry for the chosen profile.
int obs_size(const ExperimentConfig& cfg);
int crop_size(const ExperimentConfig& cfg);
env::RigidEnvConfig env_config(const ExperimentConfig& cfg);

}  // namespace ferm::harness
