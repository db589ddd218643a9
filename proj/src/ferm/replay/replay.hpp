#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ferm/util/rng.hpp"

namespace ferm::replay {

struct ObsSpec {
  int c = 0, h = 0, w = 0;
  int64_t numel() const { return static_cast<int64_t>(c) * h * w; }
  bool operator==(const ObsSpec&) const = default;
};

struct Transition {
  std::vector<uint8_t> obs;
  std::vector<float> action;
  float reward = 0.0f;
  std::vector<uint8_t> next_obs;
  bool done = false;
  bool is_demo = false;
};

using Episode = std::vector<Transition>;

// Capacity-bounded store. Demonstrations are seeded once, are never evicted,
// and online transitions evict FIFO among themselves.
class ReplayBuffer {
 public:
  ReplayBuffer(ObsSpec obs, int act_dim, int capacity = 100000);

  // Single-shot: stores every transition with is_demo=true. An empty episode
  // list is a valid seed (zero-demo ablation arm).
  void seed_with_demonstrations(const std::vector<Episode>& episodes);

  // Stores with is_demo=false; evicts the oldest online transition when full.
  void push(Transition t);

  std::vector<size_t> sample_indices(int n, Rng& rng) const;

  const Transition& at(size_t i) const { return storage_[i]; }
  size_t size() const { return storage_.size(); }
  int capacity() const { return capacity_; }
  int demo_count() const { return demo_count_; }
  bool seeded() const { return seeded_; }
  const ObsSpec& obs_spec() const { return obs_; }
  int act_dim() const { return act_dim_; }

 private:
  void validate(const Transition& t) const;

  ObsSpec obs_;
  int act_dim_ = 0;
  int capacity_ = 0;
  bool seeded_ = false;
  int demo_count_ = 0;
  size_t cursor_ = 0;
  std::vector<Transition> storage_;
};

// FERMDEMO container: magic, u32 version=1, observation geometry and action
// dimension, episode table, fixed-width transition records (little-endian).
void save_demos(const std::string& path, const ObsSpec& obs, int act_dim,
                const std::vector<Episode>& episodes);

struct DemoFile {
  ObsSpec obs;
  int act_dim = 0;
  std::vector<Episode> episodes;
};

DemoFile load_demos(const std::string& path);

}  // namespace ferm::replay
