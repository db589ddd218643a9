#pragma once

#include <cstdint>
#include <vector>

#include "ferm/augment/augment.hpp"
#include "ferm/replay/replay.hpp"

namespace ferm::env {

struct EnvStep {
  aug::ImageBatch obs;
  float reward = 0.0f;
  bool done = false;
  bool success = false;
};

// Common surface for the trainers: pixel observations in, bounded continuous
// actions out, with an interaction counter for no-training-interaction audits.
class EnvBase {
 public:
  virtual ~EnvBase() = default;
  virtual aug::ImageBatch reset() = 0;
  virtual EnvStep step(const std::vector<float>& action) = 0;
  virtual int action_dim() const = 0;
  virtual replay::ObsSpec obs_spec() const = 0;
  virtual int horizon() const = 0;
  virtual int64_t total_steps() const = 0;
};

}  // namespace ferm::env
