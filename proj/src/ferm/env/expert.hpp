#pragma once

#include <vector>

#include "ferm/env/rigid.hpp"
#include "ferm/grad/tensor.hpp"
#include "ferm/nets/nets.hpp"
#include "ferm/replay/replay.hpp"
#include "ferm/util/rng.hpp"

namespace ferm::env {

// Proportional controller toward the task's current subgoal; components are
// clipped to [-1,1]. Pure function of the readable state.
std::vector<float> expert_action(const WorldState& s, Task task);

struct CollectResult {
  std::vector<replay::Episode> episodes;
  int attempts = 0;
};

// Rolls the scripted expert until exactly n successful episodes are retained;
// failures are discarded and resampled. Raises when 10*n attempts are not
// enough.
CollectResult collect_demonstrations(RigidEnv& env, int n);

struct BcConfig {
  int iterations = 2000;
  int batch = 128;
  float lr = 1e-3f;
  int crop = 40;
};

// Behavior cloning: the pixel encoder (trained jointly) plus a small MLP head
// regressing actions; outputs bounded by tanh.
struct BcPolicy {
  nets::Encoder enc;
  grad::Tensor<float> w1, b1, w2, b2, w3, b3;
  int act_dim = 0;

  static BcPolicy init(int in_c, int img, int act_dim, Rng& rng);
  grad::Tensor<float> forward(const grad::Tensor<float>& obs) const;
  std::vector<grad::Tensor<float>> params();
};

// Mean-squared-error regression on randomly cropped demo frames; returns the
// per-iteration loss series.
std::vector<double> bc_train(BcPolicy& policy, const std::vector<replay::Episode>& demos,
                             const BcConfig& cfg, Rng& rng);

// Deterministic center-crop rollouts; returns the success rate.
double bc_eval(BcPolicy& policy, RigidEnv& env, int episodes, int crop);

}  // namespace ferm::env
