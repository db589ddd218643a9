#pragma once

#include <string>

#include "ferm/env/env.hpp"
#include "ferm/util/rng.hpp"

namespace ferm::env {

enum class Task { reach, pickup, move, push, dense_reach };

Task task_from_string(const std::string& name);
const char* task_name(Task t);
bool task_is_sparse(Task t);

enum class ViewMode { both, shoulder_only, gripper_only };

ViewMode view_mode_from_string(const std::string& name);
const char* view_mode_name(ViewMode v);

struct WorldState {
  float gx = 0.5f, gy = 0.5f, gz = 0.3f;
  float aperture = 1.0f;
  float bx = 0.5f, by = 0.5f, bz = 0.02f;
  float goal_x = 0.5f, goal_y = 0.5f;
  bool held = false;
  int step_count = 0;
  Task task = Task::reach;
};

struct RigidEnvConfig {
  Task task = Task::reach;
  int horizon = 50;
  ViewMode view = ViewMode::both;
  int obs_h = 48;
  int obs_w = 48;
  bool fix_block = false;
  float reach_threshold = 0.08f;
  float grasp_radius = 0.04f;
  float lift_height = 0.14f;
  float goal_radius = 0.08f;
};

// Kinematic tabletop world on the unit workspace. Motions scale the action by
// 0.05 per axis; grasping attaches the block to the gripper; a near-table
// open gripper shoves the block; rewards are 0 on the task predicate and -1
// otherwise (dense_reach returns the negative gripper-block distance).
class RigidEnv final : public EnvBase {
 public:
  RigidEnv(RigidEnvConfig cfg, uint64_t seed);

  aug::ImageBatch reset() override;
  EnvStep step(const std::vector<float>& action) override;
  int action_dim() const override { return 4; }
  replay::ObsSpec obs_spec() const override { return {3, cfg_.obs_h, cfg_.obs_w}; }
  int horizon() const override { return cfg_.horizon; }
  int64_t total_steps() const override { return total_steps_; }

  aug::ImageBatch render() const;
  const WorldState& state() const { return st_; }
  void set_state(const WorldState& s);
  bool episode_done() const { return done_; }
  const RigidEnvConfig& config() const { return cfg_; }

 private:
  float reward_of_state(bool* success) const;

  RigidEnvConfig cfg_;
  Rng rng_;
  WorldState st_;
  bool done_ = true;
  int64_t total_steps_ = 0;
};

}  // namespace ferm::env
