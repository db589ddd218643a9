#pragma once

#include <array>
#include <string>
#include <vector>

#include "ferm/augment/augment.hpp"
#include "ferm/util/rng.hpp"

namespace ferm::env {

enum class SoftBody { rope, cloth_simplified, cloth };

SoftBody soft_body_from_string(const std::string& name);
const char* soft_body_name(SoftBody b);

// Pick a board point (or a corner index on cloth_simplified), then drag the
// grabbed particle by a relative displacement clipped to [-0.3, 0.3] per axis.
struct PickPlaceAction {
  float pick_x = 0.0f;  // board coords in [0,1]
  float pick_y = 0.0f;
  int corner = -1;  // cloth_simplified only: corner index 0..3 replaces coords
  float place_dx = 0.0f;
  float place_dy = 0.0f;
};

struct SoftEnvConfig {
  SoftBody body = SoftBody::rope;
  int horizon = -1;            // -1: per-body default (rope 200, cloth 120)
  int init_random_steps = -1;  // -1: per-body default (rope 50, cloth 130)
};

struct SoftStep {
  aug::ImageBatch obs;
  float reward = 0.0f;
  bool done = false;
  bool picked = false;  // false when the pick missed the body (no-op step)
};

inline constexpr int kSoftImg = 64;

// Sum over set mask pixels of exp(-0.5*|row - 32|): spreading the body wide
// on the center row maximizes it. Accumulated from per-row counts, so any
// column permutation of the mask yields the bitwise-identical value.
double rope_mask_reward(const std::vector<uint8_t>& mask);

// Spread score |mask AND goal| / |goal| in [0,1]; nonzero pixels count as set.
double mask_intersection_score(const std::vector<uint8_t>& mask,
                               const std::vector<uint8_t>& goal);

// Mean of the ceil(n/5) largest values of a per-step coverage series.
double coverage_score(const std::vector<double>& series);

// 2-D deformable body on the unit board: a particle chain (rope, 25) or grid
// (cloth, 9x9) moved by pick-place drags. The grabbed particle travels a
// straight path in 8 substeps; after each substep, iterative distance-
// constraint projection (at least 20 sweeps) restores segment rest lengths to
// within 1e-3 relative, and every particle is clamped to the board. The goal
// mask (the rendered rest shape) is fixed at construction.
class SoftEnv {
 public:
  SoftEnv(SoftEnvConfig cfg, uint64_t seed);

  // Rest shape, then the configured number of uniformly random pick-place
  // actions (which do not count against the horizon).
  aug::ImageBatch reset();
  SoftStep step(const PickPlaceAction& a);

  aug::ImageBatch render() const;  // 64x64x3 RGB
  std::vector<uint8_t> body_mask() const;  // kSoftImg*kSoftImg, values 0/1
  const std::vector<uint8_t>& goal_mask() const { return goal_mask_; }

  float reward() const;     // rope: rope_mask_reward; cloth: intersection score
  double coverage() const;  // |mask AND goal| / |goal| of the current state

  const std::vector<float>& positions() const { return pos_; }  // x0,y0,x1,y1,..
  int particle_count() const { return static_cast<int>(pos_.size() / 2); }
  float particle_radius_px() const;  // disc radius used by the rasterizer
  std::array<int, 4> corner_particles() const;  // cloth grid corners
  double max_segment_violation() const;  // relative, over all constraints

  int horizon() const { return horizon_; }
  int init_random_steps() const { return init_steps_; }
  int step_count() const { return step_count_; }
  bool episode_done() const { return done_; }
  const SoftEnvConfig& config() const { return cfg_; }

 private:
  struct Constraint {
    int a = 0, b = 0;
    double rest = 0.0;
  };

  void rest_shape();
  void build_constraints();
  void scramble(int n);
  // Returns false (leaving the state untouched) when no particle lies within
  // the pick radius; particle >= 0 grabs that particle directly.
  bool apply_pick_place(float px, float py, float dx, float dy, int particle);
  void plan_sweep(int pinned);
  void solve();

  SoftEnvConfig cfg_;
  Rng rng_;
  int horizon_ = 0;
  int init_steps_ = 0;
  std::vector<float> pos_;
  std::vector<Constraint> constraints_;
  std::vector<int> level_;
  std::vector<int> sweep_;
  std::vector<uint8_t> goal_mask_;
  int step_count_ = 0;
  bool done_ = true;
};

}  // namespace ferm::env
