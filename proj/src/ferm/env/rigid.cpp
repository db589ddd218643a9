#include "ferm/env/rigid.hpp"

#include <algorithm>
#include <cmath>

#include "ferm/util/error.hpp"

namespace ferm::env {

namespace {

constexpr float kMove = 0.05f;
constexpr float kApertureRate = 0.5f;
constexpr float kBlockRest = 0.02f;
constexpr float kMinSeparation = 0.1f;
constexpr float kGoalMinDist = 0.25f;
constexpr float kPushContact = 0.05f;
constexpr float kPushMinOffset = 0.012f;
constexpr float kPushHeight = 0.06f;
constexpr float kFixedBlockX = 0.62f;
constexpr float kFixedBlockY = 0.62f;

float clipf(float v, float lo, float hi) { return std::min(hi, std::max(lo, v)); }

float dist3(float ax, float ay, float az, float bx, float by, float bz) {
  float dx = ax - bx, dy = ay - by, dz = az - bz;
  return std::sqrt(dx * dx + dy * dy + dz * dz);
}

float dist2(float ax, float ay, float bx, float by) {
  float dx = ax - bx, dy = ay - by;
  return std::sqrt(dx * dx + dy * dy);
}

struct Rgb {
  uint8_t r, g, b;
};

constexpr Rgb kWhite{255, 255, 255};
constexpr Rgb kGray{90, 90, 90};
constexpr Rgb kGreen{0, 160, 0};
constexpr Rgb kRed{220, 40, 40};

// Paints a rectangle into one horizontal strip [col0, col0+cols) of a CHW
// image. (u, v) are view coordinates in [0,1] with v pointing up.
void draw_rect(aug::ImageBatch& img, int col0, int cols, float u, float v, float su,
               float sv, Rgb color) {
  int h = img.h;
  int plane = img.h * img.w;
  int c0 = col0 + std::max(0, static_cast<int>(std::floor((u - su) * cols)));
  int c1 = col0 + std::min(cols, static_cast<int>(std::ceil((u + su) * cols)));
  int r0 = std::max(0, static_cast<int>(std::floor((1.0f - v - sv) * h)));
  int r1 = std::min(h, static_cast<int>(std::ceil((1.0f - v + sv) * h)));
  uint8_t* base = img.image(0);
  for (int r = r0; r < r1; ++r)
    for (int c = c0; c < c1; ++c) {
      base[r * img.w + c] = color.r;
      base[plane + r * img.w + c] = color.g;
      base[2 * plane + r * img.w + c] = color.b;
    }
}

}  // namespace

Task task_from_string(const std::string& name) {
  if (name == "reach") return Task::reach;
  if (name == "pickup") return Task::pickup;
  if (name == "move") return Task::move;
  if (name == "push") return Task::push;
  if (name == "dense_reach") return Task::dense_reach;
  raise(ErrorKind::config, "unknown task: " + name);
}

const char* task_name(Task t) {
  switch (t) {
    case Task::reach: return "reach";
    case Task::pickup: return "pickup";
    case Task::move: return "move";
    case Task::push: return "push";
    case Task::dense_reach: return "dense_reach";
  }
  return "?";
}

bool task_is_sparse(Task t) { return t != Task::dense_reach; }

ViewMode view_mode_from_string(const std::string& name) {
  if (name == "both") return ViewMode::both;
  if (name == "shoulder_only") return ViewMode::shoulder_only;
  if (name == "gripper_only") return ViewMode::gripper_only;
  raise(ErrorKind::config, "unknown view mode: " + name);
}

const char* view_mode_name(ViewMode v) {
  switch (v) {
    case ViewMode::both: return "both";
    case ViewMode::shoulder_only: return "shoulder_only";
    case ViewMode::gripper_only: return "gripper_only";
  }
  return "?";
}

RigidEnv::RigidEnv(RigidEnvConfig cfg, uint64_t seed) : cfg_(cfg), rng_(seed) {
  if (cfg_.horizon < 1) raise(ErrorKind::config, "rigid env: horizon must be >= 1");
  if (cfg_.obs_h < 8 || cfg_.obs_w < 8 || cfg_.obs_w % 2 != 0)
    raise(ErrorKind::config, "rigid env: observation size must be >= 8 with even width");
  st_.task = cfg_.task;
}

aug::ImageBatch RigidEnv::reset() {
  do {
    st_.gx = static_cast<float>(rng_.uniform(0.15, 0.85));
    st_.gy = static_cast<float>(rng_.uniform(0.15, 0.85));
    st_.gz = static_cast<float>(rng_.uniform(0.10, 0.50));
    if (cfg_.fix_block) {
      st_.bx = kFixedBlockX;
      st_.by = kFixedBlockY;
    } else {
      st_.bx = static_cast<float>(rng_.uniform(0.20, 0.80));
      st_.by = static_cast<float>(rng_.uniform(0.20, 0.80));
    }
    st_.bz = kBlockRest;
  } while (dist3(st_.gx, st_.gy, st_.gz, st_.bx, st_.by, st_.bz) < kMinSeparation);

  if (cfg_.task == Task::move || cfg_.task == Task::push) {
    do {
      st_.goal_x = static_cast<float>(rng_.uniform(0.20, 0.80));
      st_.goal_y = static_cast<float>(rng_.uniform(0.20, 0.80));
    } while (dist2(st_.goal_x, st_.goal_y, st_.bx, st_.by) < kGoalMinDist);
  } else {
    st_.goal_x = 0.5f;
    st_.goal_y = 0.5f;
  }

  st_.aperture = 1.0f;
  st_.held = false;
  st_.step_count = 0;
  st_.task = cfg_.task;
  done_ = false;
  return render();
}

void RigidEnv::set_state(const WorldState& s) {
  st_ = s;
  st_.task = cfg_.task;
  done_ = false;
}

float RigidEnv::reward_of_state(bool* success) const {
  bool ok = false;
  float r = -1.0f;
  switch (cfg_.task) {
    case Task::reach:
      ok = dist3(st_.gx, st_.gy, st_.gz, st_.bx, st_.by, st_.bz) < cfg_.reach_threshold;
      r = ok ? 0.0f : -1.0f;
      break;
    case Task::dense_reach: {
      float d = dist3(st_.gx, st_.gy, st_.gz, st_.bx, st_.by, st_.bz);
      ok = d < cfg_.reach_threshold;
      r = -d;
      break;
    }
    case Task::pickup:
      ok = st_.bz > cfg_.lift_height;
      r = ok ? 0.0f : -1.0f;
      break;
    case Task::move:
    case Task::push:
      ok = dist2(st_.bx, st_.by, st_.goal_x, st_.goal_y) < cfg_.goal_radius;
      r = ok ? 0.0f : -1.0f;
      break;
  }
  if (success) *success = ok;
  return r;
}

EnvStep RigidEnv::step(const std::vector<float>& action) {
  if (done_) raise(ErrorKind::state, "rigid env: step after episode end");
  if (action.size() != 4)
    raise(ErrorKind::shape_mismatch, "rigid env: action must have 4 components");
  for (float a : action)
    if (!(a >= -1.0f && a <= 1.0f))
      raise(ErrorKind::invalid_argument, "rigid env: action outside [-1,1]");

  float old_gx = st_.gx, old_gy = st_.gy;
  st_.gx = clipf(st_.gx + kMove * action[0], 0.0f, 1.0f);
  st_.gy = clipf(st_.gy + kMove * action[1], 0.0f, 1.0f);
  st_.gz = clipf(st_.gz + kMove * action[2], 0.0f, 1.0f);
  st_.aperture = clipf(st_.aperture + kApertureRate * action[3], 0.0f, 1.0f);

  if (st_.held) {
    if (st_.aperture > 0.5f) {
      st_.held = false;
      st_.bz = kBlockRest;
    } else {
      st_.bx = st_.gx;
      st_.by = st_.gy;
      st_.bz = st_.gz;
    }
  }
  if (!st_.held) {
    float d = dist3(st_.gx, st_.gy, st_.gz, st_.bx, st_.by, st_.bz);
    if (st_.aperture <= 0.5f && d < cfg_.grasp_radius) {
      st_.held = true;
      st_.bx = st_.gx;
      st_.by = st_.gy;
      st_.bz = st_.gz;
    } else if (st_.aperture > 0.5f && st_.gz < kPushHeight && st_.bz <= kBlockRest + 1e-6f) {
      // Contact is judged after the move, but the shove direction comes from
      // where the gripper approached, so driving through the block pushes it
      // ahead instead of tunneling past. A gripper descending (near-)centered
      // on the block never shoves it.
      float dxy = dist2(st_.gx, st_.gy, st_.bx, st_.by);
      float approach = dist2(old_gx, old_gy, st_.bx, st_.by);
      if (dxy < kPushContact && approach > kPushMinOffset) {
        float nx = (st_.bx - old_gx) / approach;
        float ny = (st_.by - old_gy) / approach;
        st_.bx = clipf(st_.gx + nx * kPushContact, 0.02f, 0.98f);
        st_.by = clipf(st_.gy + ny * kPushContact, 0.02f, 0.98f);
      }
    }
  }

  ++st_.step_count;
  ++total_steps_;

  EnvStep out;
  out.reward = reward_of_state(&out.success);
  done_ = out.success || st_.step_count >= cfg_.horizon;
  out.done = done_;
  out.obs = render();
  return out;
}

aug::ImageBatch RigidEnv::render() const {
  aug::ImageBatch img(1, 3, cfg_.obs_h, cfg_.obs_w);
  std::fill(img.data.begin(), img.data.end(), uint8_t{255});
  int half = cfg_.obs_w / 2;

  float finger_gap = 0.015f + 0.035f * st_.aperture;

  if (cfg_.view != ViewMode::gripper_only) {
    // Shoulder view: oblique parallel projection, u = x, v = 0.65 y + 0.35 z.
    auto vproj = [](float y, float z) { return 0.65f * y + 0.35f * z; };
    draw_rect(img, 0, half, st_.goal_x, vproj(st_.goal_y, 0.0f), 0.07f, 0.05f, kRed);
    float gv = vproj(st_.gy, st_.gz);
    draw_rect(img, 0, half, st_.gx - finger_gap, gv, 0.015f, 0.05f, kGray);
    draw_rect(img, 0, half, st_.gx + finger_gap, gv, 0.015f, 0.05f, kGray);
    draw_rect(img, 0, half, st_.bx, vproj(st_.by, st_.bz), 0.045f, 0.045f, kGreen);
  }

  if (cfg_.view != ViewMode::shoulder_only) {
    // Gripper view: top-down window of half-extent R centered on the gripper.
    const float R = 0.15f;
    auto lu = [&](float x) { return (x - st_.gx + R) / (2.0f * R); };
    auto lv = [&](float y) { return (y - st_.gy + R) / (2.0f * R); };
    float s = 1.0f / (2.0f * R);
    draw_rect(img, half, half, lu(st_.goal_x), lv(st_.goal_y), 0.07f * s, 0.07f * s, kRed);
    draw_rect(img, half, half, lu(st_.gx - finger_gap), lv(st_.gy), 0.015f * s, 0.05f * s,
              kGray);
    draw_rect(img, half, half, lu(st_.gx + finger_gap), lv(st_.gy), 0.015f * s, 0.05f * s,
              kGray);
    draw_rect(img, half, half, lu(st_.bx), lv(st_.by), 0.045f * s, 0.045f * s, kGreen);
  }
  return img;
}

}  // namespace ferm::env
