#include "ferm/env/soft.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "ferm/util/error.hpp"

namespace ferm::env {

namespace {

constexpr int kRopeParticles = 25;
constexpr int kClothSide = 9;
constexpr float kRopeSpan = 0.5f;
constexpr float kClothSpan = 0.3f;
constexpr float kPickRadius = 0.05f;
constexpr float kPlaceLimit = 0.3f;
constexpr int kSubsteps = 8;
constexpr int kSolverIterations = 20;
constexpr int kSolverIterationCap = 1000;
constexpr double kResidualTol = 1e-3;
constexpr float kRopeRadiusPx = 1.6f;
constexpr float kClothRadiusPx = 2.0f;

constexpr uint8_t kBackground[3] = {45, 90, 45};
constexpr uint8_t kRopeColor[3] = {225, 70, 55};
constexpr uint8_t kClothColor[3] = {70, 105, 220};
constexpr uint8_t kCornerColors[4][3] = {
    {255, 230, 40}, {240, 80, 240}, {60, 230, 230}, {255, 255, 255}};

float disc_radius_px(SoftBody b) {
  return b == SoftBody::rope ? kRopeRadiusPx : kClothRadiusPx;
}

int default_horizon(SoftBody b) { return b == SoftBody::rope ? 200 : 120; }

int default_init_steps(SoftBody b) { return b == SoftBody::rope ? 50 : 130; }

void rasterize(const std::vector<float>& pos, float radius_px,
               std::vector<uint8_t>& mask) {
  mask.assign(static_cast<size_t>(kSoftImg) * kSoftImg, 0);
  const float r2 = radius_px * radius_px;
  for (size_t k = 0; k + 1 < pos.size(); k += 2) {
    const float cx = pos[k] * kSoftImg;
    const float cy = pos[k + 1] * kSoftImg;
    const int lo_c = std::max(0, static_cast<int>(std::floor(cx - radius_px - 0.5f)));
    const int hi_c = std::min(kSoftImg - 1, static_cast<int>(std::ceil(cx + radius_px)));
    const int lo_r = std::max(0, static_cast<int>(std::floor(cy - radius_px - 0.5f)));
    const int hi_r = std::min(kSoftImg - 1, static_cast<int>(std::ceil(cy + radius_px)));
    for (int row = lo_r; row <= hi_r; ++row)
      for (int col = lo_c; col <= hi_c; ++col) {
        const float dx = static_cast<float>(col) + 0.5f - cx;
        const float dy = static_cast<float>(row) + 0.5f - cy;
        if (dx * dx + dy * dy <= r2)
          mask[static_cast<size_t>(row) * kSoftImg + col] = 1;
      }
  }
}

}  // namespace

SoftBody soft_body_from_string(const std::string& name) {
  if (name == "rope") return SoftBody::rope;
  if (name == "cloth_simplified") return SoftBody::cloth_simplified;
  if (name == "cloth") return SoftBody::cloth;
  raise(ErrorKind::invalid_argument, "unknown soft body '" + name + "'");
}

const char* soft_body_name(SoftBody b) {
  switch (b) {
    case SoftBody::rope: return "rope";
    case SoftBody::cloth_simplified: return "cloth_simplified";
    case SoftBody::cloth: return "cloth";
  }
  raise(ErrorKind::invalid_argument, "bad soft body enum");
}

double rope_mask_reward(const std::vector<uint8_t>& mask) {
  if (mask.size() != static_cast<size_t>(kSoftImg) * kSoftImg)
    raise(ErrorKind::shape_mismatch, "rope reward wants a 64x64 mask, got " +
                                         std::to_string(mask.size()) + " values");
  double total = 0.0;
  for (int row = 0; row < kSoftImg; ++row) {
    int count = 0;
    const uint8_t* line = mask.data() + static_cast<size_t>(row) * kSoftImg;
    for (int col = 0; col < kSoftImg; ++col) count += line[col] != 0;
    if (count) total += count * std::exp(-0.5 * std::abs(row - 32));
  }
  return total;
}

double mask_intersection_score(const std::vector<uint8_t>& mask,
                               const std::vector<uint8_t>& goal) {
  if (mask.size() != goal.size())
    raise(ErrorKind::shape_mismatch, "mask and goal sizes differ: " +
                                         std::to_string(mask.size()) + " vs " +
                                         std::to_string(goal.size()));
  int64_t goal_px = 0, hit = 0;
  for (size_t i = 0; i < goal.size(); ++i) {
    if (goal[i] == 0) continue;
    ++goal_px;
    hit += mask[i] != 0;
  }
  if (goal_px == 0) raise(ErrorKind::invalid_argument, "goal mask is empty");
  return static_cast<double>(hit) / static_cast<double>(goal_px);
}

double coverage_score(const std::vector<double>& series) {
  if (series.empty())
    raise(ErrorKind::invalid_argument, "coverage of an empty series");
  std::vector<double> sorted = series;
  std::sort(sorted.begin(), sorted.end(), std::greater<double>());
  const size_t k = (sorted.size() + 4) / 5;
  double sum = 0.0;
  for (size_t i = 0; i < k; ++i) sum += sorted[i];
  return sum / static_cast<double>(k);
}

SoftEnv::SoftEnv(SoftEnvConfig cfg, uint64_t seed) : cfg_(cfg), rng_(seed) {
  horizon_ = cfg.horizon < 0 ? default_horizon(cfg.body) : cfg.horizon;
  init_steps_ = cfg.init_random_steps < 0 ? default_init_steps(cfg.body)
                                          : cfg.init_random_steps;
  if (horizon_ <= 0)
    raise(ErrorKind::invalid_argument, "horizon must be positive");
  rest_shape();
  build_constraints();
  goal_mask_ = body_mask();
}

void SoftEnv::rest_shape() {
  if (cfg_.body == SoftBody::rope) {
    pos_.resize(2 * kRopeParticles);
    for (int i = 0; i < kRopeParticles; ++i) {
      pos_[2 * i] = 0.25f + kRopeSpan * static_cast<float>(i) / (kRopeParticles - 1);
      pos_[2 * i + 1] = 0.5f;
    }
  } else {
    pos_.resize(2 * kClothSide * kClothSide);
    for (int r = 0; r < kClothSide; ++r)
      for (int c = 0; c < kClothSide; ++c) {
        const int k = r * kClothSide + c;
        pos_[2 * k] = 0.35f + kClothSpan * static_cast<float>(c) / (kClothSide - 1);
        pos_[2 * k + 1] = 0.35f + kClothSpan * static_cast<float>(r) / (kClothSide - 1);
      }
  }
}

void SoftEnv::build_constraints() {
  constraints_.clear();
  // Rest lengths come from the rest-shape positions themselves so the rest
  // configuration satisfies every constraint exactly.
  auto dist = [this](int i, int j) {
    const double ux = static_cast<double>(pos_[2 * i]) - pos_[2 * j];
    const double uy = static_cast<double>(pos_[2 * i + 1]) - pos_[2 * j + 1];
    return std::sqrt(ux * ux + uy * uy);
  };
  auto link = [&](int i, int j) { constraints_.push_back({i, j, dist(i, j)}); };
  if (cfg_.body == SoftBody::rope) {
    for (int i = 0; i + 1 < kRopeParticles; ++i) link(i, i + 1);
    return;
  }
  auto id = [](int r, int c) { return r * kClothSide + c; };
  for (int r = 0; r < kClothSide; ++r)
    for (int c = 0; c < kClothSide; ++c) {
      if (c + 1 < kClothSide) link(id(r, c), id(r, c + 1));
      if (r + 1 < kClothSide) link(id(r, c), id(r + 1, c));
      if (r + 1 < kClothSide && c + 1 < kClothSide) {
        link(id(r, c), id(r + 1, c + 1));
        link(id(r, c + 1), id(r + 1, c));
      }
    }
}

aug::ImageBatch SoftEnv::reset() {
  rest_shape();
  scramble(init_steps_);
  step_count_ = 0;
  done_ = false;
  return render();
}

void SoftEnv::scramble(int n) {
  for (int i = 0; i < n; ++i) {
    if (cfg_.body == SoftBody::cloth_simplified) {
      const int corner = static_cast<int>(rng_.uniform_int(4));
      const float dx = static_cast<float>(rng_.uniform(-kPlaceLimit, kPlaceLimit));
      const float dy = static_cast<float>(rng_.uniform(-kPlaceLimit, kPlaceLimit));
      apply_pick_place(0.0f, 0.0f, dx, dy, corner_particles()[corner]);
    } else {
      const float px = static_cast<float>(rng_.uniform(0.0, 1.0));
      const float py = static_cast<float>(rng_.uniform(0.0, 1.0));
      const float dx = static_cast<float>(rng_.uniform(-kPlaceLimit, kPlaceLimit));
      const float dy = static_cast<float>(rng_.uniform(-kPlaceLimit, kPlaceLimit));
      apply_pick_place(px, py, dx, dy, -1);
    }
  }
}

SoftStep SoftEnv::step(const PickPlaceAction& a) {
  if (done_)
    raise(ErrorKind::state, "episode finished; call reset before stepping");
  if (!std::isfinite(a.place_dx) || !std::isfinite(a.place_dy))
    raise(ErrorKind::invalid_argument, "placement displacement must be finite");
  const float dx = std::clamp(a.place_dx, -kPlaceLimit, kPlaceLimit);
  const float dy = std::clamp(a.place_dy, -kPlaceLimit, kPlaceLimit);

  bool picked = false;
  if (cfg_.body == SoftBody::cloth_simplified) {
    if (a.corner < 0 || a.corner > 3)
      raise(ErrorKind::invalid_argument,
            "cloth_simplified picks a corner index in 0..3, got " +
                std::to_string(a.corner));
    picked = apply_pick_place(0.0f, 0.0f, dx, dy, corner_particles()[a.corner]);
  } else {
    if (a.corner != -1)
      raise(ErrorKind::invalid_argument,
            "corner picks are only valid on cloth_simplified");
    if (!std::isfinite(a.pick_x) || !std::isfinite(a.pick_y) || a.pick_x < 0.0f ||
        a.pick_x > 1.0f || a.pick_y < 0.0f || a.pick_y > 1.0f)
      raise(ErrorKind::invalid_argument, "pick point must lie in [0,1]^2");
    picked = apply_pick_place(a.pick_x, a.pick_y, dx, dy, -1);
  }

  ++step_count_;
  done_ = step_count_ >= horizon_;
  SoftStep out;
  out.obs = render();
  out.reward = reward();
  out.done = done_;
  out.picked = picked;
  return out;
}

bool SoftEnv::apply_pick_place(float px, float py, float dx, float dy,
                               int particle) {
  int grabbed = particle;
  if (grabbed < 0) {
    float best = std::numeric_limits<float>::infinity();
    for (int i = 0; i < particle_count(); ++i) {
      const float ex = pos_[2 * i] - px;
      const float ey = pos_[2 * i + 1] - py;
      const float d2 = ex * ex + ey * ey;
      if (d2 < best) {
        best = d2;
        grabbed = i;
      }
    }
    if (best > kPickRadius * kPickRadius) return false;
  }
  const float sx = pos_[2 * grabbed];
  const float sy = pos_[2 * grabbed + 1];
  const float tx = std::clamp(sx + dx, 0.0f, 1.0f);
  const float ty = std::clamp(sy + dy, 0.0f, 1.0f);
  plan_sweep(grabbed);
  for (int s = 1; s <= kSubsteps; ++s) {
    const float frac = static_cast<float>(s) / kSubsteps;
    pos_[2 * grabbed] = sx + (tx - sx) * frac;
    pos_[2 * grabbed + 1] = sy + (ty - sy) * frac;
    solve();
  }
  return true;
}

void SoftEnv::plan_sweep(int pinned) {
  const int n = particle_count();
  sweep_.resize(constraints_.size());
  for (size_t k = 0; k < sweep_.size(); ++k) sweep_[k] = static_cast<int>(k);
  level_.assign(n, 0);
  if (pinned < 0) return;

  std::vector<std::vector<int>> adj(n);
  for (const Constraint& c : constraints_) {
    adj[c.a].push_back(c.b);
    adj[c.b].push_back(c.a);
  }
  level_.assign(n, n);
  level_[pinned] = 0;
  std::vector<int> frontier{pinned};
  for (size_t head = 0; head < frontier.size(); ++head) {
    const int v = frontier[head];
    for (int w : adj[v])
      if (level_[w] > level_[v] + 1) {
        level_[w] = level_[v] + 1;
        frontier.push_back(w);
      }
  }
  std::stable_sort(sweep_.begin(), sweep_.end(), [this](int x, int y) {
    const Constraint& cx = constraints_[x];
    const Constraint& cy = constraints_[y];
    return std::min(level_[cx.a], level_[cx.b]) <
           std::min(level_[cy.a], level_[cy.b]);
  });
}

// Sweeps run outward from the grabbed particle; the endpoint nearer the grab
// leads and only the farther one moves, so a drag crosses the body in one
// pass instead of diffusing link by link. Equidistant endpoints split the
// correction, which is also the no-grab behaviour.
void SoftEnv::solve() {
  for (int iter = 0; iter < kSolverIterationCap; ++iter) {
    for (int k : sweep_) {
      const Constraint& c = constraints_[k];
      const float ax = pos_[2 * c.a], ay = pos_[2 * c.a + 1];
      const float bx = pos_[2 * c.b], by = pos_[2 * c.b + 1];
      float ux = ax - bx, uy = ay - by;
      float d = std::sqrt(ux * ux + uy * uy);
      if (d < 1e-9f) {
        ux = 1.0f;
        uy = 0.0f;
        d = 1.0f;
      }
      const float err = static_cast<float>(d - c.rest) / d;
      const int la = level_[c.a], lb = level_[c.b];
      if (la < lb) {
        pos_[2 * c.b] += err * ux;
        pos_[2 * c.b + 1] += err * uy;
      } else if (lb < la) {
        pos_[2 * c.a] -= err * ux;
        pos_[2 * c.a + 1] -= err * uy;
      } else {
        const float half = 0.5f * err;
        pos_[2 * c.a] -= half * ux;
        pos_[2 * c.a + 1] -= half * uy;
        pos_[2 * c.b] += half * ux;
        pos_[2 * c.b + 1] += half * uy;
      }
    }
    for (auto& v : pos_) v = std::clamp(v, 0.0f, 1.0f);
    if (iter + 1 >= kSolverIterations && max_segment_violation() <= kResidualTol)
      break;
  }
}

double SoftEnv::max_segment_violation() const {
  double worst = 0.0;
  for (const Constraint& c : constraints_) {
    const double ux = static_cast<double>(pos_[2 * c.a]) - pos_[2 * c.b];
    const double uy = static_cast<double>(pos_[2 * c.a + 1]) - pos_[2 * c.b + 1];
    const double d = std::sqrt(ux * ux + uy * uy);
    worst = std::max(worst, std::abs(d - c.rest) / c.rest);
  }
  return worst;
}

std::vector<uint8_t> SoftEnv::body_mask() const {
  std::vector<uint8_t> mask;
  rasterize(pos_, disc_radius_px(cfg_.body), mask);
  return mask;
}

float SoftEnv::particle_radius_px() const { return disc_radius_px(cfg_.body); }

float SoftEnv::reward() const {
  if (cfg_.body == SoftBody::rope)
    return static_cast<float>(rope_mask_reward(body_mask()));
  return static_cast<float>(mask_intersection_score(body_mask(), goal_mask_));
}

double SoftEnv::coverage() const {
  return mask_intersection_score(body_mask(), goal_mask_);
}

std::array<int, 4> SoftEnv::corner_particles() const {
  if (cfg_.body == SoftBody::rope)
    raise(ErrorKind::invalid_argument, "rope has no corner picks");
  const int last = kClothSide - 1;
  return {0, last, last * kClothSide, last * kClothSide + last};
}

aug::ImageBatch SoftEnv::render() const {
  aug::ImageBatch img(1, 3, kSoftImg, kSoftImg);
  const std::vector<uint8_t> mask = body_mask();
  const uint8_t* body = cfg_.body == SoftBody::rope ? kRopeColor : kClothColor;
  const size_t plane = static_cast<size_t>(kSoftImg) * kSoftImg;
  for (size_t i = 0; i < plane; ++i) {
    const uint8_t* color = mask[i] ? body : kBackground;
    img.data[i] = color[0];
    img.data[plane + i] = color[1];
    img.data[2 * plane + i] = color[2];
  }
  if (cfg_.body == SoftBody::cloth_simplified) {
    const auto corners = corner_particles();
    for (int k = 0; k < 4; ++k) {
      const int p = corners[k];
      const int col = std::clamp(static_cast<int>(pos_[2 * p] * kSoftImg), 0,
                                 kSoftImg - 1);
      const int row = std::clamp(static_cast<int>(pos_[2 * p + 1] * kSoftImg), 0,
                                 kSoftImg - 1);
      const size_t at = static_cast<size_t>(row) * kSoftImg + col;
      img.data[at] = kCornerColors[k][0];
      img.data[plane + at] = kCornerColors[k][1];
      img.data[2 * plane + at] = kCornerColors[k][2];
    }
  }
  return img;
}

}  // namespace ferm::env
