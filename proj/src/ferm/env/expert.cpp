#include "ferm/env/expert.hpp"

#include <algorithm>
#include <cmath>

#include "ferm/augment/augment.hpp"
#include "ferm/grad/ops.hpp"
#include "ferm/grad/optim.hpp"
#include "ferm/nets/init.hpp"
#include "ferm/util/error.hpp"

namespace ferm::env {

namespace {

constexpr float kMove = 0.05f;

float clip1(float v) { return std::min(1.0f, std::max(-1.0f, v)); }

std::vector<float> drive_to(const WorldState& s, float tx, float ty, float tz,
                            float grip) {
  return {clip1((tx - s.gx) / kMove), clip1((ty - s.gy) / kMove),
          clip1((tz - s.gz) / kMove), grip};
}

std::vector<float> grasp_and_carry(const WorldState& s, float carry_x, float carry_y,
                                   float carry_z) {
  if (s.held) return drive_to(s, carry_x, carry_y, carry_z, -1.0f);
  float dx = s.bx - s.gx, dy = s.by - s.gy, dz = s.bz - s.gz;
  float dxy = std::sqrt(dx * dx + dy * dy);
  float d3 = std::sqrt(dx * dx + dy * dy + dz * dz);
  if (dxy > 0.008f) return drive_to(s, s.bx, s.by, 0.15f, 1.0f);
  return drive_to(s, s.bx, s.by, s.bz, d3 < 0.035f ? -1.0f : 1.0f);
}

}  // namespace

std::vector<float> expert_action(const WorldState& s, Task task) {
  switch (task) {
    case Task::reach:
    case Task::dense_reach:
      return drive_to(s, s.bx, s.by, s.bz, 0.0f);
    case Task::pickup:
      return grasp_and_carry(s, s.gx, s.gy, 0.25f);
    case Task::move:
      return grasp_and_carry(s, s.goal_x, s.goal_y, 0.18f);
    case Task::push: {
      float dx = s.bx - s.goal_x, dy = s.by - s.goal_y;
      float d = std::sqrt(dx * dx + dy * dy);
      if (d < 1e-6f) return {0.0f, 0.0f, 0.0f, 1.0f};
      float cx = s.bx + 0.04f * dx / d;
      float cy = s.by + 0.04f * dy / d;
      if (s.gz > 0.05f) {
        float ex = cx - s.gx, ey = cy - s.gy;
        if (std::sqrt(ex * ex + ey * ey) > 0.02f) return drive_to(s, cx, cy, 0.15f, 1.0f);
        return drive_to(s, cx, cy, 0.03f, 1.0f);
      }
      return drive_to(s, s.goal_x, s.goal_y, 0.03f, 1.0f);
    }
  }
  raise(ErrorKind::invalid_argument, "expert: unknown task");
}

CollectResult collect_demonstrations(RigidEnv& env, int n) {
  if (n < 0) raise(ErrorKind::invalid_argument, "collect: negative demo count");
  CollectResult out;
  if (n == 0) return out;
  int max_attempts = 10 * n;
  while (static_cast<int>(out.episodes.size()) < n) {
    if (out.attempts >= max_attempts)
      raise(ErrorKind::threshold, "collect: expert failed to reach the requested successes");
    ++out.attempts;
    replay::Episode ep;
    aug::ImageBatch obs = env.reset();
    bool success = false;
    while (true) {
      std::vector<float> a = expert_action(env.state(), env.config().task);
      EnvStep res = env.step(a);
      replay::Transition t;
      t.obs = obs.data;
      t.action = a;
      t.reward = res.reward;
      t.next_obs = res.obs.data;
      t.done = res.done;
      t.is_demo = true;
      ep.push_back(std::move(t));
      success = success || res.success;
      if (res.done) break;
      obs = std::move(res.obs);
    }
    if (success) out.episodes.push_back(std::move(ep));
  }
  return out;
}

BcPolicy BcPolicy::init(int in_c, int img, int act_dim, Rng& rng) {
  if (act_dim <= 0) raise(ErrorKind::invalid_argument, "bc: bad action dim");
  BcPolicy p;
  p.act_dim = act_dim;
  p.enc = nets::Encoder::init(in_c, img, rng);
  const int hidden = 256;
  p.w1 = nets::orthogonal_init(nets::kLatentDim, hidden, rng);
  p.b1 = grad::Tensor<float>::zeros({hidden});
  p.w2 = nets::orthogonal_init(hidden, hidden, rng);
  p.b2 = grad::Tensor<float>::zeros({hidden});
  p.w3 = nets::orthogonal_init(hidden, act_dim, rng);
  p.b3 = grad::Tensor<float>::zeros({act_dim});
  return p;
}

grad::Tensor<float> BcPolicy::forward(const grad::Tensor<float>& obs) const {
  auto z = enc.forward(obs);
  auto h = grad::dense_forward(z, w1, b1, grad::Act::relu);
  h = grad::dense_forward(h, w2, b2, grad::Act::relu);
  h = grad::dense_forward(h, w3, b3, grad::Act::none);
  return grad::tanh_act(h);
}

std::vector<grad::Tensor<float>> BcPolicy::params() {
  auto all = enc.params();
  for (auto& t : {w1, b1, w2, b2, w3, b3}) all.push_back(t);
  return all;
}

std::vector<double> bc_train(BcPolicy& policy, const std::vector<replay::Episode>& demos,
                             const BcConfig& cfg, Rng& rng) {
  std::vector<const replay::Transition*> flat;
  for (const auto& ep : demos)
    for (const auto& t : ep) flat.push_back(&t);
  if (flat.empty()) raise(ErrorKind::invalid_argument, "bc: no demonstrations");

  for (auto& p : policy.params()) p.set_requires_grad(true);
  grad::AdamConfig<float> ac;
  ac.lr = cfg.lr;
  grad::Adam<float> opt(policy.params(), ac);

  const int c = policy.enc.in_c;
  int side = static_cast<int>(std::lround(
      std::sqrt(static_cast<double>(flat[0]->obs.size()) / c)));
  if (static_cast<size_t>(side) * side * c != flat[0]->obs.size())
    raise(ErrorKind::shape_mismatch, "bc: demo frames are not square");

  std::vector<double> losses;
  losses.reserve(static_cast<size_t>(cfg.iterations));
  for (int it = 0; it < cfg.iterations; ++it) {
    aug::ImageBatch frames(cfg.batch, c, side, side);
    auto actions = grad::Tensor<float>::zeros({cfg.batch, policy.act_dim});
    for (int i = 0; i < cfg.batch; ++i) {
      const replay::Transition* t =
          flat[static_cast<size_t>(rng.uniform_u64(flat.size()))];
      std::copy(t->obs.begin(), t->obs.end(), frames.image(i));
      for (int a = 0; a < policy.act_dim; ++a)
        actions.data()[static_cast<size_t>(i) * policy.act_dim + a] =
            t->action[static_cast<size_t>(a)];
    }
    auto x = aug::random_crop_to_float(frames, cfg.crop, cfg.crop, rng);

    grad::Tape<float> tape;
    {
      grad::TapeScope<float> scope(tape);
      auto pred = policy.forward(x);
      auto diff = grad::sub(pred, actions);
      auto loss = grad::mean_all(grad::mul(diff, diff));
      opt.zero_grad();
      tape.backward(loss);
      losses.push_back(static_cast<double>(loss.item()));
    }
    opt.step();
  }
  return losses;
}

double bc_eval(BcPolicy& policy, RigidEnv& env, int episodes, int crop) {
  if (episodes <= 0) raise(ErrorKind::invalid_argument, "bc eval: episode count");
  int hits = 0;
  for (int e = 0; e < episodes; ++e) {
    aug::ImageBatch obs = env.reset();
    bool success = false;
    while (true) {
      grad::NoGradScope<float> ng;
      auto x = aug::center_crop_to_float(obs, crop, crop);
      auto pred = policy.forward(x);
      std::vector<float> a(pred.data().begin(), pred.data().end());
      EnvStep res = env.step(a);
      success = success || res.success;
      if (res.done) break;
      obs = std::move(res.obs);
    }
    if (success) ++hits;
  }
  return static_cast<double>(hits) / episodes;
}

}  // namespace ferm::env
