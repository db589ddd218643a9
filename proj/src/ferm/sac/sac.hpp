#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "ferm/augment/augment.hpp"
#include "ferm/env/env.hpp"
#include "ferm/grad/ops.hpp"
#include "ferm/grad/optim.hpp"
#include "ferm/nets/nets.hpp"
#include "ferm/replay/replay.hpp"
#include "ferm/util/csv.hpp"
#include "ferm/util/rng.hpp"

namespace ferm::sac {

using grad::Tensor;

struct SacConfig {
  float gamma = 0.99f;
  float init_alpha = 0.1f;
  float lr = 1e-4f;
  float alpha_lr = 1e-4f;
  float critic_tau = 0.01f;
  float encoder_tau = 0.05f;
  int target_update_freq = 2;
  int batch_size = 128;
  int crop = 84;
  bool augmentation = true;
};

// Minibatch after cropping, ready for the gradient ops. done holds 0/1 floats.
struct Batch {
  Tensor<float> obs;
  Tensor<float> action;
  Tensor<float> next_obs;
  std::vector<float> reward;
  std::vector<float> done;
};

enum class ActionMode { stochastic, deterministic };

struct ActionSample {
  std::vector<float> action;
  float log_prob = 0.0f;
};

struct UpdateStats {
  float critic_loss = 0.0f;
  float actor_loss = 0.0f;
  float alpha_loss = 0.0f;
  float alpha = 0.0f;
};

// Tanh-squashed Gaussian reparameterized sample. mu and log_sigma are [B,A];
// returns the squashed action, its per-row log density (with the
// change-of-variables correction computed in the stable form
// log(1 - tanh(u)^2) = 2*(log 2 - u - softplus(-2u))), and the pre-squash u.
// Deterministic mode evaluates at u = mu. Gradients flow through mu and
// log_sigma when recording is active; the noise itself is constant.
struct PolicyOut {
  Tensor<float> action;
  Tensor<float> log_prob;
  Tensor<float> pre_tanh;
};
PolicyOut squashed_gaussian_sample(const Tensor<float>& mu, const Tensor<float>& log_sigma,
                                   bool stochastic, Rng* rng);

// y_i = r_i + gamma * (1 - d_i) * (min(q1_i, q2_i) - alpha * logp_i).
std::vector<float> td_target_rows(const std::vector<float>& q1, const std::vector<float>& q2,
                                  const std::vector<float>& logp,
                                  const std::vector<float>& reward,
                                  const std::vector<float>& done, float alpha, float gamma);

// Independent rng streams used by the training loop, all derived from one run
// seed so reruns are reproducible.
struct TrainRngs {
  Rng action;
  Rng replay;
  Rng crop;

  static TrainRngs derive(uint64_t seed) {
    return TrainRngs{Rng::derive(seed, stream::action), Rng::derive(seed, stream::replay),
                     Rng::derive(seed, stream::crop)};
  }
};

// Soft actor-critic over a shared pixel encoder: twin critics with EMA
// targets, tanh-Gaussian actor, learned entropy temperature. The encoder is
// updated only by the critic loss; actor gradients see detached latents.
class SacAgent {
 public:
  SacAgent(nets::Encoder encoder, nets::Encoder target_encoder, int act_dim,
           const SacConfig& cfg, Rng& rng);

  // obs: one image, already cropped to the network input size.
  ActionSample sample_action(const aug::ImageBatch& obs, ActionMode mode, Rng& rng);

  Batch make_batch(const replay::ReplayBuffer& buffer, const std::vector<int64_t>& idx,
                   Rng& crop_rng) const;

  // Bootstrap target with a freshly sampled next action; never records grads.
  std::vector<float> compute_td_target(const Batch& batch, Rng& action_rng);

  // One Adam step on the twin critics and the encoder.
  float critic_update(const Batch& batch, Rng& action_rng);

  // One Adam step on the actor, then one on log alpha.
  std::pair<float, float> actor_and_alpha_update(const Batch& batch, Rng& action_rng);

  // Full gradient round on a sampled batch; EMA targets every
  // target_update_freq rounds (critic tau 0.01, encoder tau 0.05).
  UpdateStats update(const replay::ReplayBuffer& buffer, TrainRngs& rngs);

  void update_targets();

  float alpha() const;
  int act_dim() const { return act_dim_; }
  int64_t update_count() const { return update_count_; }
  const SacConfig& config() const { return cfg_; }

  nets::Encoder& encoder() { return encoder_; }
  nets::Encoder& target_encoder() { return target_encoder_; }
  nets::Actor& actor() { return actor_; }
  nets::Critic& critic() { return critic_; }
  nets::Critic& target_critic() { return target_critic_; }
  Tensor<float>& log_alpha() { return log_alpha_; }

  // Every learnable and target tensor, for checkpointing.
  nets::NamedTensors named();

 private:
  SacConfig cfg_;
  int act_dim_ = 0;
  nets::Encoder encoder_, target_encoder_;
  nets::Actor actor_;
  nets::Critic critic_, target_critic_;
  Tensor<float> log_alpha_;
  grad::Adam<float> critic_opt_, actor_opt_, alpha_opt_;
  int64_t update_count_ = 0;
};

struct TrainConfig {
  int total_steps = 30000;
  int init_random_steps = 1000;
};

struct EpisodeRecord {
  int episode = 0;
  int64_t end_step = 0;
  float episode_return = 0.0f;
  bool success = false;
};

struct TrainResult {
  int episodes = 0;
  int64_t first_success_step = -1;
  int64_t env_steps = 0;
  std::vector<EpisodeRecord> completed;
};

// Online loop: act stochastically, push the transition, then one critic and
// one actor/alpha update per env step (after the initial uniform-random
// steps). Writes one metrics row per env step when a writer is given, with
// columns step, episode, episode_return, success, critic_loss, actor_loss,
// alpha, fps. The buffer must be seeded (an empty seed is allowed).
TrainResult train(SacAgent& agent, env::EnvBase& env, replay::ReplayBuffer& buffer,
                  const TrainConfig& cfg, TrainRngs& rngs, CsvWriter* metrics);

inline const std::vector<std::string>& metrics_columns() {
  static const std::vector<std::string> cols = {
      "step", "episode", "episode_return", "success", "critic_loss", "actor_loss",
      "alpha", "fps"};
  return cols;
}

struct EvalResult {
  double success_rate = 0.0;
  double mean_return = 0.0;
};

// Deterministic policy (tanh of the mean) on center-cropped observations.
EvalResult evaluate(SacAgent& agent, env::EnvBase& env, int episodes);

}  // namespace ferm::sac
