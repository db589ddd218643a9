#include "ferm/sac/sac.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>

#include "ferm/util/error.hpp"

namespace ferm::sac {

namespace {

constexpr float kLog2 = 0.6931471805599453f;
constexpr float kHalfLog2Pi = 0.9189385332046727f;

void check_finite(float v, const char* what, int64_t update) {
  if (!std::isfinite(v))
    raise(ErrorKind::numeric, std::string(what) + " is not finite at update " +
                                  std::to_string(update) + " (value " + format_float(v) + ")");
}

}  // namespace

PolicyOut squashed_gaussian_sample(const Tensor<float>& mu, const Tensor<float>& log_sigma,
                                   bool stochastic, Rng* rng) {
  if (!mu.defined() || !log_sigma.defined())
    raise(ErrorKind::invalid_argument, "policy sample: undefined inputs");
  if (mu.ndim() != 2 || mu.shape() != log_sigma.shape())
    raise(ErrorKind::shape_mismatch, "policy sample: mu and log_sigma must both be [B,A]");
  if (stochastic && rng == nullptr)
    raise(ErrorKind::invalid_argument, "policy sample: stochastic mode needs an rng");
  for (float v : mu.data())
    if (!std::isfinite(v)) raise(ErrorKind::numeric, "policy sample: non-finite mean");
  for (float v : log_sigma.data())
    if (!std::isfinite(v)) raise(ErrorKind::numeric, "policy sample: non-finite log sigma");

  int b = mu.dim(0), a = mu.dim(1);
  auto xi = Tensor<float>::zeros({b, a});
  if (stochastic)
    for (auto& v : xi.data()) v = rng->normalf();

  Tensor<float> u = stochastic ? grad::add(mu, grad::mul(grad::exp_elem(log_sigma), xi)) : mu;
  auto action = grad::tanh_act(u);

  // Gaussian log density at the reparameterized point: since u = mu + sigma*xi
  // with xi held constant, the quadratic term reduces to -xi^2/2 and only
  // -log sigma carries gradient.
  auto gconst = Tensor<float>::zeros({b, a});
  {
    const auto& xd = xi.data();
    auto& gd = gconst.data();
    for (size_t i = 0; i < gd.size(); ++i) gd[i] = -0.5f * xd[i] * xd[i] - kHalfLog2Pi;
  }
  auto gauss = grad::add(grad::neg(log_sigma), gconst);
  auto corr =
      grad::scale(grad::sub(grad::add_scalar(grad::neg(u), kLog2),
                            grad::softplus(grad::scale(u, -2.0f))),
                  2.0f);
  auto log_prob = grad::row_sum(grad::sub(gauss, corr));
  return {action, log_prob, u};
}

std::vector<float> td_target_rows(const std::vector<float>& q1, const std::vector<float>& q2,
                                  const std::vector<float>& logp,
                                  const std::vector<float>& reward,
                                  const std::vector<float>& done, float alpha, float gamma) {
  size_t n = q1.size();
  if (q2.size() != n || logp.size() != n || reward.size() != n || done.size() != n)
    raise(ErrorKind::shape_mismatch, "td target: row counts differ");
  std::vector<float> y(n);
  for (size_t i = 0; i < n; ++i) {
    float v = std::min(q1[i], q2[i]) - alpha * logp[i];
    y[i] = reward[i] + gamma * (1.0f - done[i]) * v;
  }
  return y;
}

SacAgent::SacAgent(nets::Encoder encoder, nets::Encoder target_encoder, int act_dim,
                   const SacConfig& cfg, Rng& rng)
    : cfg_(cfg),
      act_dim_(act_dim),
      encoder_(std::move(encoder)),
      target_encoder_(std::move(target_encoder)),
      actor_(nets::Actor::init(act_dim, rng)),
      critic_(nets::Critic::init(act_dim, rng)),
      target_critic_(critic_.clone()) {
  if (act_dim <= 0) raise(ErrorKind::invalid_argument, "sac: action dim must be positive");
  if (!(cfg.init_alpha > 0.0f))
    raise(ErrorKind::invalid_argument, "sac: initial temperature must be positive");
  if (cfg.target_update_freq <= 0)
    raise(ErrorKind::invalid_argument, "sac: target update frequency must be positive");
  if (cfg.batch_size <= 0) raise(ErrorKind::invalid_argument, "sac: batch size must be positive");
  if (encoder_.img != cfg.crop)
    raise(ErrorKind::invalid_argument, "sac: encoder input size differs from crop size");
  if (target_encoder_.img != encoder_.img || target_encoder_.in_c != encoder_.in_c)
    raise(ErrorKind::invalid_argument, "sac: target encoder geometry differs from online");

  log_alpha_ = Tensor<float>::scalar(std::log(cfg.init_alpha));
  log_alpha_.set_requires_grad(true);
  encoder_.set_requires_grad(true);
  actor_.set_requires_grad(true);
  critic_.set_requires_grad(true);
  target_encoder_.set_requires_grad(false);
  target_critic_.set_requires_grad(false);

  auto cparams = encoder_.params();
  auto crit = critic_.params();
  cparams.insert(cparams.end(), crit.begin(), crit.end());
  grad::AdamConfig<float> net_cfg{cfg.lr, 0.9f, 0.999f, 1e-8f};
  critic_opt_ = grad::Adam<float>(std::move(cparams), net_cfg);
  actor_opt_ = grad::Adam<float>(actor_.params(), net_cfg);
  alpha_opt_ = grad::Adam<float>({log_alpha_}, {cfg.alpha_lr, 0.5f, 0.999f, 1e-8f});
}

float SacAgent::alpha() const { return std::exp(log_alpha_.data()[0]); }

ActionSample SacAgent::sample_action(const aug::ImageBatch& obs, ActionMode mode, Rng& rng) {
  if (obs.n != 1)
    raise(ErrorKind::invalid_argument, "sample_action expects a single observation");
  grad::NoGradScope<float> ng;
  auto x = aug::to_float(obs);
  auto latent = encoder_.forward(x);
  auto [mu, log_sigma] = actor_.forward(latent);
  PolicyOut p =
      squashed_gaussian_sample(mu, log_sigma, mode == ActionMode::stochastic, &rng);
  return {p.action.data(), p.log_prob.data()[0]};
}

Batch SacAgent::make_batch(const replay::ReplayBuffer& buffer, const std::vector<int64_t>& idx,
                           Rng& crop_rng) const {
  if (idx.empty()) raise(ErrorKind::invalid_argument, "make_batch: empty index list");
  const auto spec = buffer.obs_spec();
  int b = static_cast<int>(idx.size());
  aug::ImageBatch ob(b, spec.c, spec.h, spec.w);
  aug::ImageBatch nb(b, spec.c, spec.h, spec.w);
  auto action = Tensor<float>::zeros({b, act_dim_});
  std::vector<float> reward(static_cast<size_t>(b)), done(static_cast<size_t>(b));
  for (int i = 0; i < b; ++i) {
    const auto& t = buffer.at(static_cast<size_t>(idx[static_cast<size_t>(i)]));
    std::copy(t.obs.begin(), t.obs.end(), ob.image(i));
    std::copy(t.next_obs.begin(), t.next_obs.end(), nb.image(i));
    if (static_cast<int>(t.action.size()) != act_dim_)
      raise(ErrorKind::shape_mismatch, "make_batch: stored action dim differs");
    std::copy(t.action.begin(), t.action.end(), action.ptr() + i * act_dim_);
    reward[static_cast<size_t>(i)] = t.reward;
    done[static_cast<size_t>(i)] = t.done ? 1.0f : 0.0f;
  }
  Batch out;
  if (cfg_.augmentation) {
    out.obs = aug::random_crop_to_float(ob, cfg_.crop, cfg_.crop, crop_rng);
    out.next_obs = aug::random_crop_to_float(nb, cfg_.crop, cfg_.crop, crop_rng);
  } else {
    out.obs = aug::center_crop_to_float(ob, cfg_.crop, cfg_.crop);
    out.next_obs = aug::center_crop_to_float(nb, cfg_.crop, cfg_.crop);
  }
  out.action = std::move(action);
  out.reward = std::move(reward);
  out.done = std::move(done);
  return out;
}

std::vector<float> SacAgent::compute_td_target(const Batch& batch, Rng& action_rng) {
  grad::NoGradScope<float> ng;
  auto latent_pi = encoder_.forward(batch.next_obs);
  auto [mu, log_sigma] = actor_.forward(latent_pi);
  PolicyOut next = squashed_gaussian_sample(mu, log_sigma, true, &action_rng);
  auto latent_t = target_encoder_.forward(batch.next_obs);
  auto [q1, q2] = target_critic_.forward(latent_t, next.action);
  return td_target_rows(q1.data(), q2.data(), next.log_prob.data(), batch.reward, batch.done,
                        alpha(), cfg_.gamma);
}

float SacAgent::critic_update(const Batch& batch, Rng& action_rng) {
  auto y_rows = compute_td_target(batch, action_rng);
  auto y = Tensor<float>::from_data({batch.obs.dim(0), 1}, std::move(y_rows));
  float loss_v = 0.0f;
  {
    grad::Tape<float> tape;
    grad::TapeScope<float> scope(tape);
    auto latent = encoder_.forward(batch.obs);
    auto [q1, q2] = critic_.forward(latent, batch.action);
    auto d1 = grad::sub(q1, y);
    auto d2 = grad::sub(q2, y);
    auto loss = grad::scale(
        grad::add(grad::mean_all(grad::mul(d1, d1)), grad::mean_all(grad::mul(d2, d2))), 0.5f);
    loss_v = loss.item();
    check_finite(loss_v, "critic loss", update_count_);
    critic_opt_.zero_grad();
    tape.backward(loss);
  }
  critic_opt_.step();
  return loss_v;
}

std::pair<float, float> SacAgent::actor_and_alpha_update(const Batch& batch, Rng& action_rng) {
  Tensor<float> latent;
  {
    grad::NoGradScope<float> ng;
    latent = encoder_.forward(batch.obs);
  }
  float alpha_v = alpha();
  float actor_loss_v = 0.0f;
  Tensor<float> logp_detached;
  {
    grad::Tape<float> tape;
    grad::TapeScope<float> scope(tape);
    auto [mu, log_sigma] = actor_.forward(latent);
    PolicyOut p = squashed_gaussian_sample(mu, log_sigma, true, &action_rng);
    auto [q1, q2] = critic_.forward(latent, p.action);
    auto min_q = grad::minimum(q1, q2);
    auto loss = grad::mean_all(grad::sub(grad::scale(p.log_prob, alpha_v), min_q));
    actor_loss_v = loss.item();
    check_finite(actor_loss_v, "actor loss", update_count_);
    logp_detached = p.log_prob.detach();
    actor_opt_.zero_grad();
    tape.backward(loss);
  }
  actor_opt_.step();

  float alpha_loss_v = 0.0f;
  {
    grad::Tape<float> tape;
    grad::TapeScope<float> scope(tape);
    auto gap = grad::add_scalar(logp_detached, -static_cast<float>(act_dim_));
    auto loss = grad::mean_all(grad::mul_scalar_t(gap, grad::neg(log_alpha_)));
    alpha_loss_v = loss.item();
    check_finite(alpha_loss_v, "alpha loss", update_count_);
    alpha_opt_.zero_grad();
    tape.backward(loss);
  }
  alpha_opt_.step();
  return {actor_loss_v, alpha_loss_v};
}

void SacAgent::update_targets() {
  auto crit_dst = target_critic_.params();
  auto crit_src = critic_.params();
  grad::ema_update(crit_dst, crit_src, cfg_.critic_tau);
  auto enc_dst = target_encoder_.params();
  auto enc_src = encoder_.params();
  grad::ema_update(enc_dst, enc_src, cfg_.encoder_tau);
}

UpdateStats SacAgent::update(const replay::ReplayBuffer& buffer, TrainRngs& rngs) {
  auto idx_sz = buffer.sample_indices(cfg_.batch_size, rngs.replay);
  std::vector<int64_t> idx(idx_sz.begin(), idx_sz.end());
  Batch batch = make_batch(buffer, idx, rngs.crop);
  UpdateStats stats;
  stats.critic_loss = critic_update(batch, rngs.action);
  auto [al, all] = actor_and_alpha_update(batch, rngs.action);
  stats.actor_loss = al;
  stats.alpha_loss = all;
  ++update_count_;
  if (update_count_ % cfg_.target_update_freq == 0) update_targets();
  stats.alpha = alpha();
  return stats;
}

nets::NamedTensors SacAgent::named() {
  nets::NamedTensors out = encoder_.named("encoder");
  auto append = [&out](nets::NamedTensors more) {
    out.insert(out.end(), more.begin(), more.end());
  };
  append(target_encoder_.named("target_encoder"));
  append(actor_.named("actor"));
  append(critic_.named("critic"));
  append(target_critic_.named("target_critic"));
  out.emplace_back("log_alpha", log_alpha_);
  return out;
}

TrainResult train(SacAgent& agent, env::EnvBase& env, replay::ReplayBuffer& buffer,
                  const TrainConfig& cfg, TrainRngs& rngs, CsvWriter* metrics) {
  if (cfg.total_steps < 0)
    raise(ErrorKind::invalid_argument, "train: total_steps must be non-negative");
  if (cfg.init_random_steps < 0)
    raise(ErrorKind::invalid_argument, "train: init_random_steps must be non-negative");
  if (!buffer.seeded())
    raise(ErrorKind::state, "train: replay buffer must be seeded before training starts");
  if (env.action_dim() != agent.act_dim())
    raise(ErrorKind::shape_mismatch, "train: env action dim differs from agent");

  const int crop = agent.config().crop;
  TrainResult res;
  aug::ImageBatch obs = env.reset();
  int episode = 1;
  float ep_return = 0.0f;
  bool ep_success = false;
  for (int step = 1; step <= cfg.total_steps; ++step) {
    std::vector<float> act(static_cast<size_t>(agent.act_dim()));
    if (step <= cfg.init_random_steps) {
      for (auto& v : act) v = static_cast<float>(rngs.action.uniform(-1.0, 1.0));
    } else {
      aug::ImageBatch cropped = aug::center_crop(obs, crop, crop);
      act = agent.sample_action(cropped, ActionMode::stochastic, rngs.action).action;
    }
    env::EnvStep s = env.step(act);
    buffer.push(replay::Transition{obs.data, act, s.reward, s.obs.data, s.done, false});
    ep_return += s.reward;
    if (s.success && !ep_success) {
      ep_success = true;
      if (res.first_success_step < 0) res.first_success_step = step;
    }
    UpdateStats us;
    us.alpha = agent.alpha();
    if (step > cfg.init_random_steps) us = agent.update(buffer, rngs);
    if (metrics)
      metrics->write_row({format_int(step), format_int(episode), format_float(ep_return),
                          ep_success ? "1" : "0", format_float(us.critic_loss),
                          format_float(us.actor_loss), format_float(us.alpha),
                          format_int(20)});
    if (s.done) {
      res.completed.push_back({episode, step, ep_return, ep_success});
      obs = env.reset();
      ++episode;
      ++res.episodes;
      ep_return = 0.0f;
      ep_success = false;
    } else {
      obs = std::move(s.obs);
    }
  }
  res.env_steps = cfg.total_steps;
  return res;
}

EvalResult evaluate(SacAgent& agent, env::EnvBase& env, int episodes) {
  if (episodes <= 0) raise(ErrorKind::invalid_argument, "evaluate: episodes must be positive");
  const int crop = agent.config().crop;
  Rng unused(0);
  double successes = 0.0, returns = 0.0;
  for (int e = 0; e < episodes; ++e) {
    aug::ImageBatch obs = env.reset();
    bool ok = false;
    double ret = 0.0;
    while (true) {
      aug::ImageBatch cropped = aug::center_crop(obs, crop, crop);
      auto a = agent.sample_action(cropped, ActionMode::deterministic, unused);
      env::EnvStep s = env.step(a.action);
      ret += s.reward;
      if (s.success) ok = true;
      if (s.done) break;
      obs = std::move(s.obs);
    }
    successes += ok ? 1.0 : 0.0;
    returns += ret;
  }
  return {successes / episodes, returns / episodes};
}

}  // namespace ferm::sac
