#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "ferm/env/rigid.hpp"
#include "ferm/sac/sac.hpp"
#include "test_util.hpp"

using namespace ferm;
using grad::Tensor;

namespace {

sac::SacConfig small_cfg() {
  sac::SacConfig cfg;
  cfg.crop = 15;
  cfg.batch_size = 4;
  cfg.augmentation = true;
  return cfg;
}

sac::SacAgent make_agent(int act_dim, uint64_t seed, sac::SacConfig cfg) {
  Rng rng(seed);
  auto enc = nets::Encoder::init(3, cfg.crop, rng);
  auto tgt = enc.clone();
  return sac::SacAgent(std::move(enc), std::move(tgt), act_dim, cfg, rng);
}

replay::ReplayBuffer make_buffer(int act_dim, uint64_t seed, int n = 12) {
  replay::ObsSpec spec{3, 17, 17};
  replay::ReplayBuffer buf(spec, act_dim, 100);
  Rng rng(seed);
  replay::Episode ep;
  for (int i = 0; i < n; ++i) {
    replay::Transition t;
    t.obs.resize(static_cast<size_t>(spec.numel()));
    t.next_obs.resize(static_cast<size_t>(spec.numel()));
    for (auto& b : t.obs) b = static_cast<uint8_t>(rng.uniform_int(256));
    for (auto& b : t.next_obs) b = static_cast<uint8_t>(rng.uniform_int(256));
    t.action.resize(static_cast<size_t>(act_dim));
    for (auto& a : t.action) a = static_cast<float>(rng.uniform(-1.0, 1.0));
    t.reward = (i % 3 == 0) ? 0.0f : -1.0f;
    t.done = (i == n - 1);
    ep.push_back(t);
  }
  buf.seed_with_demonstrations({ep});
  return buf;
}

std::string slurp(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  REQUIRE(is.good());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

double naive_squashed_logp_row(const float* mu, const float* ls, const float* u, int a) {
  double lp = 0.0;
  for (int j = 0; j < a; ++j) {
    double sigma = std::exp(static_cast<double>(ls[j]));
    double z = (static_cast<double>(u[j]) - static_cast<double>(mu[j])) / sigma;
    lp += -0.9189385332046727 - static_cast<double>(ls[j]) - 0.5 * z * z;
    double th = std::tanh(static_cast<double>(u[j]));
    lp -= std::log(1.0 - th * th);
  }
  return lp;
}

}  // namespace

TEST_SUITE("sac") {

TEST_CASE("deterministic squashed gaussian at zero mean gives zero action and correction") {
  auto mu = Tensor<float>::zeros({1, 2});
  auto ls = Tensor<float>::full({1, 2}, -10.0f);
  auto p = sac::squashed_gaussian_sample(mu, ls, false, nullptr);
  CHECK(p.action.data()[0] == 0.0f);
  CHECK(p.action.data()[1] == 0.0f);
  double expect = 2.0 * (10.0 - 0.9189385332046727);
  CHECK(p.log_prob.data()[0] == doctest::Approx(expect).epsilon(1e-6));

  Rng rng(4);
  auto ps = sac::squashed_gaussian_sample(mu, ls, true, &rng);
  CHECK(std::fabs(ps.action.data()[0]) < 1e-3f);
  CHECK(std::fabs(ps.action.data()[1]) < 1e-3f);

  CHECK(testutil::thrown_kind([&] { sac::squashed_gaussian_sample(mu, ls, true, nullptr); }) ==
        ErrorKind::invalid_argument);
  auto bad = Tensor<float>::zeros({1, 3});
  CHECK(testutil::thrown_kind([&] { sac::squashed_gaussian_sample(mu, bad, false, nullptr); }) ==
        ErrorKind::shape_mismatch);
  auto nan_mu = Tensor<float>::full({1, 2}, std::numeric_limits<float>::quiet_NaN());
  CHECK(testutil::thrown_kind([&] { sac::squashed_gaussian_sample(nan_mu, ls, false, nullptr); }) ==
        ErrorKind::numeric);
}

TEST_CASE("squashed gaussian log density matches a naive double evaluation") {
  auto mu = Tensor<float>::from_data({3, 2}, {0.2f, -0.4f, 1.0f, 0.0f, -1.2f, 0.5f});
  auto ls = Tensor<float>::from_data({3, 2}, {-0.5f, 0.1f, -1.0f, 0.3f, -0.2f, 0.0f});
  Rng rng(9);
  auto p = sac::squashed_gaussian_sample(mu, ls, true, &rng);
  for (int i = 0; i < 3; ++i) {
    double expect =
        naive_squashed_logp_row(mu.ptr() + 2 * i, ls.ptr() + 2 * i, p.pre_tanh.ptr() + 2 * i, 2);
    CHECK(p.log_prob.data()[static_cast<size_t>(i)] ==
          doctest::Approx(expect).epsilon(1e-4));
    float a0 = p.action.data()[static_cast<size_t>(2 * i)];
    float u0 = p.pre_tanh.data()[static_cast<size_t>(2 * i)];
    CHECK(a0 == doctest::Approx(std::tanh(u0)));
  }
}

TEST_CASE("sampled entropy matches a quadrature oracle in one dimension") {
  const double mu = 0.3, sigma = 0.7;
  const int n = 20000;
  auto mu_t = Tensor<float>::full({n, 1}, static_cast<float>(mu));
  auto ls_t = Tensor<float>::full({n, 1}, static_cast<float>(std::log(sigma)));
  Rng rng(31);
  auto p = sac::squashed_gaussian_sample(mu_t, ls_t, true, &rng);
  double mc = 0.0;
  for (float lp : p.log_prob.data()) mc -= static_cast<double>(lp);
  mc /= n;

  double h_u = 0.5 * std::log(2.0 * 3.14159265358979323846 * 2.718281828459045 * sigma * sigma);
  const int m = 40001;
  double lo = mu - 10.0 * sigma, hi = mu + 10.0 * sigma;
  double h = (hi - lo) / (m - 1);
  double acc = 0.0;
  for (int i = 0; i < m; ++i) {
    double u = lo + h * i;
    double z = (u - mu) / sigma;
    double pdf = std::exp(-0.5 * z * z) / (sigma * std::sqrt(2.0 * 3.14159265358979323846));
    double th = std::tanh(u);
    double f = pdf * std::log(1.0 - th * th);
    acc += (i == 0 || i == m - 1) ? 0.5 * f : f;
  }
  double oracle = h_u + acc * h;
  CHECK(std::fabs(mc - oracle) <= 0.02);
}

TEST_CASE("td target rows match hand-computed instances") {
  auto y = sac::td_target_rows({1.0f}, {0.5f}, {-1.0f}, {-1.0f}, {0.0f}, 0.1f, 0.99f);
  REQUIRE(y.size() == 1);
  CHECK(y[0] == doctest::Approx(-0.406).epsilon(1e-6));

  auto yt = sac::td_target_rows({3.0f, -2.0f}, {1.5f, -8.0f}, {0.7f, -0.3f}, {-1.0f, 0.0f},
                                {1.0f, 1.0f}, 0.1f, 0.99f);
  CHECK(yt[0] == -1.0f);
  CHECK(yt[1] == 0.0f);

  auto y0 = sac::td_target_rows({1.0f}, {0.5f}, {-1.0f}, {-1.0f}, {0.0f}, 0.0f, 0.99f);
  CHECK(y0[0] == doctest::Approx(-1.0 + 0.99 * 0.5).epsilon(1e-6));

  CHECK(testutil::thrown_kind([&] {
          sac::td_target_rows({1.0f}, {0.5f, 0.2f}, {-1.0f}, {-1.0f}, {0.0f}, 0.1f, 0.99f);
        }) == ErrorKind::shape_mismatch);
}

TEST_CASE("terminal rows bootstrap nothing through the agent path") {
  auto cfg = small_cfg();
  auto agent = make_agent(2, 11, cfg);
  auto buffer = make_buffer(2, 12);
  Rng crop_rng(13);
  auto batch = agent.make_batch(buffer, {0, 1, 2, 3}, crop_rng);
  batch.done.assign(batch.done.size(), 1.0f);
  batch.reward = {0.0f, -1.0f, -0.5f, 0.25f};
  Rng arng(14);
  auto y = agent.compute_td_target(batch, arng);
  REQUIRE(y.size() == 4);
  for (size_t i = 0; i < 4; ++i) CHECK(y[i] == batch.reward[i]);
}

TEST_CASE("critic update matches a single-row scalar oracle and reaches the encoder") {
  auto cfg = small_cfg();
  auto agent = make_agent(2, 21, cfg);
  auto buffer = make_buffer(2, 22);
  Rng crop_rng(23);
  auto batch = agent.make_batch(buffer, {1}, crop_rng);

  Rng r1(99);
  auto y = agent.compute_td_target(batch, r1);
  auto latent = agent.encoder().forward(batch.obs);
  auto [q1, q2] = agent.critic().forward(latent, batch.action);
  double d1 = static_cast<double>(q1.data()[0]) - y[0];
  double d2 = static_cast<double>(q2.data()[0]) - y[0];
  double expect = 0.5 * (d1 * d1 + d2 * d2);

  Rng r2(99);
  float loss = agent.critic_update(batch, r2);
  CHECK(loss == doctest::Approx(expect).epsilon(1e-5));

  bool enc_grad_moved = false;
  for (auto& p : agent.encoder().params()) {
    if (!p.has_grad()) continue;
    for (float g : p.impl()->grad)
      if (g != 0.0f) enc_grad_moved = true;
  }
  CHECK(enc_grad_moved);
}

TEST_CASE("actor and alpha updates match scalar oracles with latents detached") {
  auto cfg = small_cfg();
  auto agent = make_agent(2, 31, cfg);
  auto buffer = make_buffer(2, 32);
  Rng crop_rng(33);
  auto batch = agent.make_batch(buffer, {0, 2, 4, 6}, crop_rng);

  Tensor<float> latent = agent.encoder().forward(batch.obs);
  auto [mu, ls] = agent.actor().forward(latent);
  Rng r1(77);
  auto p = sac::squashed_gaussian_sample(mu, ls, true, &r1);
  auto [q1, q2] = agent.critic().forward(latent, p.action);
  double exp_actor = 0.0, mean_logp = 0.0;
  float alpha0 = agent.alpha();
  for (int i = 0; i < 4; ++i) {
    double lp = p.log_prob.data()[static_cast<size_t>(i)];
    double mq = std::min(q1.data()[static_cast<size_t>(i)], q2.data()[static_cast<size_t>(i)]);
    exp_actor += static_cast<double>(alpha0) * lp - mq;
    mean_logp += lp;
  }
  exp_actor /= 4.0;
  mean_logp /= 4.0;
  double exp_alpha_loss = -std::log(static_cast<double>(alpha0)) * (mean_logp - 2.0);

  for (auto& prm : agent.encoder().params()) prm.zero_grad();
  float log_alpha_before = agent.log_alpha().data()[0];
  Rng r2(77);
  auto [actor_loss, alpha_loss] = agent.actor_and_alpha_update(batch, r2);
  CHECK(actor_loss == doctest::Approx(exp_actor).epsilon(1e-4));
  CHECK(alpha_loss == doctest::Approx(exp_alpha_loss).epsilon(1e-4));

  for (auto& prm : agent.encoder().params())
    for (float g : prm.impl()->grad) CHECK(g == 0.0f);

  float log_alpha_after = agent.log_alpha().data()[0];
  if (mean_logp > 2.0) {
    CHECK(log_alpha_after > log_alpha_before);
  } else {
    CHECK(log_alpha_after < log_alpha_before);
  }
  CHECK(agent.alpha() > 0.0f);
}

TEST_CASE("targets follow the EMA recurrence only every second update") {
  auto cfg = small_cfg();
  auto agent = make_agent(2, 41, cfg);
  auto buffer = make_buffer(2, 42);
  auto rngs = sac::TrainRngs::derive(43);

  auto tgt_crit0 = agent.target_critic().a_w1.detach();
  auto tgt_enc0 = agent.target_encoder().w.detach();
  agent.update(buffer, rngs);
  CHECK(agent.update_count() == 1);
  CHECK(agent.target_critic().a_w1.data() == tgt_crit0.data());
  CHECK(agent.target_encoder().w.data() == tgt_enc0.data());

  agent.update(buffer, rngs);
  CHECK(agent.update_count() == 2);
  const auto& crit_src = agent.critic().a_w1.data();
  const auto& crit_tgt = agent.target_critic().a_w1.data();
  for (size_t i = 0; i < 32; ++i) {
    float expect = (1.0f - 0.01f) * tgt_crit0.data()[i] + 0.01f * crit_src[i];
    CHECK(crit_tgt[i] == expect);
  }
  const auto& enc_src = agent.encoder().w.data();
  const auto& enc_tgt = agent.target_encoder().w.data();
  for (size_t i = 0; i < 32; ++i) {
    float expect = (1.0f - 0.05f) * tgt_enc0.data()[i] + 0.05f * enc_src[i];
    CHECK(enc_tgt[i] == expect);
  }

  auto tgt_after2 = agent.target_critic().a_w1.detach();
  agent.update(buffer, rngs);
  CHECK(agent.update_count() == 3);
  CHECK(agent.target_critic().a_w1.data() == tgt_after2.data());
}

TEST_CASE("dry run with no gradient updates leaves every parameter untouched") {
  auto cfg = small_cfg();
  env::RigidEnvConfig ec;
  ec.task = env::Task::reach;
  ec.horizon = 10;
  ec.obs_h = 16;
  ec.obs_w = 16;
  env::RigidEnv rigid(ec, 5);
  auto agent = make_agent(4, 51, cfg);
  replay::ReplayBuffer buffer(rigid.obs_spec(), 4, 1000);
  buffer.seed_with_demonstrations({});

  std::vector<std::vector<float>> before;
  for (auto& [name, t] : agent.named()) before.push_back(t.data());

  auto rngs = sac::TrainRngs::derive(52);
  sac::TrainConfig tc;
  tc.total_steps = 6;
  tc.init_random_steps = 6;
  auto res = sac::train(agent, rigid, buffer, tc, rngs, nullptr);
  CHECK(res.env_steps == 6);
  CHECK(buffer.size() == 6);
  CHECK(agent.update_count() == 0);

  size_t k = 0;
  for (auto& [name, t] : agent.named()) CHECK(t.data() == before[k++]);
}

TEST_CASE("training is deterministic and logs the pinned metrics schema") {
  auto run_once = [](const std::string& path) {
    auto cfg = small_cfg();
    env::RigidEnvConfig ec;
    ec.task = env::Task::reach;
    ec.horizon = 10;
    ec.obs_h = 16;
    ec.obs_w = 16;
    env::RigidEnv rigid(ec, 7);
    auto agent = make_agent(4, 61, cfg);
    replay::ReplayBuffer buffer(rigid.obs_spec(), 4, 1000);
    buffer.seed_with_demonstrations({});
    auto rngs = sac::TrainRngs::derive(62);
    CsvWriter csv;
    csv.open(path, sac::metrics_columns());
    sac::TrainConfig tc;
    tc.total_steps = 24;
    tc.init_random_steps = 12;
    sac::train(agent, rigid, buffer, tc, rngs, &csv);
    csv.close();
  };
  run_once("/tmp/ferm_sac_a.csv");
  run_once("/tmp/ferm_sac_b.csv");
  std::string a = slurp("/tmp/ferm_sac_a.csv");
  std::string b = slurp("/tmp/ferm_sac_b.csv");
  CHECK(a == b);

  std::istringstream is(a);
  std::string line;
  REQUIRE(std::getline(is, line));
  CHECK(line == "step,episode,episode_return,success,critic_loss,actor_loss,alpha,fps");
  int rows = 0;
  while (std::getline(is, line)) {
    auto f = split_csv_line(line);
    REQUIRE(f.size() == 8);
    ++rows;
    double ret = parse_double(f[2]);
    CHECK(ret <= 0.0);
    CHECK(ret >= -10.0);
    CHECK((f[3] == "0" || f[3] == "1"));
    CHECK(parse_double(f[6]) > 0.0);
    CHECK(f[7] == "20");
  }
  CHECK(rows == 24);
}

TEST_CASE("train rejects an unseeded buffer and mismatched action dims") {
  auto cfg = small_cfg();
  env::RigidEnvConfig ec;
  ec.task = env::Task::reach;
  ec.horizon = 10;
  ec.obs_h = 16;
  ec.obs_w = 16;
  env::RigidEnv rigid(ec, 9);
  auto agent = make_agent(4, 71, cfg);
  replay::ReplayBuffer buffer(rigid.obs_spec(), 4, 1000);
  auto rngs = sac::TrainRngs::derive(72);
  sac::TrainConfig tc;
  tc.total_steps = 2;
  tc.init_random_steps = 2;
  CHECK(testutil::thrown_kind([&] { sac::train(agent, rigid, buffer, tc, rngs, nullptr); }) ==
        ErrorKind::state);

  auto agent3 = make_agent(3, 73, cfg);
  replay::ReplayBuffer seeded(rigid.obs_spec(), 3, 1000);
  seeded.seed_with_demonstrations({});
  CHECK(testutil::thrown_kind([&] { sac::train(agent3, rigid, seeded, tc, rngs, nullptr); }) ==
        ErrorKind::shape_mismatch);
}

TEST_CASE("sample action modes, bounds, and input validation") {
  auto cfg = small_cfg();
  auto agent = make_agent(2, 81, cfg);
  aug::ImageBatch obs(1, 3, 15, 15);
  Rng pix(82);
  for (auto& b : obs.data) b = static_cast<uint8_t>(pix.uniform_int(256));

  Rng r1(83);
  auto d1 = agent.sample_action(obs, sac::ActionMode::deterministic, r1);
  auto d2 = agent.sample_action(obs, sac::ActionMode::deterministic, r1);
  CHECK(d1.action == d2.action);
  CHECK(std::isfinite(d1.log_prob));
  for (float a : d1.action) {
    CHECK(a > -1.0f);
    CHECK(a < 1.0f);
  }

  Rng r2(84), r3(84), r4(85);
  auto s1 = agent.sample_action(obs, sac::ActionMode::stochastic, r2);
  auto s2 = agent.sample_action(obs, sac::ActionMode::stochastic, r3);
  auto s3 = agent.sample_action(obs, sac::ActionMode::stochastic, r4);
  CHECK(s1.action == s2.action);
  CHECK(s1.action != s3.action);

  aug::ImageBatch two(2, 3, 15, 15);
  CHECK(testutil::thrown_kind([&] { agent.sample_action(two, sac::ActionMode::deterministic, r1); }) ==
        ErrorKind::invalid_argument);
}

TEST_CASE("evaluate runs deterministic episodes and validates arguments") {
  auto cfg = small_cfg();
  env::RigidEnvConfig ec;
  ec.task = env::Task::reach;
  ec.horizon = 10;
  ec.obs_h = 16;
  ec.obs_w = 16;
  auto agent = make_agent(4, 91, cfg);

  env::RigidEnv e1(ec, 15);
  auto r1 = sac::evaluate(agent, e1, 3);
  env::RigidEnv e2(ec, 15);
  auto r2 = sac::evaluate(agent, e2, 3);
  CHECK(r1.success_rate == r2.success_rate);
  CHECK(r1.mean_return == r2.mean_return);
  CHECK(r1.success_rate >= 0.0);
  CHECK(r1.success_rate <= 1.0);
  CHECK(r1.mean_return <= 0.0);

  env::RigidEnv e3(ec, 15);
  CHECK(testutil::thrown_kind([&] { sac::evaluate(agent, e3, 0); }) == ErrorKind::invalid_argument);
}

}  // TEST_SUITE
