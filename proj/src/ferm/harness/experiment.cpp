#include "ferm/harness/experiment.hpp"

#include <filesystem>
#include <fstream>
#include <utility>

#include "ferm/contrastive/contrastive.hpp"
#include "ferm/env/expert.hpp"
#include "ferm/env/rigid.hpp"
#include "ferm/nets/checkpoint.hpp"
#include "ferm/util/csv.hpp"
#include "ferm/util/error.hpp"

namespace ferm::harness {

namespace fs = std::filesystem;

namespace {

constexpr int kActDim = 4;
constexpr int kCriterionWindow = 10;
constexpr int kCriterionSuccesses = 8;

template <typename Fn>
void stage(const char* name, Fn&& fn) {
  try {
    fn();
  } catch (const FermError& e) {
    raise(e.kind(), std::string("stage ") + name + ": " + e.what());
  }
}

sac::SacConfig sac_config(const ExperimentConfig& cfg) {
  sac::SacConfig sc;
  sc.batch_size = cfg.batch_size;
  sc.crop = crop_size(cfg);
  sc.augmentation = cfg.augmentation;
  return sc;
}

std::string sanitize_field(std::string s) {
  for (auto& c : s)
    if (c == ',' || c == '\n' || c == '\r') c = ';';
  return s;
}

}  // namespace

int64_t step_to_criterion(const std::vector<sac::EpisodeRecord>& episodes) {
  int in_window = 0;
  for (size_t i = 0; i < episodes.size(); ++i) {
    if (episodes[i].success) ++in_window;
    if (i >= kCriterionWindow &&
        episodes[i - kCriterionWindow].success)
      --in_window;
    if (i + 1 >= kCriterionWindow && in_window >= kCriterionSuccesses)
      return episodes[i].end_step;
  }
  return -1;
}

RunResult run_experiment(const ExperimentConfig& cfg) {
  RunResult res;
  const env::RigidEnvConfig ec = env_config(cfg);
  const replay::ObsSpec spec{3, ec.obs_h, ec.obs_w};
  const int crop = crop_size(cfg);

  stage("setup", [&] {
    std::error_code fs_err;
    fs::create_directories(cfg.out_dir, fs_err);
    if (fs_err) raise(ErrorKind::io, "cannot create out_dir: " + cfg.out_dir);
    std::ofstream os(cfg.out_dir + "/config.txt", std::ios::binary | std::ios::trunc);
    if (!os) raise(ErrorKind::io, "cannot write config.txt under " + cfg.out_dir);
    os << serialize_config(cfg);
  });

  std::vector<replay::Episode> episodes;
  stage("demos", [&] {
    if (cfg.num_demos == 0) return;
    if (!cfg.demos_file.empty()) {
      replay::DemoFile df = replay::load_demos(cfg.demos_file);
      if (!(df.obs == spec) || df.act_dim != kActDim)
        raise(ErrorKind::config, "demo file geometry does not match the configured profile");
      if (static_cast<int>(df.episodes.size()) < cfg.num_demos)
        raise(ErrorKind::invalid_argument,
              "demo file holds " + std::to_string(df.episodes.size()) +
                  " episodes, fewer than num_demos=" + std::to_string(cfg.num_demos));
      episodes.assign(df.episodes.begin(), df.episodes.begin() + cfg.num_demos);
    } else {
      env::RigidEnv demo_env(ec, substream_seed(cfg.seed, stream::demo_env));
      auto collected = env::collect_demonstrations(demo_env, cfg.num_demos);
      episodes = std::move(collected.episodes);
      replay::save_demos(cfg.out_dir + "/demos.ferm", spec, kActDim, episodes);
    }
  });

  replay::ReplayBuffer buffer(spec, kActDim, cfg.replay_capacity);
  stage("replay", [&] { buffer.seed_with_demonstrations(episodes); });

  Rng net_rng = Rng::derive(cfg.seed, stream::net_init);
  nets::Encoder encoder = nets::Encoder::init(3, crop, net_rng);
  contrastive::PretrainConfig pc;
  pc.crop = crop;
  contrastive::ContrastiveTrainer trainer(encoder, pc);
  stage("pretrain", [&] {
    CsvWriter csv;
    csv.open(cfg.out_dir + "/pretrain.csv", {"iteration", "loss", "top1_acc"});
    Rng prng = Rng::derive(cfg.seed, stream::pretrain);
    trainer.run(buffer, cfg.pretrain_iters, prng, &csv);
    csv.close();
  });

  sac::SacAgent agent(trainer.query(), trainer.key(), kActDim, sac_config(cfg), net_rng);
  stage("train", [&] {
    env::RigidEnv train_env(ec, substream_seed(cfg.seed, stream::env));
    CsvWriter csv;
    csv.open(cfg.out_dir + "/train.csv", sac::metrics_columns());
    sac::TrainRngs rngs = sac::TrainRngs::derive(cfg.seed);
    sac::TrainConfig tc;
    tc.total_steps = cfg.total_steps;
    tc.init_random_steps = cfg.init_random_steps;
    sac::TrainResult tr = sac::train(agent, train_env, buffer, tc, rngs, &csv);
    csv.close();
    res.episodes = tr.episodes;
    res.first_success_step = tr.first_success_step;
    res.step_to_criterion = step_to_criterion(tr.completed);
  });

  stage("checkpoint", [&] { nets::save_tensors(cfg.out_dir + "/agent.ferm", agent.named()); });

  stage("eval", [&] {
    env::RigidEnv eval_env(ec, substream_seed(cfg.seed, stream::eval_env));
    sac::EvalResult er = sac::evaluate(agent, eval_env, cfg.eval_episodes);
    res.eval_success = er.success_rate;
    res.eval_mean_return = er.mean_return;
  });

  stage("summary", [&] {
    CsvWriter csv;
    csv.open(cfg.out_dir + "/summary.csv",
             {"task", "seed", "num_demos", "pretrain_iters", "augmentation", "view",
              "total_steps", "episodes", "first_success_step", "step_to_criterion",
              "eval_success", "eval_mean_return"});
    csv.write_row({env::task_name(cfg.task), format_int(static_cast<int64_t>(cfg.seed)),
                   format_int(cfg.num_demos), format_int(cfg.pretrain_iters),
                   cfg.augmentation ? "on" : "off", env::view_mode_name(cfg.view),
                   format_int(cfg.total_steps), format_int(res.episodes),
                   format_int(res.first_success_step), format_int(res.step_to_criterion),
                   format_double(res.eval_success), format_double(res.eval_mean_return)});
    csv.close();
  });

  return res;
}

sac::EvalResult evaluate_checkpoint(const ExperimentConfig& cfg,
                                    const std::string& checkpoint_path) {
  const int crop = crop_size(cfg);
  Rng net_rng = Rng::derive(cfg.seed, stream::net_init);
  nets::Encoder encoder = nets::Encoder::init(3, crop, net_rng);
  nets::Encoder target = encoder.clone();
  sac::SacAgent agent(std::move(encoder), std::move(target), kActDim, sac_config(cfg),
                      net_rng);
  nets::load_into(checkpoint_path, agent.named());
  env::RigidEnv eval_env(env_config(cfg), substream_seed(cfg.seed, stream::eval_env));
  return sac::evaluate(agent, eval_env, cfg.eval_episodes);
}

std::vector<AblationRun> ablation_plan(const ExperimentConfig& base) {
  struct ArmSpec {
    const char* name;
    std::vector<std::pair<std::string, std::string>> overrides;
  };
  const std::vector<ArmSpec> arms = {
      {"demos_0", {{"num_demos", "0"}}},
      {"demos_1", {{"num_demos", "1"}}},
      {"demos_10", {{"num_demos", "10"}}},
      {"pretrain_0", {{"pretrain_iters", "0"}}},
      {"pretrain_100", {{"pretrain_iters", "100"}}},
      {"pretrain_1600", {{"pretrain_iters", "1600"}}},
      {"aug_on", {{"task", "dense_reach"}, {"augmentation", "on"}}},
      {"aug_off", {{"task", "dense_reach"}, {"augmentation", "off"}}},
      {"view_both", {{"view", "both"}}},
      {"view_shoulder_only", {{"view", "shoulder_only"}}},
      {"view_gripper_only", {{"view", "gripper_only"}}},
  };
  std::vector<AblationRun> plan;
  plan.reserve(arms.size() * 3);
  for (const auto& arm : arms) {
    for (uint64_t s = 0; s < 3; ++s) {
      AblationRun run;
      run.arm = arm.name;
      run.config = base;
      for (const auto& [k, v] : arm.overrides) {
        set_key(run.config, k, v);
        run.changed_keys.push_back(k);
      }
      run.config.seed = base.seed + s;
      run.config.out_dir =
          base.out_dir + "/" + arm.name + "/seed_" + std::to_string(run.config.seed);
      plan.push_back(std::move(run));
    }
  }
  return plan;
}

const std::vector<std::string>& ablation_summary_columns() {
  static const std::vector<std::string> cols = {
      "arm",  "seed",     "status", "error", "task", "num_demos", "pretrain_iters",
      "augmentation", "view", "first_success_step", "step_to_criterion", "eval_success",
      "run_dir"};
  return cols;
}

std::vector<AblationOutcome> ablation_suite(const ExperimentConfig& base) {
  std::error_code fs_err;
  fs::create_directories(base.out_dir, fs_err);
  if (fs_err) raise(ErrorKind::io, "cannot create out_dir: " + base.out_dir);
  CsvWriter csv;
  csv.open(base.out_dir + "/ablation_summary.csv", ablation_summary_columns());

  std::vector<AblationOutcome> outcomes;
  for (const AblationRun& run : ablation_plan(base)) {
    AblationOutcome out;
    out.arm = run.arm;
    out.seed = run.config.seed;
    out.run_dir = run.config.out_dir;
    try {
      out.result = run_experiment(run.config);
      out.ok = true;
    } catch (const FermError& e) {
      out.error = e.what();
    } catch (const std::exception& e) {
      out.error = e.what();
    }
    const auto& c = run.config;
    csv.write_row({out.arm, format_int(static_cast<int64_t>(out.seed)),
                   out.ok ? "ok" : "failed", sanitize_field(out.error),
                   env::task_name(c.task), format_int(c.num_demos),
                   format_int(c.pretrain_iters), c.augmentation ? "on" : "off",
                   env::view_mode_name(c.view), format_int(out.result.first_success_step),
                   format_int(out.result.step_to_criterion),
                   format_double(out.result.eval_success), out.run_dir});
    outcomes.push_back(std::move(out));
  }
  csv.close();
  return outcomes;
}

}  // namespace ferm::harness
