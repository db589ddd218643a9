#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ferm/harness/config.hpp"
#include "ferm/sac/sac.hpp"

namespace ferm::harness {

struct RunResult {
  int episodes = 0;
  int64_t first_success_step = -1;
  int64_t step_to_criterion = -1;
  double eval_success = 0.0;
  double eval_mean_return = 0.0;
};

// First env step at which 8 of the 10 most recent completed training episodes
// were successes; -1 if that never happens. The desk-scale stand-in for
// "time to a consistently successful policy".
int64_t step_to_criterion(const std::vector<sac::EpisodeRecord>& episodes);

// Full pipeline: collect or load demonstrations, seed the replay buffer,
// contrastive pre-training, transplant, online RL, final checkpoint and eval.
// Writes config.txt, demos.ferm (when collected), pretrain.csv, train.csv,
// agent.ferm, and summary.csv under cfg.out_dir. Errors carry a stage label.
RunResult run_experiment(const ExperimentConfig& cfg);

// Rebuilds the agent wiring from cfg, loads the checkpoint weights into it,
// and runs deterministic evaluation episodes.
sac::EvalResult evaluate_checkpoint(const ExperimentConfig& cfg,
                                    const std::string& checkpoint_path);

struct AblationRun {
  std::string arm;
  ExperimentConfig config;
  std::vector<std::string> changed_keys;  // vs. base, besides seed and out_dir
};

// The 11 arms x 3 seeds = 33 runs: num_demos {0,1,10}, pretrain_iters
// {0,100,1600}, augmentation {on,off} on dense_reach, view {both,
// shoulder_only, gripper_only}. Seeds are base.seed, +1, +2; each run gets
// out_dir <base>/<arm>/seed_<seed>.
std::vector<AblationRun> ablation_plan(const ExperimentConfig& base);

struct AblationOutcome {
  std::string arm;
  uint64_t seed = 0;
  bool ok = false;
  std::string error;
  RunResult result;
  std::string run_dir;
};

// Executes the plan sequentially, continuing past failed arms, and writes
// <base out_dir>/ablation_summary.csv with one row per run.
std::vector<AblationOutcome> ablation_suite(const ExperimentConfig& base);

const std::vector<std::string>& ablation_summary_columns();

}  // namespace ferm::harness
