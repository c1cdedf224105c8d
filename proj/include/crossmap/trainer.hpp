#pragma once

#include <optional>
#include <string>
#include <vector>

#include "crossmap/metrics.hpp"
#include "crossmap/model.hpp"
#include "crossmap/speaker.hpp"

namespace crossmap {

// Episodes tagged with their dataset role. Gradient passes assert the role so
// validation splits can never leak into training.
struct EpisodeSet {
  std::vector<Episode> episodes;
  std::string role;  // "train" | "val_seen" | "val_unseen" | "unlabeled"
};

struct Datasets {
  EpisodeSet train{{}, "train"};
  EpisodeSet val_seen{{}, "val_seen"};
  EpisodeSet val_unseen{{}, "val_unseen"};
  EpisodeSet unlabeled{{}, "unlabeled"};
};

struct TrainPlan {
  std::string phase;  // "pretrain" | "finetune" | "dbt"
  int epochs = 1;
  int start_epoch = 0;  // resume offset; epoch streams derive from (seed, epoch)
  uint64_t seed = 0;
  int eval_every = 1;
  int dbt_rounds = 2;
  ModelConfig config;
  std::string world_path;
  std::string train_path;
  std::string val_seen_path;
  std::string val_unseen_path;
  std::string unlabeled_path;

  // Accepts partial configs (defaults applied); rejects unknown keys and
  // names the offending key in the error.
  static TrainPlan from_json(const Json& j);
  OrderedJson to_json() const;
};

struct EpochStats {
  int epoch = 0;
  double loss = 0.0;
  std::optional<double> val_seen_sr;
  std::optional<double> val_unseen_sr;
};

struct TrainResult {
  std::vector<EpochStats> curve;
  std::string csv() const;  // epoch,loss,val_seen_sr,val_unseen_sr
};

// Joint pretraining: per episode, the path-masking term plus the speaker term
// on teacher-forced latents, modes alternating per batch, one optimizer step
// per batch. Aborts on non-finite loss.
TrainResult pretrain(Model& model, const World& world, const Datasets& data, int epochs,
                     uint64_t seed, AdamState& opt, int start_epoch = 0);

// Sampled-exploration fine-tuning: rollouts draw actions from the model's own
// distribution; each step is supervised with the first edge of the shortest
// path from the current node to the goal (STOP at the goal). Validation SR is
// computed on both splits every eval_every epochs.
TrainResult finetune(Model& model, const World& world, const Datasets& data, int epochs,
                     uint64_t seed, AdamState& opt, int eval_every = 1, int start_epoch = 0);

// --- double back-translation ---------------------------------------------------

struct PooledTrajectory {
  std::string episode_id;
  std::vector<int> actions;
  bool success = false;
};

struct PooledInstruction {
  std::string episode_id;
  std::string text;
  double score = 0.0;
  std::string metric;
};

struct DbtState {
  std::vector<PooledTrajectory> successful_trajectories;
  std::vector<PooledInstruction> generated_instructions;  // stage 2, score >= lambda
  std::vector<PooledInstruction> unlabeled_instructions;  // stage 3, gated by validation score
  double speaker_val_score = 0.0;
};

struct DbtRoundReport {
  int stage1_successes = 0;
  int stage1_rollouts = 0;
  int stage2_kept = 0;
  int stage2_generated = 0;
  double speaker_val_score = 0.0;
  bool stage3_ran = false;
  int stage3_labeled = 0;
  uint64_t cmt_fingerprint_after_stage1 = 0;
  uint64_t cmt_fingerprint_after_round = 0;
  OrderedJson to_json() const;
};

// One round of the three-stage loop: (1) successful sampled rollouts train
// the speaker on their latents; (2) the speaker labels ground-truth paths and
// pairs scoring at least lambda_threshold train the path network; (3) if the
// speaker's mean validation score clears lambda_threshold, it labels the
// unlabeled paths and those pairs train the path network too.
DbtRoundReport dbt_round(DbtState& state, Model& model, const World& world, const Datasets& data,
                         uint64_t seed, AdamState& opt);

// --- evaluation ------------------------------------------------------------------

enum class EvalPolicy { kModel, kOracle, kAlwaysStop };

// Greedy (or sampled) rollouts scored with the navigation metrics. kOracle
// follows the ground-truth path without touching the model; kAlwaysStop stops
// immediately. Pure given (model, episodes, seed).
MetricsReport evaluate(const Model& model, const World& world, const EpisodeSet& episodes,
                       RolloutMode mode = RolloutMode::kGreedy,
                       EvalPolicy policy = EvalPolicy::kModel, uint64_t seed = 0);

// Fraction of teacher-forced steps whose argmax matches the ground truth.
double teacher_forced_accuracy(const Model& model, const World& world,
                               const EpisodeSet& episodes);

// --- training checkpoints (model + optimizer moments) ------------------------------

void save_training_checkpoint(const std::string& path, const Model& model, const AdamState& opt);
Model load_training_checkpoint(const std::string& path, AdamState* opt);

// --- plan orchestration --------------------------------------------------------------

struct PlanRunResult {
  std::string checkpoint_path;
  std::string curve_path;
  OrderedJson summary;
};

// Loads the world and datasets named by the plan, creates the model (building
// the vocabulary from the training instructions) or resumes from model_in,
// runs the phase, and writes the checkpoint plus per-epoch CSV under out_dir.
PlanRunResult run_plan(const TrainPlan& plan, const std::string& model_in,
                       const std::string& out_dir);

}  // namespace crossmap
