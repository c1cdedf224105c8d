#pragma once

#include <string>
#include <vector>

#include "crossmap/config.hpp"
#include "crossmap/tensor.hpp"
#include "crossmap/text.hpp"
#include "crossmap/world.hpp"

namespace crossmap {

// Forward-pass context: training toggles dropout and environmental dropout,
// both drawn from rng.
struct RunCtx {
  bool training = false;
  Rng* rng = nullptr;
  double dropout = 0.0;
  double env_dropout = 0.0;

  static RunCtx eval() { return RunCtx{}; }
  static RunCtx train(Rng& rng, const ModelConfig& cfg) {
    return RunCtx{true, &rng, cfg.dropout, cfg.env_dropout};
  }
};

// The path generator and the speaker share one parameter store (prefixes
// "cmt." and "cms.") and one vocabulary, and are checkpointed together.
class Model {
 public:
  Model(ModelConfig config, Vocabulary vocab, uint64_t seed);

  const ModelConfig& config() const { return config_; }
  ModelConfig& mutable_config() { return config_; }
  const Vocabulary& vocab() const { return vocab_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  void save(const std::string& path) const;
  static Model load(const std::string& path);

  uint64_t fingerprint(const std::string& prefix = "") const;

 private:
  Model() = default;
  ModelConfig config_;
  Vocabulary vocab_;
  ParamStore params_;
};

// --- masks ------------------------------------------------------------------

// Strictly lower-triangular-inclusive zeros, kMaskOff above the diagonal.
Tensor causal_mask(int len);
// kMaskOff on key columns at and beyond valid_len; rows broadcast rows.
Tensor padding_mask(int valid_len, int total, int rows = 1);
// All-zero mask (every position attends everywhere).
Tensor open_mask(int len, int rows = 1);

// Sinusoidal sequence-position features, one row per position.
Tensor sinusoid_rows(int len, int width);

// --- building blocks ----------------------------------------------------------

// Parameter view of one transformer block: multi-head attention with residual
// and layer norm, then a position-wise feed-forward with residual and norm.
struct AttnBlockRef {
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;
  Tensor ln1_g, ln1_b;
  Tensor ff_w1, ff_b1, ff_w2, ff_b2;
  Tensor ln2_g, ln2_b;

  static AttnBlockRef find(const ParamStore& params, const std::string& prefix);
};

// Self-attention when ctx is x itself, cross-modal attention otherwise. The
// mask applies over ctx key columns (causal masks are full [rows x rows]).
Tensor attention_block(const Tensor& x, const Tensor& ctx, const Tensor& mask,
                       const AttnBlockRef& block, int heads, const RunCtx& rc);

// --- per-step encoders -----------------------------------------------------------

// Token embeddings plus sinusoidal positions for one instruction; computed
// once per episode pass and shared across steps.
Tensor instruction_embeddings(const Model& model, const EncodedInstruction& instr);

// 36 view features with heading-relative positional 4-vectors projected to
// model width. Environmental dropout (training only) draws one feature mask
// shared across all 36 views of the step.
Tensor view_input_features(const Model& model, const NavNode& node, const Pose& pose,
                           const RunCtx& rc);

struct EncoderOutput {
  Tensor states;   // per-position states
  Tensor summary;  // 1 x hidden
};

// Two layers of [masked self-attention, cross-modal attention over the 36
// current views]; the summary is the CLS position output.
EncoderOutput encode_language(const Model& model, const EncodedInstruction& instr,
                              const Tensor& token_states, const Tensor& view_ctx,
                              const RunCtx& rc);

// Learned summary slot prepended to the 36 projected views; two layers of
// [self-attention, cross-modal attention over language states].
EncoderOutput encode_visual(const Model& model, const Tensor& view_inputs,
                            const Tensor& lang_states, const Tensor& lang_mask,
                            const RunCtx& rc);

// --- action decoder ----------------------------------------------------------------

// Input embedding for one candidate (or the sequence-start slot). STOP uses a
// learned feature; candidates share the projection used for decoder inputs.
Tensor embed_action_candidate(const Model& model, const ActionCandidate& cand);
Tensor embed_action_start(const Model& model);

struct DecodeOutput {
  Tensor probs;   // 1 x K distribution over candidates
  Tensor logits;  // 1 x K
  Tensor o_a;     // first decoder layer output at the current step
  Tensor h_a;     // final decoder output at the current step
  Tensor first_states;   // all first-layer outputs, one row per slot
  Tensor second_states;  // all final-layer outputs, one row per slot
};

// history: sequence-start slot plus one embedding per taken action. contexts:
// one 1 x 2*hidden row per step, aligned with history. candidates: embeddings
// of the current step's options.
DecodeOutput decode_action(const Model& model, const std::vector<Tensor>& history,
                           const std::vector<Tensor>& contexts,
                           const std::vector<Tensor>& candidate_embeddings, const RunCtx& rc);

// --- rollouts and losses --------------------------------------------------------------

enum class RolloutMode { kGreedy, kSample, kTeacherForced };

struct TrajectoryStep {
  std::vector<double> probs;
  std::vector<std::string> cand_to;  // destination ids; empty string for STOP
  std::vector<double> cand_dist;    // edge lengths; 0 for STOP
  int chosen = -1;
  Tensor logits;  // graph-attached when a tape is active
};

struct TrajectoryRecord {
  std::string episode_id;
  std::vector<std::string> nodes;  // visited nodes, starting node first
  std::vector<TrajectoryStep> steps;
  std::vector<Tensor> latent_actions;  // o_a per step
  bool truncated = false;
  bool success = false;
  double nav_error = 0.0;

  std::string to_json() const;
};

// Runs the perception-decode loop from the episode start until STOP or
// max_path steps. Sampling draws from policy_rng; teacher forcing follows the
// ground-truth path (and still records distributions).
TrajectoryRecord rollout(const Model& model, const World& world, const Episode& episode,
                         RolloutMode mode, Rng& policy_rng, const RunCtx& rc);

// Re-runs the network along a previously recorded action sequence (candidate
// indices per step). Used to rebuild latent action features differentiably.
TrajectoryRecord replay_actions(const Model& model, const World& world, const Episode& episode,
                                const std::vector<int>& actions, const RunCtx& rc);

// Mean cross-entropy of the given per-step labels under the trajectory's
// recorded logits.
Tensor trajectory_loss(const TrajectoryRecord& traj, const std::vector<int>& labels);

// Teacher-forced mean cross-entropy over the ground-truth action sequence,
// including the terminal STOP.
Tensor path_loss(const Model& model, const World& world, const Episode& episode, const RunCtx& rc);

// Cross-entropy of predicting the action at one uniformly drawn step given
// only the steps before it (causal form); the bidirectional variant masks the
// action slot instead and attends both ways. Set *out_masked_step to observe
// the draw.
Tensor path_mask_loss(const Model& model, const World& world, const Episode& episode,
                      Rng& mask_rng, const RunCtx& rc, int* out_masked_step = nullptr);

}  // namespace crossmap
