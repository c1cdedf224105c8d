#pragma once

#include <string>
#include <vector>

#include "crossmap/metrics.hpp"
#include "crossmap/model.hpp"

namespace crossmap {

enum class SpeakerMode { kCausalGen, kBidirectionalMlm };

struct SpeakerBatch {
  std::vector<Tensor> latent_actions;  // o_a sequence from the path decoder
  EncodedInstruction target;
  SpeakerMode mode = SpeakerMode::kCausalGen;
};

struct SpeakerLossResult {
  Tensor loss;
  bool skipped = false;  // no content tokens to mask in MLM mode
  int masked_count = 0;
};

// Causal mode: next-token cross-entropy over the instruction, every position
// cross-attending to all latent action features. Bidirectional mode: mask
// config.mlm_rate of the content tokens (redrawn until at least one) and
// score only the masked slots.
SpeakerLossResult speaker_loss(const Model& model, const SpeakerBatch& batch, Rng& mask_rng,
                               const RunCtx& rc);

// Per-slot speaker states for the given token ids under a causal or open
// self-attention mask, cross-attending to the latent matrix.
Tensor speaker_token_states(const Model& model, const std::vector<int>& ids, bool causal,
                            const Tensor& latents, const RunCtx& rc);

struct GeneratedInstruction {
  std::vector<int> ids;  // includes CLS and EOS
  std::string text;
};

// Greedy left-to-right decoding from CLS until EOS or the slot budget. Never
// emits PAD, CLS or MASK.
GeneratedInstruction generate_instruction(const Model& model,
                                          const std::vector<Tensor>& latent_actions,
                                          int max_len = kMaxInstructionSlots);

// Score a generated sentence against references with the configured metric.
double score_generated(const std::string& candidate, const std::vector<std::string>& references,
                       const std::string& metric_id, const CiderScorer* corpus_scorer = nullptr);

}  // namespace crossmap
