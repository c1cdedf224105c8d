#include "crossmap/speaker.hpp"

#include <algorithm>
#include <stdexcept>

namespace crossmap {

// Two layers of [self-attention over token slots, cross-attention over the
// latent action features].
Tensor speaker_token_states(const Model& model, const std::vector<int>& ids, bool causal,
                            const Tensor& latents, const RunCtx& rc) {
  const ModelConfig& cfg = model.config();
  const int n = static_cast<int>(ids.size());
  Tensor self_mask = causal ? causal_mask(n) : open_mask(n);
  Tensor x = add(embedding_lookup(model.params().get("cms.emb"), ids), sinusoid_rows(n, cfg.hidden));
  Tensor latents_open = open_mask(latents.rows());
  for (int l = 0; l < cfg.layers; ++l) {
    const std::string base = "cms.L" + std::to_string(l);
    x = attention_block(x, x, self_mask, AttnBlockRef::find(model.params(), base + ".self"),
                        cfg.heads, rc);
    x = attention_block(x, latents, latents_open,
                        AttnBlockRef::find(model.params(), base + ".cross"), cfg.heads, rc);
  }
  return x;
}

namespace {

Tensor vocab_logits(const Model& model, const Tensor& states) {
  return add(matmul(states, model.params().get("cms.out.w")), model.params().get("cms.out.b"));
}

Tensor stack_latents(const Model& model, const std::vector<Tensor>& latent_actions) {
  if (latent_actions.empty()) throw std::invalid_argument("speaker: empty latent action sequence");
  Tensor latents = concat_rows(latent_actions);
  if (latents.cols() != model.config().hidden)
    throw std::invalid_argument("speaker: latent width " + std::to_string(latents.cols()) +
                                " does not match hidden " +
                                std::to_string(model.config().hidden));
  return latents;
}

}  // namespace

SpeakerLossResult speaker_loss(const Model& model, const SpeakerBatch& batch, Rng& mask_rng,
                               const RunCtx& rc) {
  Tensor latents = stack_latents(model, batch.latent_actions);
  const EncodedInstruction& target = batch.target;
  if (target.length < 2 || target.length > kMaxInstructionSlots)
    throw std::invalid_argument("speaker_loss: malformed target instruction");

  SpeakerLossResult result;
  if (batch.mode == SpeakerMode::kCausalGen) {
    // Positions 0..len-2 predict tokens 1..len-1.
    const int n = target.length - 1;
    std::vector<int> input_ids(target.ids.begin(), target.ids.begin() + n);
    std::vector<int> next_ids(target.ids.begin() + 1, target.ids.begin() + 1 + n);
    Tensor states = speaker_token_states(model, input_ids, true, latents, rc);
    result.loss = cross_entropy(vocab_logits(model, states), next_ids);
    return result;
  }

  // Bidirectional masked-token mode over content positions (between CLS and EOS).
  const int content = target.length - 2;
  if (content <= 0) {
    result.skipped = true;
    result.loss = Tensor::scalar(0.0);
    return result;
  }
  std::vector<int> masked_positions;
  for (int attempt = 0; attempt < 64 && masked_positions.empty(); ++attempt) {
    for (int p = 1; p <= content; ++p)
      if (mask_rng.uniform() < model.config().mlm_rate) masked_positions.push_back(p);
  }
  if (masked_positions.empty())
    masked_positions.push_back(1 + mask_rng.uniform_int(content));

  std::vector<int> input_ids(target.ids.begin(), target.ids.begin() + target.length);
  std::vector<int> originals;
  for (int p : masked_positions) {
    originals.push_back(input_ids[static_cast<size_t>(p)]);
    input_ids[static_cast<size_t>(p)] = Vocabulary::kMask;
  }
  Tensor states = speaker_token_states(model, input_ids, false, latents, rc);
  Tensor masked_states = gather_rows(states, masked_positions);
  result.loss = cross_entropy(vocab_logits(model, masked_states), originals);
  result.masked_count = static_cast<int>(masked_positions.size());
  return result;
}

GeneratedInstruction generate_instruction(const Model& model,
                                          const std::vector<Tensor>& latent_actions,
                                          int max_len) {
  Tensor latents = stack_latents(model, latent_actions);
  max_len = std::min(max_len, kMaxInstructionSlots);
  const RunCtx rc = RunCtx::eval();

  GeneratedInstruction out;
  out.ids = {Vocabulary::kCls};
  // Leave one slot for the closing EOS.
  while (static_cast<int>(out.ids.size()) < max_len - 1) {
    Tensor states = speaker_token_states(model, out.ids, true, latents, rc);
    Tensor logits = vocab_logits(model, slice_rows(states, static_cast<int>(out.ids.size()) - 1, 1));
    int best = -1;
    double best_value = 0.0;
    for (int v = 0; v < logits.cols(); ++v) {
      if (v == Vocabulary::kPad || v == Vocabulary::kCls || v == Vocabulary::kMask) continue;
      if (best < 0 || logits(0, v) > best_value) {
        best = v;
        best_value = logits(0, v);
      }
    }
    out.ids.push_back(best);
    if (best == Vocabulary::kEos) break;
  }
  if (out.ids.back() != Vocabulary::kEos) out.ids.push_back(Vocabulary::kEos);
  out.text = decode(model.vocab(), out.ids);
  return out;
}

double score_generated(const std::string& candidate, const std::vector<std::string>& references,
                       const std::string& metric_id, const CiderScorer* corpus_scorer) {
  return score_caption(metric_id, candidate, references, corpus_scorer);
}

}  // namespace crossmap
