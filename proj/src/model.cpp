#include "crossmap/model.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "crossmap/checkpoint.hpp"
#include "crossmap/metrics.hpp"

namespace crossmap {

// --- config ------------------------------------------------------------------

void ModelConfig::validate() const {
  if (hidden <= 0 || heads <= 0 || layers <= 0 || ff_size <= 0)
    throw std::invalid_argument("config: sizes must be positive");
  if (hidden % heads != 0)
    throw std::invalid_argument("config: hidden (" + std::to_string(hidden) +
                                ") must be divisible by heads (" + std::to_string(heads) + ")");
  if (dropout < 0.0 || dropout >= 1.0 || env_dropout < 0.0 || env_dropout >= 1.0 ||
      mlm_rate < 0.0 || mlm_rate >= 1.0)
    throw std::invalid_argument("config: rates must be in [0, 1)");
  if (max_instr != kMaxInstructionSlots)
    throw std::invalid_argument("config: max_instr is fixed at 42");
  if (max_path < 1) throw std::invalid_argument("config: max_path must be positive");
  if (d_sem <= 0 || d_vis <= 0) throw std::invalid_argument("config: feature widths must be positive");
  if (vocab_size <= 0) throw std::invalid_argument("config: vocab_size must be set");
  if (batch_size < 1) throw std::invalid_argument("config: batch_size must be positive");
}

OrderedJson ModelConfig::to_json() const {
  OrderedJson j;
  j["hidden"] = hidden;
  j["layers"] = layers;
  j["heads"] = heads;
  j["ff_size"] = ff_size;
  j["dropout"] = dropout;
  j["env_dropout"] = env_dropout;
  j["max_instr"] = max_instr;
  j["max_path"] = max_path;
  j["lr"] = lr;
  j["beta1"] = beta1;
  j["beta2"] = beta2;
  j["adam_eps"] = adam_eps;
  j["batch_size"] = batch_size;
  j["lambda_threshold"] = lambda_threshold;
  j["score_metric"] = score_metric;
  j["d_sem"] = d_sem;
  j["d_vis"] = d_vis;
  j["vocab_size"] = vocab_size;
  j["path_mask_bidirectional"] = path_mask_bidirectional;
  j["speaker_updates_cmt"] = speaker_updates_cmt;
  j["mlm_rate"] = mlm_rate;
  j["rouge_beta"] = rouge_beta;
  return j;
}

ModelConfig ModelConfig::from_json(const Json& j) {
  ModelConfig c;
  c.hidden = j.at("hidden").get<int>();
  c.layers = j.at("layers").get<int>();
  c.heads = j.at("heads").get<int>();
  c.ff_size = j.at("ff_size").get<int>();
  c.dropout = j.at("dropout").get<double>();
  c.env_dropout = j.at("env_dropout").get<double>();
  c.max_instr = j.at("max_instr").get<int>();
  c.max_path = j.at("max_path").get<int>();
  c.lr = j.at("lr").get<double>();
  c.beta1 = j.at("beta1").get<double>();
  c.beta2 = j.at("beta2").get<double>();
  c.adam_eps = j.at("adam_eps").get<double>();
  c.batch_size = j.at("batch_size").get<int>();
  c.lambda_threshold = j.at("lambda_threshold").get<double>();
  c.score_metric = j.at("score_metric").get<std::string>();
  c.d_sem = j.at("d_sem").get<int>();
  c.d_vis = j.at("d_vis").get<int>();
  c.vocab_size = j.at("vocab_size").get<int>();
  c.path_mask_bidirectional = j.at("path_mask_bidirectional").get<bool>();
  c.speaker_updates_cmt = j.at("speaker_updates_cmt").get<bool>();
  c.mlm_rate = j.at("mlm_rate").get<double>();
  c.rouge_beta = j.at("rouge_beta").get<double>();
  return c;
}

// --- model construction ----------------------------------------------------------

namespace {

Tensor xavier(int rows, int cols, Rng& rng) {
  const double limit = std::sqrt(6.0 / (rows + cols));
  std::vector<double> data(static_cast<size_t>(rows) * static_cast<size_t>(cols));
  for (double& v : data) v = rng.uniform(-limit, limit);
  return Tensor::from_data({rows, cols}, std::move(data), true);
}

Tensor gauss_row(int cols, double stddev, Rng& rng) {
  std::vector<double> data(static_cast<size_t>(cols));
  for (double& v : data) v = rng.normal(0.0, stddev);
  return Tensor::from_data({1, cols}, std::move(data), true);
}

Tensor gauss_matrix(int rows, int cols, double stddev, Rng& rng) {
  std::vector<double> data(static_cast<size_t>(rows) * static_cast<size_t>(cols));
  for (double& v : data) v = rng.normal(0.0, stddev);
  return Tensor::from_data({rows, cols}, std::move(data), true);
}

void add_block_params(ParamStore& store, const std::string& prefix, int d, int ff, Rng& rng) {
  store.add(prefix + ".wq", xavier(d, d, rng));
  store.add(prefix + ".bq", Tensor::zeros({1, d}, true));
  store.add(prefix + ".wk", xavier(d, d, rng));
  store.add(prefix + ".bk", Tensor::zeros({1, d}, true));
  store.add(prefix + ".wv", xavier(d, d, rng));
  store.add(prefix + ".bv", Tensor::zeros({1, d}, true));
  store.add(prefix + ".wo", xavier(d, d, rng));
  store.add(prefix + ".bo", Tensor::zeros({1, d}, true));
  store.add(prefix + ".ln1.g", Tensor::full({1, d}, 1.0, true));
  store.add(prefix + ".ln1.b", Tensor::zeros({1, d}, true));
  store.add(prefix + ".ff.w1", xavier(d, ff, rng));
  store.add(prefix + ".ff.b1", Tensor::zeros({1, ff}, true));
  store.add(prefix + ".ff.w2", xavier(ff, d, rng));
  store.add(prefix + ".ff.b2", Tensor::zeros({1, d}, true));
  store.add(prefix + ".ln2.g", Tensor::full({1, d}, 1.0, true));
  store.add(prefix + ".ln2.b", Tensor::zeros({1, d}, true));
}

}  // namespace

Model::Model(ModelConfig config, Vocabulary vocab, uint64_t seed)
    : config_(std::move(config)), vocab_(std::move(vocab)) {
  config_.vocab_size = vocab_.size();
  config_.validate();
  const int d = config_.hidden;
  const int ff = config_.ff_size;
  const int feat = config_.d_sem + config_.d_vis;
  Rng rng(mix_seed(seed, "model_init"));

  params_.add("cmt.lang.emb", gauss_matrix(vocab_.size(), d, 0.02, rng));
  for (int l = 0; l < config_.layers; ++l) {
    add_block_params(params_, "cmt.lang.L" + std::to_string(l) + ".self", d, ff, rng);
    add_block_params(params_, "cmt.lang.L" + std::to_string(l) + ".cross", d, ff, rng);
  }

  params_.add("cmt.vis.in.w", xavier(feat + 4, d, rng));
  params_.add("cmt.vis.in.b", Tensor::zeros({1, d}, true));
  params_.add("cmt.vis.sum", gauss_row(d, 0.02, rng));
  for (int l = 0; l < config_.layers; ++l) {
    add_block_params(params_, "cmt.vis.L" + std::to_string(l) + ".self", d, ff, rng);
    add_block_params(params_, "cmt.vis.L" + std::to_string(l) + ".cross", d, ff, rng);
  }

  params_.add("cmt.act.in.w", xavier(feat + 5, d, rng));
  params_.add("cmt.act.in.b", Tensor::zeros({1, d}, true));
  params_.add("cmt.act.bos", gauss_row(feat, 0.02, rng));
  params_.add("cmt.act.stop", gauss_row(feat, 0.02, rng));
  params_.add("cmt.act.mask", gauss_row(d, 0.02, rng));
  params_.add("cmt.act.ctx.w", xavier(3 * d, d, rng));
  params_.add("cmt.act.ctx.b", Tensor::zeros({1, d}, true));
  for (int l = 0; l < config_.layers; ++l)
    add_block_params(params_, "cmt.act.L" + std::to_string(l) + ".self", d, ff, rng);

  params_.add("cms.emb", gauss_matrix(vocab_.size(), d, 0.02, rng));
  for (int l = 0; l < config_.layers; ++l) {
    add_block_params(params_, "cms.L" + std::to_string(l) + ".self", d, ff, rng);
    add_block_params(params_, "cms.L" + std::to_string(l) + ".cross", d, ff, rng);
  }
  params_.add("cms.out.w", xavier(d, vocab_.size(), rng));
  params_.add("cms.out.b", Tensor::zeros({1, vocab_.size()}, true));
}

void Model::save(const std::string& path) const {
  OrderedJson meta;
  meta["format_version"] = 1;
  meta["config"] = config_.to_json();
  meta["vocab"] = OrderedJson::parse(vocab_.to_json());
  save_checkpoint(path, meta, params_);
}

Model Model::load(const std::string& path) {
  Checkpoint ckpt = load_checkpoint(path);
  Model m;
  m.config_ = ModelConfig::from_json(ckpt.meta.at("config"));
  m.vocab_ = Vocabulary::from_json(ckpt.meta.at("vocab").dump());
  m.config_.validate();
  // Training checkpoints carry optimizer tensors under "opt."; the model
  // itself is the cmt./cms. subset.
  for (const auto& [name, tensor] : ckpt.params.items())
    if (name.rfind("cmt.", 0) == 0 || name.rfind("cms.", 0) == 0) m.params_.add(name, tensor);
  return m;
}

uint64_t Model::fingerprint(const std::string& prefix) const {
  uint64_t h = 0xCBF29CE484222325ull;
  auto mix = [&h](const void* p, size_t n) {
    const auto* b = static_cast<const uint8_t*>(p);
    for (size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 0x100000001B3ull;
    }
  };
  for (const auto& [name, t] : params_.items()) {
    if (name.rfind(prefix, 0) != 0) continue;
    mix(name.data(), name.size());
    mix(t.data().data(), t.data().size() * sizeof(double));
  }
  return h;
}

// --- masks and positions -----------------------------------------------------------

Tensor causal_mask(int len) {
  std::vector<double> data(static_cast<size_t>(len) * static_cast<size_t>(len), 0.0);
  for (int i = 0; i < len; ++i)
    for (int j = i + 1; j < len; ++j) data[static_cast<size_t>(i) * len + j] = kMaskOff;
  return Tensor::from_data({len, len}, std::move(data));
}

Tensor padding_mask(int valid_len, int total, int rows) {
  if (valid_len < 0 || valid_len > total)
    throw std::invalid_argument("padding_mask: valid_len out of range");
  std::vector<double> data(static_cast<size_t>(rows) * static_cast<size_t>(total), 0.0);
  for (int i = 0; i < rows; ++i)
    for (int j = valid_len; j < total; ++j) data[static_cast<size_t>(i) * total + j] = kMaskOff;
  return Tensor::from_data({rows, total}, std::move(data));
}

Tensor open_mask(int len, int rows) { return Tensor::zeros({rows, len}); }

Tensor sinusoid_rows(int len, int width) {
  std::vector<double> data(static_cast<size_t>(len) * static_cast<size_t>(width));
  for (int pos = 0; pos < len; ++pos) {
    for (int j = 0; j < width; ++j) {
      const double exponent = static_cast<double>(j - (j % 2)) / width;
      const double angle = pos / std::pow(10000.0, exponent);
      data[static_cast<size_t>(pos) * width + j] = (j % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
  }
  return Tensor::from_data({len, width}, std::move(data));
}

// --- attention block ------------------------------------------------------------------

AttnBlockRef AttnBlockRef::find(const ParamStore& params, const std::string& prefix) {
  AttnBlockRef b;
  b.wq = params.get(prefix + ".wq");
  b.bq = params.get(prefix + ".bq");
  b.wk = params.get(prefix + ".wk");
  b.bk = params.get(prefix + ".bk");
  b.wv = params.get(prefix + ".wv");
  b.bv = params.get(prefix + ".bv");
  b.wo = params.get(prefix + ".wo");
  b.bo = params.get(prefix + ".bo");
  b.ln1_g = params.get(prefix + ".ln1.g");
  b.ln1_b = params.get(prefix + ".ln1.b");
  b.ff_w1 = params.get(prefix + ".ff.w1");
  b.ff_b1 = params.get(prefix + ".ff.b1");
  b.ff_w2 = params.get(prefix + ".ff.w2");
  b.ff_b2 = params.get(prefix + ".ff.b2");
  b.ln2_g = params.get(prefix + ".ln2.g");
  b.ln2_b = params.get(prefix + ".ln2.b");
  return b;
}

namespace {

Tensor maybe_dropout(const Tensor& x, const RunCtx& rc) {
  if (!rc.training || rc.dropout == 0.0) return x;
  return dropout(x, rc.dropout, *rc.rng, true);
}

constexpr double kLayerNormEps = 1e-5;

}  // namespace

Tensor attention_block(const Tensor& x, const Tensor& ctx, const Tensor& mask,
                       const AttnBlockRef& block, int heads, const RunCtx& rc) {
  const int d = x.cols();
  if (ctx.cols() != d)
    throw std::invalid_argument("attention_block: width mismatch: " + x.shape_str() + " vs " +
                                ctx.shape_str());
  if (d % heads != 0) throw std::invalid_argument("attention_block: width not divisible by heads");
  const int dh = d / heads;

  Tensor q = add(matmul(x, block.wq), block.bq);
  Tensor k = add(matmul(ctx, block.wk), block.bk);
  Tensor v = add(matmul(ctx, block.wv), block.bv);

  std::vector<Tensor> head_outputs;
  head_outputs.reserve(static_cast<size_t>(heads));
  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
  for (int h = 0; h < heads; ++h) {
    Tensor qh = slice_cols(q, h * dh, dh);
    Tensor kh = slice_cols(k, h * dh, dh);
    Tensor vh = slice_cols(v, h * dh, dh);
    Tensor scores = scale(matmul(qh, transpose(kh)), inv_sqrt_dh);
    Tensor probs = masked_softmax(scores, mask);
    head_outputs.push_back(matmul(probs, vh));
  }
  Tensor attended = add(matmul(concat_cols(head_outputs), block.wo), block.bo);
  Tensor y = layer_norm(add(x, maybe_dropout(attended, rc)), block.ln1_g, block.ln1_b,
                        kLayerNormEps);
  Tensor ff = add(matmul(relu(add(matmul(y, block.ff_w1), block.ff_b1)), block.ff_w2), block.ff_b2);
  return layer_norm(add(y, maybe_dropout(ff, rc)), block.ln2_g, block.ln2_b, kLayerNormEps);
}

// --- encoders -------------------------------------------------------------------------

Tensor instruction_embeddings(const Model& model, const EncodedInstruction& instr) {
  Tensor emb = embedding_lookup(model.params().get("cmt.lang.emb"), instr.ids);
  return add(emb, sinusoid_rows(static_cast<int>(instr.ids.size()), model.config().hidden));
}

Tensor view_input_features(const Model& model, const NavNode& node, const Pose& pose,
                           const RunCtx& rc) {
  const ModelConfig& cfg = model.config();
  if (node.views.size() != kViewsPerNode)
    throw std::invalid_argument("view_input_features: node " + node.id + " has " +
                                std::to_string(node.views.size()) + " views, expected 36");
  const int feat = cfg.d_sem + cfg.d_vis;

  // One environmental dropout mask per step, shared across all 36 views.
  std::vector<double> env_mask;
  if (rc.training && rc.env_dropout > 0.0) {
    env_mask.resize(static_cast<size_t>(feat));
    const double keep_scale = 1.0 / (1.0 - rc.env_dropout);
    for (double& m : env_mask) m = rc.rng->uniform() < rc.env_dropout ? 0.0 : keep_scale;
  }

  std::vector<double> raw(static_cast<size_t>(kViewsPerNode) * static_cast<size_t>(feat + 4));
  for (int i = 0; i < kViewsPerNode; ++i) {
    const ViewFeature& view = node.views[static_cast<size_t>(i)];
    if (static_cast<int>(view.semantic.size()) != cfg.d_sem ||
        static_cast<int>(view.visual.size()) != cfg.d_vis)
      throw std::invalid_argument("view_input_features: feature widths disagree with the config");
    double* row = &raw[static_cast<size_t>(i) * static_cast<size_t>(feat + 4)];
    for (int j = 0; j < cfg.d_sem; ++j) row[j] = view.semantic[static_cast<size_t>(j)];
    for (int j = 0; j < cfg.d_vis; ++j) row[cfg.d_sem + j] = view.visual[static_cast<size_t>(j)];
    if (!env_mask.empty())
      for (int j = 0; j < feat; ++j) row[j] *= env_mask[static_cast<size_t>(j)];
    const double rel_az = angle_diff(view.azimuth, pose.heading);
    const double rel_el = view.elevation - pose.elevation;
    row[feat + 0] = std::cos(rel_az);
    row[feat + 1] = std::sin(rel_az);
    row[feat + 2] = std::cos(rel_el);
    row[feat + 3] = std::sin(rel_el);
  }
  Tensor raw_t = Tensor::from_data({kViewsPerNode, feat + 4}, std::move(raw));
  return add(matmul(raw_t, model.params().get("cmt.vis.in.w")), model.params().get("cmt.vis.in.b"));
}

EncoderOutput encode_language(const Model& model, const EncodedInstruction& instr,
                              const Tensor& token_states, const Tensor& view_ctx,
                              const RunCtx& rc) {
  const ModelConfig& cfg = model.config();
  Tensor pad = Tensor::row(instr.attention_mask);
  Tensor views_open = open_mask(view_ctx.rows());
  Tensor x = token_states;
  for (int l = 0; l < cfg.layers; ++l) {
    const std::string base = "cmt.lang.L" + std::to_string(l);
    x = attention_block(x, x, pad, AttnBlockRef::find(model.params(), base + ".self"), cfg.heads,
                        rc);
    x = attention_block(x, view_ctx, views_open,
                        AttnBlockRef::find(model.params(), base + ".cross"), cfg.heads, rc);
  }
  return EncoderOutput{x, slice_rows(x, 0, 1)};
}

EncoderOutput encode_visual(const Model& model, const Tensor& view_inputs,
                            const Tensor& lang_states, const Tensor& lang_mask,
                            const RunCtx& rc) {
  const ModelConfig& cfg = model.config();
  if (view_inputs.rows() != kViewsPerNode)
    throw std::invalid_argument("encode_visual: expected 36 view rows, got " +
                                view_inputs.shape_str());
  Tensor x = concat_rows({model.params().get("cmt.vis.sum"), view_inputs});
  Tensor self_open = open_mask(x.rows());
  for (int l = 0; l < cfg.layers; ++l) {
    const std::string base = "cmt.vis.L" + std::to_string(l);
    x = attention_block(x, x, self_open, AttnBlockRef::find(model.params(), base + ".self"),
                        cfg.heads, rc);
    x = attention_block(x, lang_states, lang_mask,
                        AttnBlockRef::find(model.params(), base + ".cross"), cfg.heads, rc);
  }
  return EncoderOutput{x, slice_rows(x, 0, 1)};
}

// --- action decoder -----------------------------------------------------------------------

namespace {

Tensor embed_action_input(const Model& model, const Tensor& feature_row,
                          const std::array<double, 5>& positional) {
  Tensor pos = Tensor::row({positional[0], positional[1], positional[2], positional[3],
                            positional[4]});
  Tensor input = concat_cols({feature_row, pos});
  return add(matmul(input, model.params().get("cmt.act.in.w")),
             model.params().get("cmt.act.in.b"));
}

}  // namespace

Tensor embed_action_candidate(const Model& model, const ActionCandidate& cand) {
  if (cand.is_stop)
    return embed_action_input(model, model.params().get("cmt.act.stop"), cand.positional);
  const int feat = model.config().d_sem + model.config().d_vis;
  if (static_cast<int>(cand.feature.size()) != feat)
    throw std::invalid_argument("embed_action_candidate: feature width " +
                                std::to_string(cand.feature.size()) + " disagrees with config " +
                                std::to_string(feat));
  return embed_action_input(model, Tensor::row(cand.feature), cand.positional);
}

Tensor embed_action_start(const Model& model) {
  return embed_action_input(model, model.params().get("cmt.act.bos"), {1.0, 0.0, 1.0, 0.0, 0.0});
}

DecodeOutput decode_action(const Model& model, const std::vector<Tensor>& history,
                           const std::vector<Tensor>& contexts,
                           const std::vector<Tensor>& candidate_embeddings, const RunCtx& rc) {
  if (history.empty() || history.size() != contexts.size())
    throw std::invalid_argument("decode_action: history and contexts must align, got " +
                                std::to_string(history.size()) + " vs " +
                                std::to_string(contexts.size()));
  if (candidate_embeddings.empty())
    throw std::invalid_argument("decode_action: empty candidate set");
  const ModelConfig& cfg = model.config();
  const int steps = static_cast<int>(history.size());

  Tensor seq = add(concat_rows(history), sinusoid_rows(steps, cfg.hidden));
  Tensor causal = causal_mask(steps);
  Tensor first = attention_block(seq, seq, causal,
                                 AttnBlockRef::find(model.params(), "cmt.act.L0.self"), cfg.heads,
                                 rc);
  Tensor ctx = concat_rows(contexts);
  Tensor joined = add(matmul(concat_cols({first, ctx}), model.params().get("cmt.act.ctx.w")),
                      model.params().get("cmt.act.ctx.b"));
  Tensor second = attention_block(joined, joined, causal,
                                  AttnBlockRef::find(model.params(), "cmt.act.L1.self"), cfg.heads,
                                  rc);

  DecodeOutput out;
  out.first_states = first;
  out.second_states = second;
  out.o_a = slice_rows(first, steps - 1, 1);
  out.h_a = slice_rows(second, steps - 1, 1);
  Tensor cand_matrix = concat_rows(candidate_embeddings);
  out.logits = matmul(out.h_a, transpose(cand_matrix));
  out.probs = masked_softmax(out.logits, open_mask(cand_matrix.rows()));
  return out;
}

// --- rollouts -------------------------------------------------------------------------------

namespace {

// Shared per-step machinery for rollouts and path-mask losses: encodes the
// instruction once, then per step computes candidates, their embeddings and
// the step context C(t), and applies the chosen action.
class Walker {
 public:
  Walker(const Model& model, const World& world, const Episode& episode, const RunCtx& rc)
      : model_(model), world_(world), episode_(episode), rc_(rc) {
    if (episode.graph_id != world.id)
      throw std::invalid_argument("rollout: episode " + episode.id + " belongs to graph " +
                                  episode.graph_id + ", not " + world.id);
    encoded_ = encode(model.vocab(), episode.instruction);
    tokens_ = instruction_embeddings(model, encoded_);
    lang_mask_ = Tensor::row(encoded_.attention_mask);
    pose_ = Pose{episode.path.front(), wrap_angle(episode.start_heading), 0.0};
    history_.push_back(embed_action_start(model));
  }

  struct StepData {
    std::vector<ActionCandidate> cands;
    std::vector<Tensor> cand_embs;
  };

  StepData prepare_step() {
    StepData sd;
    sd.cands = candidate_actions(world_.graph, pose_);
    sd.cand_embs.reserve(sd.cands.size());
    for (const ActionCandidate& c : sd.cands)
      sd.cand_embs.push_back(embed_action_candidate(model_, c));
    Tensor views = view_input_features(model_, world_.graph.node(pose_.node_id), pose_, rc_);
    EncoderOutput lang = encode_language(model_, encoded_, tokens_, views, rc_);
    EncoderOutput vis = encode_visual(model_, views, lang.states, lang_mask_, rc_);
    contexts_.push_back(concat_cols({lang.summary, vis.summary}));
    return sd;
  }

  // Ground-truth candidate index for teacher forcing at 0-based step t.
  int teacher_label(const StepData& sd, size_t t) const {
    if (t + 1 < episode_.path.size()) {
      const std::string& want = episode_.path[t + 1];
      for (size_t i = 0; i < sd.cands.size(); ++i)
        if (!sd.cands[i].is_stop && sd.cands[i].to_node == want) return static_cast<int>(i);
      throw std::invalid_argument("teacher forcing: ground-truth step " + episode_.path[t] +
                                  " -> " + want + " is not a candidate");
    }
    return static_cast<int>(sd.cands.size()) - 1;  // STOP is always last
  }

  // Returns true when the action was STOP.
  bool apply(const StepData& sd, int chosen) {
    StepResult r = step(world_.graph, pose_, sd.cands[static_cast<size_t>(chosen)]);
    if (r.terminal) return true;
    history_.push_back(sd.cand_embs[static_cast<size_t>(chosen)]);
    pose_ = r.pose;
    return false;
  }

  const std::vector<Tensor>& history() const { return history_; }
  const std::vector<Tensor>& contexts() const { return contexts_; }
  const Pose& pose() const { return pose_; }

 private:
  const Model& model_;
  const World& world_;
  const Episode& episode_;
  const RunCtx& rc_;
  EncodedInstruction encoded_;
  Tensor tokens_;
  Tensor lang_mask_;
  Pose pose_;
  std::vector<Tensor> history_;
  std::vector<Tensor> contexts_;
};

int sample_index(const std::vector<double>& probs, Rng& rng) {
  const double u = rng.uniform();
  double acc = 0.0;
  for (size_t i = 0; i < probs.size(); ++i) {
    acc += probs[i];
    if (u < acc) return static_cast<int>(i);
  }
  return static_cast<int>(probs.size()) - 1;
}

int argmax_index(const std::vector<double>& probs) {
  int best = 0;
  for (size_t i = 1; i < probs.size(); ++i)
    if (probs[i] > probs[static_cast<size_t>(best)]) best = static_cast<int>(i);
  return best;
}

}  // namespace

TrajectoryRecord rollout(const Model& model, const World& world, const Episode& episode,
                         RolloutMode mode, Rng& policy_rng, const RunCtx& rc) {
  const int max_path = std::max(model.config().max_path,
                                mode == RolloutMode::kTeacherForced
                                    ? static_cast<int>(episode.path.size())
                                    : 0);
  Walker walker(model, world, episode, rc);
  TrajectoryRecord traj;
  traj.episode_id = episode.id;
  traj.nodes.push_back(episode.path.front());

  bool stopped = false;
  for (int t = 0; t < max_path && !stopped; ++t) {
    Walker::StepData sd = walker.prepare_step();
    DecodeOutput dec = decode_action(model, walker.history(), walker.contexts(), sd.cand_embs, rc);

    TrajectoryStep step_rec;
    step_rec.probs = dec.probs.data();
    step_rec.logits = dec.logits;
    for (const ActionCandidate& c : sd.cands) {
      step_rec.cand_to.push_back(c.is_stop ? std::string() : c.to_node);
      step_rec.cand_dist.push_back(c.distance);
    }
    switch (mode) {
      case RolloutMode::kGreedy: step_rec.chosen = argmax_index(step_rec.probs); break;
      case RolloutMode::kSample: step_rec.chosen = sample_index(step_rec.probs, policy_rng); break;
      case RolloutMode::kTeacherForced:
        step_rec.chosen = walker.teacher_label(sd, static_cast<size_t>(t));
        break;
    }
    traj.latent_actions.push_back(dec.o_a);
    stopped = walker.apply(sd, step_rec.chosen);
    if (!stopped) traj.nodes.push_back(walker.pose().node_id);
    traj.steps.push_back(std::move(step_rec));
  }
  traj.truncated = !stopped;

  const std::string& goal = episode.path.back();
  auto ne = shortest_path_length(world.graph, traj.nodes.back(), goal);
  traj.nav_error = ne.has_value() ? *ne : -1.0;
  traj.success = !traj.truncated && ne.has_value() && *ne <= kSuccessRadius;
  return traj;
}

TrajectoryRecord replay_actions(const Model& model, const World& world, const Episode& episode,
                                const std::vector<int>& actions, const RunCtx& rc) {
  Walker walker(model, world, episode, rc);
  TrajectoryRecord traj;
  traj.episode_id = episode.id;
  traj.nodes.push_back(episode.path.front());

  bool stopped = false;
  for (size_t t = 0; t < actions.size(); ++t) {
    if (stopped) throw std::invalid_argument("replay_actions: actions continue past STOP");
    Walker::StepData sd = walker.prepare_step();
    if (actions[t] < 0 || actions[t] >= static_cast<int>(sd.cands.size()))
      throw std::invalid_argument("replay_actions: action index out of range at step " +
                                  std::to_string(t));
    DecodeOutput dec = decode_action(model, walker.history(), walker.contexts(), sd.cand_embs, rc);
    TrajectoryStep step_rec;
    step_rec.probs = dec.probs.data();
    step_rec.logits = dec.logits;
    for (const ActionCandidate& c : sd.cands) {
      step_rec.cand_to.push_back(c.is_stop ? std::string() : c.to_node);
      step_rec.cand_dist.push_back(c.distance);
    }
    step_rec.chosen = actions[t];
    traj.latent_actions.push_back(dec.o_a);
    stopped = walker.apply(sd, step_rec.chosen);
    if (!stopped) traj.nodes.push_back(walker.pose().node_id);
    traj.steps.push_back(std::move(step_rec));
  }
  traj.truncated = !stopped;

  const std::string& goal = episode.path.back();
  auto ne = shortest_path_length(world.graph, traj.nodes.back(), goal);
  traj.nav_error = ne.has_value() ? *ne : -1.0;
  traj.success = !traj.truncated && ne.has_value() && *ne <= kSuccessRadius;
  return traj;
}

std::string TrajectoryRecord::to_json() const {
  OrderedJson j;
  j["episode_id"] = episode_id;
  j["nodes"] = nodes;
  OrderedJson steps_json = OrderedJson::array();
  for (const TrajectoryStep& s : steps) {
    OrderedJson sj;
    sj["probs"] = s.probs;
    sj["to"] = s.cand_to;
    sj["chosen"] = s.chosen;
    steps_json.push_back(std::move(sj));
  }
  j["steps"] = std::move(steps_json);
  j["truncated"] = truncated;
  j["success"] = success;
  if (nav_error >= 0.0)
    j["ne"] = nav_error;
  else
    j["ne"] = nullptr;
  return j.dump();
}

Tensor trajectory_loss(const TrajectoryRecord& traj, const std::vector<int>& labels) {
  if (traj.steps.empty()) throw std::invalid_argument("trajectory_loss: empty trajectory");
  if (labels.size() != traj.steps.size())
    throw std::invalid_argument("trajectory_loss: expected " + std::to_string(traj.steps.size()) +
                                " labels, got " + std::to_string(labels.size()));
  Tensor total;
  for (size_t t = 0; t < traj.steps.size(); ++t) {
    Tensor term = cross_entropy(traj.steps[t].logits, {labels[t]});
    total = t == 0 ? term : add(total, term);
  }
  return scale(total, 1.0 / static_cast<double>(traj.steps.size()));
}

Tensor path_loss(const Model& model, const World& world, const Episode& episode,
                 const RunCtx& rc) {
  Rng unused(0);
  TrajectoryRecord traj = rollout(model, world, episode, RolloutMode::kTeacherForced, unused, rc);
  std::vector<int> labels;
  labels.reserve(traj.steps.size());
  for (const TrajectoryStep& s : traj.steps) labels.push_back(s.chosen);
  return trajectory_loss(traj, labels);
}

namespace {

// Bidirectional variant: all ground-truth slots are visible, the slot holding
// the masked action is replaced by a learned mask embedding, and the decoder
// attends both ways.
Tensor path_mask_loss_bidirectional(const Model& model, const World& world,
                                    const Episode& episode, int masked_step, const RunCtx& rc) {
  Walker walker(model, world, episode, rc);
  const int total_steps = static_cast<int>(episode.path.size());
  std::vector<Tensor> masked_cands;
  int masked_label = -1;

  for (int t = 0; t < total_steps; ++t) {
    Walker::StepData sd = walker.prepare_step();
    const int label = walker.teacher_label(sd, static_cast<size_t>(t));
    if (t == masked_step) {
      masked_cands = sd.cand_embs;
      masked_label = label;
    }
    walker.apply(sd, label);
  }

  std::vector<Tensor> slots = walker.history();  // start slot + actions before STOP
  const int masked_slot = masked_step + 1;
  if (masked_slot < static_cast<int>(slots.size()))
    slots[static_cast<size_t>(masked_slot)] = model.params().get("cmt.act.mask");

  const ModelConfig& cfg = model.config();
  const int steps = static_cast<int>(slots.size());
  Tensor seq = add(concat_rows(slots), sinusoid_rows(steps, cfg.hidden));
  Tensor both_ways = open_mask(steps, steps);
  Tensor first = attention_block(seq, seq, both_ways,
                                 AttnBlockRef::find(model.params(), "cmt.act.L0.self"), cfg.heads,
                                 rc);
  Tensor joined = add(matmul(concat_cols({first, concat_rows(walker.contexts())}),
                             model.params().get("cmt.act.ctx.w")),
                      model.params().get("cmt.act.ctx.b"));
  Tensor second = attention_block(joined, joined, both_ways,
                                  AttnBlockRef::find(model.params(), "cmt.act.L1.self"), cfg.heads,
                                  rc);
  Tensor h_a = slice_rows(second, masked_step, 1);
  Tensor logits = matmul(h_a, transpose(concat_rows(masked_cands)));
  return cross_entropy(logits, {masked_label});
}

}  // namespace

Tensor path_mask_loss(const Model& model, const World& world, const Episode& episode,
                      Rng& mask_rng, const RunCtx& rc, int* out_masked_step) {
  if (episode.path.size() < 2)
    throw std::invalid_argument("path_mask_loss: path must have at least 2 nodes");
  const int total_steps = static_cast<int>(episode.path.size());
  const int masked_step = mask_rng.uniform_int(total_steps);
  if (out_masked_step) *out_masked_step = masked_step;

  if (model.config().path_mask_bidirectional)
    return path_mask_loss_bidirectional(model, world, episode, masked_step, rc);

  // Causal form: the decoder already conditions step m only on steps before m,
  // so the masked prediction is the teacher-forced term at m.
  Rng unused(0);
  TrajectoryRecord traj = rollout(model, world, episode, RolloutMode::kTeacherForced, unused, rc);
  const TrajectoryStep& s = traj.steps[static_cast<size_t>(masked_step)];
  return cross_entropy(s.logits, {s.chosen});
}

}  // namespace crossmap
