#include "crossmap/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <sstream>
#include <stdexcept>

#include "crossmap/checkpoint.hpp"

namespace crossmap {

namespace {

void require_role(const EpisodeSet& set, std::initializer_list<const char*> allowed,
                  const char* what) {
  for (const char* role : allowed)
    if (set.role == role) return;
  throw std::logic_error(std::string(what) + ": refusing to train on dataset role '" + set.role +
                         "'");
}

Rng episode_rng(uint64_t seed, const std::string& phase, int epoch, const std::string& episode_id,
                const std::string& purpose) {
  uint64_t s = mix_seed(seed, phase);
  s = mix_seed(s, static_cast<uint64_t>(epoch));
  s = mix_seed(s, episode_id);
  s = mix_seed(s, purpose);
  return Rng(s);
}

std::vector<size_t> shuffled_order(size_t n, Rng& rng) {
  std::vector<size_t> order(n);
  for (size_t i = 0; i < n; ++i) order[i] = i;
  for (size_t i = n; i > 1; --i) {
    const size_t j = static_cast<size_t>(rng.uniform_int(static_cast<int>(i)));
    std::swap(order[i - 1], order[j]);
  }
  return order;
}

void check_finite_loss(double value, const char* phase, int epoch, const std::string& episode_id) {
  if (!std::isfinite(value))
    throw std::runtime_error(std::string(phase) + ": non-finite loss at epoch " +
                             std::to_string(epoch) + ", episode " + episode_id);
}

AdamConfig adam_config(const ModelConfig& cfg) {
  return AdamConfig{cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps};
}

// Oracle supervision for sampled exploration: the first edge of the shortest
// path from the current node to the goal, STOP at the goal itself.
std::vector<int> shortest_path_labels(const World& world, const TrajectoryRecord& traj,
                                      const std::string& goal) {
  std::vector<int> labels;
  labels.reserve(traj.steps.size());
  std::map<std::string, double> to_goal = geodesic_distances_from(world.graph, goal);
  for (size_t t = 0; t < traj.steps.size(); ++t) {
    const std::string& current = traj.nodes[std::min(t, traj.nodes.size() - 1)];
    const TrajectoryStep& step = traj.steps[t];
    if (current == goal) {
      labels.push_back(static_cast<int>(step.cand_to.size()) - 1);  // STOP is last
      continue;
    }
    int best = -1;
    double best_cost = std::numeric_limits<double>::infinity();
    for (size_t k = 0; k < step.cand_to.size(); ++k) {
      if (step.cand_to[k].empty()) continue;  // STOP
      auto it = to_goal.find(step.cand_to[k]);
      if (it == to_goal.end()) continue;
      const double cost = it->second + step.cand_dist[k];
      if (cost < best_cost - 1e-12) {
        best_cost = cost;
        best = static_cast<int>(k);
      }
    }
    if (best < 0) best = static_cast<int>(step.cand_to.size()) - 1;  // goal unreachable: stop
    labels.push_back(best);
  }
  return labels;
}

std::vector<std::vector<size_t>> make_batches(size_t n, int batch_size, Rng& rng) {
  std::vector<size_t> order = shuffled_order(n, rng);
  std::vector<std::vector<size_t>> batches;
  for (size_t i = 0; i < n; i += static_cast<size_t>(batch_size)) {
    const size_t end = std::min(n, i + static_cast<size_t>(batch_size));
    batches.emplace_back(order.begin() + static_cast<long>(i), order.begin() + static_cast<long>(end));
  }
  return batches;
}

std::vector<Tensor> maybe_detach(const std::vector<Tensor>& latents, bool keep_graph) {
  if (keep_graph) return latents;
  std::vector<Tensor> out;
  out.reserve(latents.size());
  for (const Tensor& t : latents) out.push_back(t.detach());
  return out;
}

}  // namespace

// --- pretrain -----------------------------------------------------------------

TrainResult pretrain(Model& model, const World& world, const Datasets& data, int epochs,
                     uint64_t seed, AdamState& opt, int start_epoch) {
  require_role(data.train, {"train"}, "pretrain");
  TrainResult result;
  if (data.train.episodes.empty()) return result;  // no-op, identity checkpoint
  const ModelConfig& cfg = model.config();
  const AdamConfig adam = adam_config(cfg);

  for (int epoch = start_epoch; epoch < start_epoch + epochs; ++epoch) {
    Rng order_rng(mix_seed(mix_seed(seed, "pretrain_order"), static_cast<uint64_t>(epoch)));
    auto batches = make_batches(data.train.episodes.size(), cfg.batch_size, order_rng);
    double epoch_loss = 0.0;
    size_t seen = 0;
    for (size_t b = 0; b < batches.size(); ++b) {
      const SpeakerMode mode = b % 2 == 0 ? SpeakerMode::kCausalGen : SpeakerMode::kBidirectionalMlm;
      model.params().zero_grads();
      for (size_t idx : batches[b]) {
        const Episode& ep = data.train.episodes[idx];
        Rng drop_rng = episode_rng(seed, "pretrain", epoch, ep.id, "dropout");
        Rng mask_rng = episode_rng(seed, "pretrain", epoch, ep.id, "mask");
        RunCtx rc = RunCtx::train(drop_rng, cfg);

        GradTape tape;
        Rng unused(0);
        TrajectoryRecord traj =
            rollout(model, world, ep, RolloutMode::kTeacherForced, unused, rc);
        Tensor mask_loss;
        if (cfg.path_mask_bidirectional) {
          mask_loss = path_mask_loss(model, world, ep, mask_rng, rc);
        } else {
          const int m = mask_rng.uniform_int(static_cast<int>(traj.steps.size()));
          mask_loss = cross_entropy(traj.steps[static_cast<size_t>(m)].logits,
                                    {traj.steps[static_cast<size_t>(m)].chosen});
        }
        SpeakerBatch sp;
        sp.latent_actions = maybe_detach(traj.latent_actions, cfg.speaker_updates_cmt);
        sp.target = encode(model.vocab(), ep.instruction);
        sp.mode = mode;
        Rng mlm_rng = episode_rng(seed, "pretrain", epoch, ep.id, "mlm");
        SpeakerLossResult spk = speaker_loss(model, sp, mlm_rng, rc);

        Tensor total = spk.skipped ? mask_loss : add(mask_loss, spk.loss);
        check_finite_loss(total.item(), "pretrain", epoch, ep.id);
        epoch_loss += total.item();
        seen += 1;
        tape.backward(scale(total, 1.0 / static_cast<double>(batches[b].size())));
      }
      adam_step(model.params(), opt, adam);
    }
    result.curve.push_back(EpochStats{epoch, epoch_loss / static_cast<double>(seen), {}, {}});
  }
  return result;
}

// --- finetune ------------------------------------------------------------------

TrainResult finetune(Model& model, const World& world, const Datasets& data, int epochs,
                     uint64_t seed, AdamState& opt, int eval_every, int start_epoch) {
  require_role(data.train, {"train", "unlabeled"}, "finetune");
  TrainResult result;
  if (data.train.episodes.empty()) return result;
  const ModelConfig& cfg = model.config();
  const AdamConfig adam = adam_config(cfg);

  for (int epoch = start_epoch; epoch < start_epoch + epochs; ++epoch) {
    Rng order_rng(mix_seed(mix_seed(seed, "finetune_order"), static_cast<uint64_t>(epoch)));
    auto batches = make_batches(data.train.episodes.size(), cfg.batch_size, order_rng);
    double epoch_loss = 0.0;
    size_t seen = 0;
    for (const auto& batch : batches) {
      model.params().zero_grads();
      for (size_t idx : batch) {
        const Episode& ep = data.train.episodes[idx];
        Rng drop_rng = episode_rng(seed, "finetune", epoch, ep.id, "dropout");
        Rng policy_rng = episode_rng(seed, "finetune", epoch, ep.id, "policy");
        RunCtx rc = RunCtx::train(drop_rng, cfg);

        GradTape tape;
        TrajectoryRecord traj = rollout(model, world, ep, RolloutMode::kSample, policy_rng, rc);
        Tensor loss = trajectory_loss(traj, shortest_path_labels(world, traj, ep.path.back()));
        check_finite_loss(loss.item(), "finetune", epoch, ep.id);
        epoch_loss += loss.item();
        seen += 1;
        tape.backward(scale(loss, 1.0 / static_cast<double>(batch.size())));
      }
      adam_step(model.params(), opt, adam);
    }

    EpochStats stats;
    stats.epoch = epoch;
    stats.loss = epoch_loss / static_cast<double>(seen);
    const bool eval_now = eval_every > 0 && ((epoch - start_epoch) % eval_every == eval_every - 1 ||
                                             epoch == start_epoch + epochs - 1);
    if (eval_now) {
      if (!data.val_seen.episodes.empty())
        stats.val_seen_sr = evaluate(model, world, data.val_seen).sr;
      if (!data.val_unseen.episodes.empty())
        stats.val_unseen_sr = evaluate(model, world, data.val_unseen).sr;
    }
    result.curve.push_back(std::move(stats));
  }
  return result;
}

// --- dbt ------------------------------------------------------------------------

namespace {

// Finetune-style pass over episodes whose instructions came from the speaker.
void train_on_generated(Model& model, const World& world, const std::vector<Episode>& episodes,
                        uint64_t seed, const char* phase, AdamState& opt) {
  if (episodes.empty()) return;
  const ModelConfig& cfg = model.config();
  const AdamConfig adam = adam_config(cfg);
  Rng order_rng(mix_seed(seed, std::string(phase) + "_order"));
  auto batches = make_batches(episodes.size(), cfg.batch_size, order_rng);
  for (const auto& batch : batches) {
    model.params().zero_grads();
    for (size_t idx : batch) {
      const Episode& ep = episodes[idx];
      Rng drop_rng = episode_rng(seed, phase, 0, ep.id, "dropout");
      Rng policy_rng = episode_rng(seed, phase, 0, ep.id, "policy");
      RunCtx rc = RunCtx::train(drop_rng, cfg);
      GradTape tape;
      TrajectoryRecord traj = rollout(model, world, ep, RolloutMode::kSample, policy_rng, rc);
      Tensor loss = trajectory_loss(traj, shortest_path_labels(world, traj, ep.path.back()));
      check_finite_loss(loss.item(), phase, 0, ep.id);
      tape.backward(scale(loss, 1.0 / static_cast<double>(batch.size())));
    }
    adam_step(model.params(), opt, adam);
  }
}

// Latents of the ground-truth path, no gradients.
std::vector<Tensor> ground_truth_latents(const Model& model, const World& world,
                                         const Episode& ep) {
  Rng unused(0);
  TrajectoryRecord traj =
      rollout(model, world, ep, RolloutMode::kTeacherForced, unused, RunCtx::eval());
  return traj.latent_actions;
}

}  // namespace

OrderedJson DbtRoundReport::to_json() const {
  OrderedJson j;
  j["stage1_successes"] = stage1_successes;
  j["stage1_rollouts"] = stage1_rollouts;
  j["stage2_kept"] = stage2_kept;
  j["stage2_generated"] = stage2_generated;
  j["speaker_val_score"] = speaker_val_score;
  j["stage3_ran"] = stage3_ran;
  j["stage3_labeled"] = stage3_labeled;
  return j;
}

DbtRoundReport dbt_round(DbtState& state, Model& model, const World& world, const Datasets& data,
                         uint64_t seed, AdamState& opt) {
  require_role(data.train, {"train"}, "dbt");
  const ModelConfig& cfg = model.config();
  const double lambda = cfg.lambda_threshold;
  const AdamConfig adam = adam_config(cfg);
  DbtRoundReport report;

  // CIDEr needs corpus-level document frequencies; use the training
  // instructions, one document per episode.
  std::unique_ptr<CiderScorer> corpus;
  if (cfg.score_metric == "cider" && !data.train.episodes.empty()) {
    std::vector<std::vector<std::string>> docs;
    for (const Episode& ep : data.train.episodes) docs.push_back({ep.instruction});
    corpus = std::make_unique<CiderScorer>(docs);
  }

  // Stage 1: successful sampled rollouts train the speaker on their latents.
  std::vector<PooledTrajectory> fresh_pool;
  for (const Episode& ep : data.train.episodes) {
    Rng policy_rng = episode_rng(seed, "dbt_stage1", 0, ep.id, "policy");
    TrajectoryRecord traj = rollout(model, world, ep, RolloutMode::kSample, policy_rng,
                                    RunCtx::eval());
    report.stage1_rollouts += 1;
    if (!traj.success) continue;
    PooledTrajectory pooled;
    pooled.episode_id = ep.id;
    pooled.success = traj.success;
    for (const TrajectoryStep& s : traj.steps) pooled.actions.push_back(s.chosen);
    if (!pooled.success) throw std::logic_error("dbt: success-only pool violated");
    fresh_pool.push_back(pooled);
    state.successful_trajectories.push_back(pooled);
    report.stage1_successes += 1;
  }
  if (!fresh_pool.empty()) {
    Rng order_rng(mix_seed(seed, "dbt_stage1_order"));
    auto batches = make_batches(fresh_pool.size(), cfg.batch_size, order_rng);
    std::map<std::string, const Episode*> by_id;
    for (const Episode& ep : data.train.episodes) by_id[ep.id] = &ep;
    size_t batch_no = 0;
    for (const auto& batch : batches) {
      const SpeakerMode mode =
          batch_no++ % 2 == 0 ? SpeakerMode::kCausalGen : SpeakerMode::kBidirectionalMlm;
      model.params().zero_grads();
      for (size_t idx : batch) {
        const PooledTrajectory& pooled = fresh_pool[idx];
        const Episode& ep = *by_id.at(pooled.episode_id);
        Rng drop_rng = episode_rng(seed, "dbt_stage1", 0, ep.id, "dropout");
        RunCtx rc = RunCtx::train(drop_rng, cfg);
        GradTape tape;
        TrajectoryRecord traj = replay_actions(model, world, ep, pooled.actions, rc);
        SpeakerBatch sp;
        sp.latent_actions = maybe_detach(traj.latent_actions, cfg.speaker_updates_cmt);
        sp.target = encode(model.vocab(), ep.instruction);
        sp.mode = mode;
        Rng mlm_rng = episode_rng(seed, "dbt_stage1", 0, ep.id, "mlm");
        SpeakerLossResult spk = speaker_loss(model, sp, mlm_rng, rc);
        if (spk.skipped) continue;
        check_finite_loss(spk.loss.item(), "dbt_stage1", 0, ep.id);
        tape.backward(scale(spk.loss, 1.0 / static_cast<double>(batch.size())));
      }
      adam_step(model.params(), opt, adam);
    }
  }
  report.cmt_fingerprint_after_stage1 = model.fingerprint("cmt.");

  // Stage 2: the speaker labels ground-truth paths; pairs scoring >= lambda
  // train the path network.
  std::vector<Episode> stage2_pairs;
  for (const Episode& ep : data.train.episodes) {
    std::vector<Tensor> latents = ground_truth_latents(model, world, ep);
    GeneratedInstruction gen = generate_instruction(model, latents);
    report.stage2_generated += 1;
    const double score =
        score_generated(gen.text, {ep.instruction}, cfg.score_metric, corpus.get());
    if (!(score >= lambda)) continue;
    PooledInstruction pooled{ep.id, gen.text, score, cfg.score_metric};
    if (!(pooled.score >= lambda)) throw std::logic_error("dbt: stage-2 score filter violated");
    state.generated_instructions.push_back(pooled);
    Episode relabeled = ep;
    relabeled.instruction = gen.text;
    stage2_pairs.push_back(std::move(relabeled));
    report.stage2_kept += 1;
  }
  train_on_generated(model, world, stage2_pairs, mix_seed(seed, "dbt_stage2"), "dbt_stage2", opt);

  // Stage 3: gate on the speaker's mean validation score, then label the
  // unlabeled paths.
  double val_sum = 0.0;
  int val_count = 0;
  for (const Episode& ep : data.val_seen.episodes) {
    std::vector<Tensor> latents = ground_truth_latents(model, world, ep);
    GeneratedInstruction gen = generate_instruction(model, latents);
    val_sum += score_generated(gen.text, {ep.instruction}, cfg.score_metric, corpus.get());
    val_count += 1;
  }
  report.speaker_val_score = val_count > 0 ? val_sum / val_count : 0.0;
  state.speaker_val_score = report.speaker_val_score;

  if (val_count > 0 && report.speaker_val_score >= lambda) {
    report.stage3_ran = true;
    std::vector<Episode> stage3_pairs;
    for (const Episode& ep : data.unlabeled.episodes) {
      std::vector<Tensor> latents = ground_truth_latents(model, world, ep);
      GeneratedInstruction gen = generate_instruction(model, latents);
      Episode relabeled = ep;
      relabeled.instruction = gen.text;
      stage3_pairs.push_back(std::move(relabeled));
      state.unlabeled_instructions.push_back(
          PooledInstruction{ep.id, gen.text, report.speaker_val_score, cfg.score_metric});
      report.stage3_labeled += 1;
    }
    train_on_generated(model, world, stage3_pairs, mix_seed(seed, "dbt_stage3"), "dbt_stage3",
                       opt);
  }
  report.cmt_fingerprint_after_round = model.fingerprint("cmt.");
  return report;
}

// --- evaluation -------------------------------------------------------------------

MetricsReport evaluate(const Model& model, const World& world, const EpisodeSet& episodes,
                       RolloutMode mode, EvalPolicy policy, uint64_t seed) {
  std::vector<NavOutcome> outcomes;
  outcomes.reserve(episodes.episodes.size());
  for (const Episode& ep : episodes.episodes) {
    NavOutcome out;
    out.episode_id = ep.id;
    out.goal = ep.path.back();
    switch (policy) {
      case EvalPolicy::kOracle:
        out.path = ep.path;
        break;
      case EvalPolicy::kAlwaysStop:
        out.path = {ep.path.front()};
        break;
      case EvalPolicy::kModel: {
        Rng policy_rng = episode_rng(seed, "evaluate", 0, ep.id, "policy");
        TrajectoryRecord traj = rollout(model, world, ep, mode, policy_rng, RunCtx::eval());
        out.path = traj.nodes;
        out.truncated = traj.truncated;
        break;
      }
    }
    outcomes.push_back(std::move(out));
  }
  return nav_metrics(world.graph, outcomes);
}

double teacher_forced_accuracy(const Model& model, const World& world,
                               const EpisodeSet& episodes) {
  size_t correct = 0, total = 0;
  Rng unused(0);
  for (const Episode& ep : episodes.episodes) {
    TrajectoryRecord traj =
        rollout(model, world, ep, RolloutMode::kTeacherForced, unused, RunCtx::eval());
    for (const TrajectoryStep& s : traj.steps) {
      int best = 0;
      for (size_t k = 1; k < s.probs.size(); ++k)
        if (s.probs[k] > s.probs[static_cast<size_t>(best)]) best = static_cast<int>(k);
      if (best == s.chosen) ++correct;
      ++total;
    }
  }
  return total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total);
}

// --- training checkpoints -------------------------------------------------------------

void save_training_checkpoint(const std::string& path, const Model& model, const AdamState& opt) {
  OrderedJson meta;
  meta["format_version"] = 1;
  meta["config"] = model.config().to_json();
  meta["vocab"] = OrderedJson::parse(model.vocab().to_json());
  meta["adam_step"] = opt.step;
  meta["adam_skipped"] = opt.skipped_updates;

  ParamStore all;
  for (const auto& [name, tensor] : model.params().items()) all.add(name, tensor);
  for (const auto& [name, moments] : opt.moments) {
    if (!model.params().contains(name)) continue;
    const auto& shape = model.params().get(name).shape();
    all.add("opt.m." + name, Tensor::from_data(shape, moments.m));
    all.add("opt.v." + name, Tensor::from_data(shape, moments.v));
  }
  save_checkpoint(path, meta, all);
}

Model load_training_checkpoint(const std::string& path, AdamState* opt) {
  Model model = Model::load(path);
  if (opt) {
    Checkpoint ckpt = load_checkpoint(path);
    opt->step = ckpt.meta.value("adam_step", 0);
    opt->skipped_updates = ckpt.meta.value("adam_skipped", 0);
    opt->moments.clear();
    for (const auto& [name, tensor] : ckpt.params.items()) {
      if (name.rfind("opt.m.", 0) == 0)
        opt->moments[name.substr(6)].m = tensor.data();
      else if (name.rfind("opt.v.", 0) == 0)
        opt->moments[name.substr(6)].v = tensor.data();
    }
  }
  return model;
}

// --- plans ---------------------------------------------------------------------------

namespace {

ModelConfig config_from_partial_json(const Json& j) {
  ModelConfig c;
  for (const auto& [key, value] : j.items()) {
    try {
      if (key == "hidden") c.hidden = value.get<int>();
      else if (key == "layers") c.layers = value.get<int>();
      else if (key == "heads") c.heads = value.get<int>();
      else if (key == "ff_size") c.ff_size = value.get<int>();
      else if (key == "dropout") c.dropout = value.get<double>();
      else if (key == "env_dropout") c.env_dropout = value.get<double>();
      else if (key == "max_instr") c.max_instr = value.get<int>();
      else if (key == "max_path") c.max_path = value.get<int>();
      else if (key == "lr") c.lr = value.get<double>();
      else if (key == "beta1") c.beta1 = value.get<double>();
      else if (key == "beta2") c.beta2 = value.get<double>();
      else if (key == "adam_eps") c.adam_eps = value.get<double>();
      else if (key == "batch_size") c.batch_size = value.get<int>();
      else if (key == "lambda_threshold") c.lambda_threshold = value.get<double>();
      else if (key == "score_metric") c.score_metric = value.get<std::string>();
      else if (key == "d_sem") c.d_sem = value.get<int>();
      else if (key == "d_vis") c.d_vis = value.get<int>();
      else if (key == "vocab_size") c.vocab_size = value.get<int>();
      else if (key == "path_mask_bidirectional") c.path_mask_bidirectional = value.get<bool>();
      else if (key == "speaker_updates_cmt") c.speaker_updates_cmt = value.get<bool>();
      else if (key == "mlm_rate") c.mlm_rate = value.get<double>();
      else if (key == "rouge_beta") c.rouge_beta = value.get<double>();
      else throw std::invalid_argument("plan: unknown config key '" + key + "'");
    } catch (const Json::exception&) {
      throw std::invalid_argument("plan: bad value for config key '" + key + "'");
    }
  }
  return c;
}

}  // namespace

TrainPlan TrainPlan::from_json(const Json& j) {
  TrainPlan plan;
  auto need = [&j](const char* key) -> const Json& {
    if (!j.contains(key)) throw std::invalid_argument("plan: missing key '" + std::string(key) + "'");
    return j.at(key);
  };
  plan.phase = need("phase").get<std::string>();
  if (plan.phase != "pretrain" && plan.phase != "finetune" && plan.phase != "dbt")
    throw std::invalid_argument("plan: phase must be pretrain, finetune or dbt, got '" +
                                plan.phase + "'");
  plan.epochs = need("epochs").get<int>();
  if (plan.epochs < 1) throw std::invalid_argument("plan: key 'epochs' must be at least 1");
  plan.seed = need("seed").get<uint64_t>();
  plan.start_epoch = j.value("start_epoch", 0);
  plan.eval_every = j.value("eval_every", 1);
  plan.dbt_rounds = j.value("dbt_rounds", 2);
  if (j.contains("config")) plan.config = config_from_partial_json(j.at("config"));
  plan.world_path = need("world").get<std::string>();
  const Json& datasets = need("datasets");
  if (!datasets.contains("train"))
    throw std::invalid_argument("plan: missing key 'datasets.train'");
  plan.train_path = datasets.at("train").get<std::string>();
  plan.val_seen_path = datasets.value("val_seen", "");
  plan.val_unseen_path = datasets.value("val_unseen", "");
  plan.unlabeled_path = datasets.value("unlabeled", "");
  return plan;
}

OrderedJson TrainPlan::to_json() const {
  OrderedJson j;
  j["format_version"] = 1;
  j["phase"] = phase;
  j["epochs"] = epochs;
  j["start_epoch"] = start_epoch;
  j["seed"] = seed;
  j["eval_every"] = eval_every;
  j["dbt_rounds"] = dbt_rounds;
  j["config"] = config.to_json();
  j["world"] = world_path;
  OrderedJson d;
  d["train"] = train_path;
  d["val_seen"] = val_seen_path;
  d["val_unseen"] = val_unseen_path;
  d["unlabeled"] = unlabeled_path;
  j["datasets"] = d;
  return j;
}

std::string TrainResult::csv() const {
  std::ostringstream out;
  out << "epoch,loss,val_seen_sr,val_unseen_sr\n";
  for (const EpochStats& row : curve) {
    out << row.epoch << ',' << OrderedJson(row.loss).dump() << ',';
    if (row.val_seen_sr) out << OrderedJson(*row.val_seen_sr).dump();
    out << ',';
    if (row.val_unseen_sr) out << OrderedJson(*row.val_unseen_sr).dump();
    out << '\n';
  }
  return out.str();
}

PlanRunResult run_plan(const TrainPlan& plan, const std::string& model_in,
                       const std::string& out_dir) {
  namespace fs = std::filesystem;
  if (plan.world_path.empty() || !fs::exists(plan.world_path))
    throw std::invalid_argument("plan: key 'world' names a missing file: " + plan.world_path);
  auto load_set = [](const std::string& path, const std::string& role,
                     bool required) -> EpisodeSet {
    if (path.empty()) {
      if (required)
        throw std::invalid_argument("plan: missing key 'datasets." + role + "'");
      return EpisodeSet{{}, role};
    }
    if (!fs::exists(path))
      throw std::invalid_argument("plan: key 'datasets." + role + "' names a missing file: " +
                                  path);
    return EpisodeSet{load_episodes(path), role};
  };

  World world = load_world(plan.world_path);
  Datasets data;
  data.train = load_set(plan.train_path, "train", true);
  data.val_seen = load_set(plan.val_seen_path, "val_seen", false);
  data.val_unseen = load_set(plan.val_unseen_path, "val_unseen", false);
  data.unlabeled = load_set(plan.unlabeled_path, "unlabeled", false);
  for (const Episode& ep : data.train.episodes) validate_episode(world.graph, ep);

  AdamState opt;
  std::optional<Model> model;
  if (!model_in.empty()) {
    if (!fs::exists(model_in))
      throw std::invalid_argument("plan: model checkpoint missing: " + model_in);
    // Optimizer moments resume only when continuing the same phase.
    model = load_training_checkpoint(model_in, plan.start_epoch > 0 ? &opt : nullptr);
  } else {
    std::vector<std::string> corpus;
    for (const Episode& ep : data.train.episodes)
      if (!ep.instruction.empty()) corpus.push_back(ep.instruction);
    if (corpus.empty())
      throw std::invalid_argument("plan: training set has no instructions to build a vocabulary");
    Vocabulary vocab = Vocabulary::build(corpus);
    ModelConfig cfg = plan.config;
    cfg.vocab_size = vocab.size();
    model.emplace(cfg, std::move(vocab), plan.seed);
  }

  fs::create_directories(out_dir);
  PlanRunResult result;
  OrderedJson summary;
  summary["phase"] = plan.phase;
  summary["seed"] = plan.seed;
  summary["epochs"] = plan.epochs;

  if (plan.phase == "pretrain") {
    TrainResult tr = pretrain(*model, world, data, plan.epochs, plan.seed, opt, plan.start_epoch);
    result.curve_path = (fs::path(out_dir) / "pretrain_curve.csv").string();
    write_file(result.curve_path, tr.csv());
    if (!tr.curve.empty()) summary["final_loss"] = tr.curve.back().loss;
  } else if (plan.phase == "finetune") {
    TrainResult tr = finetune(*model, world, data, plan.epochs, plan.seed, opt, plan.eval_every,
                              plan.start_epoch);
    result.curve_path = (fs::path(out_dir) / "finetune_curve.csv").string();
    write_file(result.curve_path, tr.csv());
    if (!tr.curve.empty()) {
      summary["final_loss"] = tr.curve.back().loss;
      if (tr.curve.back().val_seen_sr) summary["val_seen_sr"] = *tr.curve.back().val_seen_sr;
      if (tr.curve.back().val_unseen_sr) summary["val_unseen_sr"] = *tr.curve.back().val_unseen_sr;
    }
  } else if (plan.phase == "dbt") {
    DbtState state;
    OrderedJson rounds = OrderedJson::array();
    std::string rounds_text;
    for (int r = 0; r < plan.dbt_rounds; ++r) {
      DbtRoundReport report =
          dbt_round(state, *model, world, data, mix_seed(plan.seed, static_cast<uint64_t>(r)), opt);
      OrderedJson row = report.to_json();
      row["round"] = r;
      rounds.push_back(row);
      rounds_text += row.dump();
      rounds_text += '\n';
    }
    summary["rounds"] = rounds;
    result.curve_path = (fs::path(out_dir) / "dbt_rounds.jsonl").string();
    write_file(result.curve_path, rounds_text);
  }

  result.checkpoint_path = (fs::path(out_dir) / ("model_" + plan.phase + ".ckpt")).string();
  save_training_checkpoint(result.checkpoint_path, *model, opt);
  summary["checkpoint"] = result.checkpoint_path;
  summary["curve"] = result.curve_path;
  result.summary = std::move(summary);
  return result;
}

}  // namespace crossmap
