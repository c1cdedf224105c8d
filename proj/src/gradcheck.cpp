#include "crossmap/gradcheck.hpp"

#include <cmath>
#include <functional>

#include "crossmap/model.hpp"
#include "crossmap/speaker.hpp"
#include "crossmap/tensor.hpp"

namespace crossmap {

namespace {

constexpr double kOpTolerance = 1e-4;
constexpr double kModelTolerance = 1e-3;
constexpr double kEps = 1e-3;

Tensor random_tensor(std::vector<int> shape, Rng& rng, double lo = -1.0, double hi = 1.0,
                     bool requires_grad = false) {
  size_t n = 1;
  for (int d : shape) n *= static_cast<size_t>(d);
  std::vector<double> data(n);
  for (double& v : data) v = rng.uniform(lo, hi);
  return Tensor::from_data(std::move(shape), std::move(data), requires_grad);
}

Tensor reduce(const Tensor& t, const Tensor& wl, const Tensor& wr) {
  return matmul(matmul(wl, t), wr);
}

double guarded_rel_err(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1.0});
}

// Max relative error between reverse-mode and central-difference gradients of
// forward() over sampled components of the given inputs.
double max_fd_error(const std::vector<Tensor>& inputs, const std::function<Tensor()>& forward,
                    Rng& rng, int samples_per_input = 6) {
  {
    GradTape tape;
    tape.backward(forward());
  }
  double worst = 0.0;
  for (const Tensor& input : inputs) {
    auto node = input.node();
    const int n = static_cast<int>(node->data.size());
    for (int s = 0; s < samples_per_input; ++s) {
      const size_t i = static_cast<size_t>(rng.uniform_int(n));
      const double saved = node->data[i];
      node->data[i] = saved + kEps;
      const double f_plus = forward().item();
      node->data[i] = saved - kEps;
      const double f_minus = forward().item();
      node->data[i] = saved;
      const double fd = (f_plus - f_minus) / (2.0 * kEps);
      const double ad = node->grad.empty() ? 0.0 : node->grad[i];
      worst = std::max(worst, guarded_rel_err(ad, fd));
    }
  }
  return worst;
}

void run_entry(GradCheckReport& report, const std::string& name, double tolerance,
               const std::function<double()>& measure) {
  GradCheckEntry entry;
  entry.name = name;
  entry.tolerance = tolerance;
  entry.max_rel_err = measure();
  entry.pass = entry.max_rel_err < tolerance;
  report.entries.push_back(std::move(entry));
}

}  // namespace

bool GradCheckReport::all_pass() const {
  for (const GradCheckEntry& e : entries)
    if (!e.pass) return false;
  return true;
}

OrderedJson GradCheckReport::to_json() const {
  OrderedJson j;
  j["pass"] = all_pass();
  OrderedJson rows = OrderedJson::array();
  for (const GradCheckEntry& e : entries) {
    OrderedJson row;
    row["name"] = e.name;
    row["max_rel_err"] = e.max_rel_err;
    row["tolerance"] = e.tolerance;
    row["pass"] = e.pass;
    rows.push_back(std::move(row));
  }
  j["checks"] = std::move(rows);
  return j;
}

GradCheckReport gradcheck_ops(uint64_t seed) {
  GradCheckReport report;
  Rng rng(mix_seed(seed, "gradcheck_ops"));

  run_entry(report, "matmul", kOpTolerance, [&rng]() {
    Tensor a = random_tensor({3, 4}, rng, -1, 1, true);
    Tensor b = random_tensor({4, 2}, rng, -1, 1, true);
    Tensor wl = random_tensor({1, 3}, rng), wr = random_tensor({2, 1}, rng);
    return max_fd_error({a, b}, [&]() { return reduce(matmul(a, b), wl, wr); }, rng);
  });
  run_entry(report, "transpose", kOpTolerance, [&rng]() {
    Tensor a = random_tensor({3, 5}, rng, -1, 1, true);
    Tensor wl = random_tensor({1, 5}, rng), wr = random_tensor({3, 1}, rng);
    return max_fd_error({a}, [&]() { return reduce(transpose(a), wl, wr); }, rng);
  });
  run_entry(report, "add", kOpTolerance, [&rng]() {
    Tensor a = random_tensor({3, 4}, rng, -1, 1, true);
    Tensor b = random_tensor({3, 4}, rng, -1, 1, true);
    Tensor wl = random_tensor({1, 3}, rng), wr = random_tensor({4, 1}, rng);
    return max_fd_error({a, b}, [&]() { return reduce(add(a, b), wl, wr); }, rng);
  });
  run_entry(report, "add_row_broadcast", kOpTolerance, [&rng]() {
    Tensor a = random_tensor({3, 4}, rng, -1, 1, true);
    Tensor b = random_tensor({1, 4}, rng, -1, 1, true);
    Tensor wl = random_tensor({1, 3}, rng), wr = random_tensor({4, 1}, rng);
    return max_fd_error({a, b}, [&]() { return reduce(add(a, b), wl, wr); }, rng);
  });
  run_entry(report, "scale", kOpTolerance, [&rng]() {
    Tensor a = random_tensor({2, 6}, rng, -1, 1, true);
    Tensor wl = random_tensor({1, 2}, rng), wr = random_tensor({6, 1}, rng);
    return max_fd_error({a}, [&]() { return reduce(scale(a, -0.73), wl, wr); }, rng);
  });
  run_entry(report, "relu", kOpTolerance, [&rng]() {
    // Away from the kink.
    std::vector<double> vals(12);
    for (double& v : vals) {
      do {
        v = rng.uniform(-1, 1);
      } while (std::abs(v) < 0.05);
    }
    Tensor a = Tensor::from_data({3, 4}, vals, true);
    Tensor wl = random_tensor({1, 3}, rng), wr = random_tensor({4, 1}, rng);
    return max_fd_error({a}, [&]() { return reduce(relu(a), wl, wr); }, rng);
  });
  run_entry(report, "concat_cols", kOpTolerance, [&rng]() {
    Tensor a = random_tensor({3, 2}, rng, -1, 1, true);
    Tensor b = random_tensor({3, 3}, rng, -1, 1, true);
    Tensor wl = random_tensor({1, 3}, rng), wr = random_tensor({5, 1}, rng);
    return max_fd_error({a, b}, [&]() { return reduce(concat_cols({a, b}), wl, wr); }, rng);
  });
  run_entry(report, "concat_rows", kOpTolerance, [&rng]() {
    Tensor a = random_tensor({2, 4}, rng, -1, 1, true);
    Tensor b = random_tensor({3, 4}, rng, -1, 1, true);
    Tensor wl = random_tensor({1, 5}, rng), wr = random_tensor({4, 1}, rng);
    return max_fd_error({a, b}, [&]() { return reduce(concat_rows({a, b}), wl, wr); }, rng);
  });
  run_entry(report, "slice_cols", kOpTolerance, [&rng]() {
    Tensor a = random_tensor({3, 6}, rng, -1, 1, true);
    Tensor wl = random_tensor({1, 3}, rng), wr = random_tensor({3, 1}, rng);
    return max_fd_error({a}, [&]() { return reduce(slice_cols(a, 2, 3), wl, wr); }, rng);
  });
  run_entry(report, "slice_rows", kOpTolerance, [&rng]() {
    Tensor a = random_tensor({5, 3}, rng, -1, 1, true);
    Tensor wl = random_tensor({1, 2}, rng), wr = random_tensor({3, 1}, rng);
    return max_fd_error({a}, [&]() { return reduce(slice_rows(a, 1, 2), wl, wr); }, rng);
  });
  run_entry(report, "embedding_lookup", kOpTolerance, [&rng]() {
    Tensor table = random_tensor({7, 3}, rng, -1, 1, true);
    const std::vector<int> ids = {0, 3, 3, 6, 1};
    Tensor wl = random_tensor({1, 5}, rng), wr = random_tensor({3, 1}, rng);
    return max_fd_error({table}, [&]() { return reduce(embedding_lookup(table, ids), wl, wr); },
                        rng);
  });
  run_entry(report, "masked_softmax", kOpTolerance, [&rng]() {
    Tensor scores = random_tensor({3, 5}, rng, -2, 2, true);
    std::vector<double> mask_data(15, 0.0);
    mask_data[2] = kMaskOff;
    mask_data[6] = kMaskOff;
    mask_data[9] = kMaskOff;
    Tensor mask = Tensor::from_data({3, 5}, mask_data);
    Tensor wl = random_tensor({1, 3}, rng), wr = random_tensor({5, 1}, rng);
    return max_fd_error({scores}, [&]() { return reduce(masked_softmax(scores, mask), wl, wr); },
                        rng);
  });
  run_entry(report, "layer_norm", kOpTolerance, [&rng]() {
    Tensor x = random_tensor({3, 6}, rng, -1, 1, true);
    Tensor gain = random_tensor({1, 6}, rng, 0.5, 1.5, true);
    Tensor bias = random_tensor({1, 6}, rng, -0.5, 0.5, true);
    Tensor wl = random_tensor({1, 3}, rng), wr = random_tensor({6, 1}, rng);
    return max_fd_error({x, gain, bias},
                        [&]() { return reduce(layer_norm(x, gain, bias, 1e-5), wl, wr); }, rng);
  });
  run_entry(report, "cross_entropy", kOpTolerance, [&rng]() {
    Tensor logits = random_tensor({4, 5}, rng, -1, 1, true);
    const std::vector<int> targets = {1, 0, 4, 2};
    return max_fd_error({logits}, [&]() { return cross_entropy(logits, targets); }, rng);
  });
  run_entry(report, "dropout", kOpTolerance, [&rng]() {
    Tensor x = random_tensor({4, 5}, rng, -1, 1, true);
    Tensor wl = random_tensor({1, 4}, rng), wr = random_tensor({5, 1}, rng);
    return max_fd_error({x},
                        [&]() {
                          Rng fixed(42);  // identical mask on every call
                          return reduce(dropout(x, 0.3, fixed, true), wl, wr);
                        },
                        rng);
  });
  return report;
}

GradCheckReport gradcheck_model(uint64_t seed) {
  GradCheckReport report;
  Rng rng(mix_seed(seed, "gradcheck_model"));

  // Two-node world with a tiny network so finite differences stay fast.
  WorldSpec spec;
  spec.num_nodes = 2;
  spec.d_sem = 6;
  spec.d_vis = 4;
  spec.room_labels = {"kitchen", "hallway"};
  spec.landmark_labels = {"sofa", "table", "lamp"};
  World world = generate_world(mix_seed(seed, "world"), spec);
  std::vector<Episode> episodes =
      generate_episodes(mix_seed(seed, "episodes"), world, EpisodeGenOptions{1, 2, 2, true});
  const Episode& ep = episodes.front();

  Vocabulary vocab = Vocabulary::build({ep.instruction});
  ModelConfig cfg;
  cfg.hidden = 8;
  cfg.heads = 2;
  cfg.ff_size = 12;
  cfg.d_sem = spec.d_sem;
  cfg.d_vis = spec.d_vis;
  cfg.vocab_size = vocab.size();
  Model model(cfg, vocab, mix_seed(seed, "params"));

  // d(path_loss)/d(theta) for a few sampled components of every parameter.
  {
    GradTape tape;
    tape.backward(path_loss(model, world, ep, RunCtx::eval()));
  }
  for (const auto& [name, tensor] : model.params().items()) {
    if (name.rfind("cms.", 0) == 0) continue;
    if (name == "cmt.act.mask") continue;  // bidirectional variant only
    auto node = tensor.node();
    GradCheckEntry entry;
    entry.name = "path_loss/" + name;
    entry.tolerance = kModelTolerance;
    const int samples = std::min<int>(3, static_cast<int>(node->data.size()));
    for (int s = 0; s < samples; ++s) {
      const size_t i = static_cast<size_t>(rng.uniform_int(static_cast<int>(node->data.size())));
      const double saved = node->data[i];
      node->data[i] = saved + kEps;
      const double f_plus = path_loss(model, world, ep, RunCtx::eval()).item();
      node->data[i] = saved - kEps;
      const double f_minus = path_loss(model, world, ep, RunCtx::eval()).item();
      node->data[i] = saved;
      const double fd = (f_plus - f_minus) / (2.0 * kEps);
      const double ad = node->grad.empty() ? 0.0 : node->grad[i];
      entry.max_rel_err = std::max(entry.max_rel_err, guarded_rel_err(ad, fd));
    }
    entry.pass = entry.max_rel_err < entry.tolerance;
    report.entries.push_back(std::move(entry));
  }

  // The speaker loss on teacher-forced latents reaches the speaker parameters
  // and, through the latents, the path network.
  {
    model.params().zero_grads();
    auto speaker_objective = [&]() {
      Rng unused(0);
      TrajectoryRecord traj =
          rollout(model, world, ep, RolloutMode::kTeacherForced, unused, RunCtx::eval());
      SpeakerBatch batch;
      batch.latent_actions = traj.latent_actions;
      batch.target = encode(model.vocab(), ep.instruction);
      batch.mode = SpeakerMode::kCausalGen;
      Rng mask_rng(7);
      return speaker_loss(model, batch, mask_rng, RunCtx::eval()).loss;
    };
    {
      GradTape tape;
      tape.backward(speaker_objective());
    }
    for (const std::string name : {"cms.emb", "cms.out.w", "cmt.act.in.w", "cmt.lang.emb"}) {
      const Tensor& tensor = model.params().get(name);
      auto node = tensor.node();
      GradCheckEntry entry;
      entry.name = "speaker_loss/" + name;
      entry.tolerance = kModelTolerance;
      for (int s = 0; s < 3; ++s) {
        const size_t i = static_cast<size_t>(rng.uniform_int(static_cast<int>(node->data.size())));
        const double saved = node->data[i];
        node->data[i] = saved + kEps;
        const double f_plus = speaker_objective().item();
        node->data[i] = saved - kEps;
        const double f_minus = speaker_objective().item();
        node->data[i] = saved;
        const double fd = (f_plus - f_minus) / (2.0 * kEps);
        const double ad = node->grad.empty() ? 0.0 : node->grad[i];
        entry.max_rel_err = std::max(entry.max_rel_err, guarded_rel_err(ad, fd));
      }
      entry.pass = entry.max_rel_err < entry.tolerance;
      report.entries.push_back(std::move(entry));
    }
  }
  return report;
}

GradCheckReport gradcheck(const std::string& scope, uint64_t seed) {
  GradCheckReport report;
  if (scope == "ops" || scope == "all") {
    GradCheckReport ops = gradcheck_ops(seed);
    report.entries.insert(report.entries.end(), ops.entries.begin(), ops.entries.end());
  }
  if (scope == "model" || scope == "all") {
    GradCheckReport model = gradcheck_model(seed);
    report.entries.insert(report.entries.end(), model.entries.begin(), model.entries.end());
  }
  if (report.entries.empty())
    throw std::invalid_argument("gradcheck: scope must be 'ops', 'model' or 'all', got '" + scope +
                                "'");
  return report;
}

}  // namespace crossmap
