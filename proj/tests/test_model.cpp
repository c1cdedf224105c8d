#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>

#include "crossmap/model.hpp"
#include "crossmap/rng.hpp"
#include "test_helpers.hpp"

using namespace crossmap;
using namespace crossmap::testing;

TEST_CASE("mask builders") {
  Tensor c = causal_mask(3);
  const std::vector<double> expect = {0, kMaskOff, kMaskOff, 0, 0, kMaskOff, 0, 0, 0};
  CHECK(c.data() == expect);

  Tensor open = open_mask(4, 2);
  for (double v : open.data()) CHECK(v == 0.0);

  Tensor pad = padding_mask(2, 4, 3);
  for (int i = 0; i < 3; ++i) {
    CHECK(pad(i, 0) == 0.0);
    CHECK(pad(i, 1) == 0.0);
    CHECK(pad(i, 2) == kMaskOff);
    CHECK(pad(i, 3) == kMaskOff);
  }

  // Composable by addition: causal + padding.
  Tensor combined = add(causal_mask(4), padding_mask(3, 4));
  CHECK(combined(3, 3) <= kMaskThreshold);
  CHECK(combined(3, 2) == 0.0);
}

TEST_CASE("attention_block matches a hand-rolled single-head oracle") {
  const int d = 2, ff = 3, heads = 1, T = 2;
  Rng rng(77);
  ParamStore store;
  auto mat = [&rng](int r, int c) {
    std::vector<double> v(static_cast<size_t>(r) * c);
    for (double& x : v) x = rng.uniform(-0.7, 0.7);
    return Tensor::from_data({r, c}, std::move(v));
  };
  store.add("t.wq", mat(d, d));
  store.add("t.bq", mat(1, d));
  store.add("t.wk", mat(d, d));
  store.add("t.bk", mat(1, d));
  store.add("t.wv", mat(d, d));
  store.add("t.bv", mat(1, d));
  store.add("t.wo", mat(d, d));
  store.add("t.bo", mat(1, d));
  store.add("t.ln1.g", Tensor::full({1, d}, 1.3));
  store.add("t.ln1.b", mat(1, d));
  store.add("t.ff.w1", mat(d, ff));
  store.add("t.ff.b1", mat(1, ff));
  store.add("t.ff.w2", mat(ff, d));
  store.add("t.ff.b2", mat(1, d));
  store.add("t.ln2.g", Tensor::full({1, d}, 0.9));
  store.add("t.ln2.b", mat(1, d));

  Tensor x = mat(T, d);
  AttnBlockRef block = AttnBlockRef::find(store, "t");
  Tensor out = attention_block(x, x, open_mask(T), block, heads, RunCtx::eval());

  // Oracle: explicit loops over the same formulas.
  auto get = [&store](const std::string& n, int i, int j) { return store.get(n)(i, j); };
  auto project = [&](const Tensor& in, const std::string& w, const std::string& b) {
    std::vector<std::vector<double>> r(T, std::vector<double>(d, 0.0));
    for (int i = 0; i < T; ++i)
      for (int j = 0; j < d; ++j) {
        double acc = get(b, 0, j);
        for (int k = 0; k < d; ++k) acc += in(i, k) * get(w, k, j);
        r[static_cast<size_t>(i)][static_cast<size_t>(j)] = acc;
      }
    return r;
  };
  auto q = project(x, "t.wq", "t.bq");
  auto k = project(x, "t.wk", "t.bk");
  auto v = project(x, "t.wv", "t.bv");
  std::vector<std::vector<double>> attended(T, std::vector<double>(d, 0.0));
  for (int i = 0; i < T; ++i) {
    std::vector<double> scores(T);
    double mx = -1e300;
    for (int j = 0; j < T; ++j) {
      double s = 0.0;
      for (int e = 0; e < d; ++e) s += q[i][static_cast<size_t>(e)] * k[static_cast<size_t>(j)][static_cast<size_t>(e)];
      scores[static_cast<size_t>(j)] = s / std::sqrt(static_cast<double>(d));
      mx = std::max(mx, scores[static_cast<size_t>(j)]);
    }
    double z = 0.0;
    for (double& s : scores) {
      s = std::exp(s - mx);
      z += s;
    }
    for (int j = 0; j < T; ++j)
      for (int e = 0; e < d; ++e)
        attended[i][static_cast<size_t>(e)] += scores[static_cast<size_t>(j)] / z * v[static_cast<size_t>(j)][static_cast<size_t>(e)];
  }
  auto layer_norm_row = [&](std::vector<double>& row, const std::string& g, const std::string& b) {
    double mu = 0.0;
    for (double r : row) mu += r;
    mu /= row.size();
    double var = 0.0;
    for (double r : row) var += (r - mu) * (r - mu);
    var /= row.size();
    for (size_t j = 0; j < row.size(); ++j)
      row[j] = (row[j] - mu) / std::sqrt(var + 1e-5) * get(g, 0, static_cast<int>(j)) +
               get(b, 0, static_cast<int>(j));
  };
  std::vector<std::vector<double>> y(T, std::vector<double>(d));
  for (int i = 0; i < T; ++i) {
    for (int j = 0; j < d; ++j) {
      double proj = get("t.bo", 0, j);
      for (int e = 0; e < d; ++e) proj += attended[i][static_cast<size_t>(e)] * get("t.wo", e, j);
      y[static_cast<size_t>(i)][static_cast<size_t>(j)] = x(i, j) + proj;
    }
    layer_norm_row(y[static_cast<size_t>(i)], "t.ln1.g", "t.ln1.b");
  }
  for (int i = 0; i < T; ++i) {
    std::vector<double> hidden_row(static_cast<size_t>(ff));
    for (int j = 0; j < ff; ++j) {
      double acc = get("t.ff.b1", 0, j);
      for (int e = 0; e < d; ++e) acc += y[static_cast<size_t>(i)][static_cast<size_t>(e)] * get("t.ff.w1", e, j);
      hidden_row[static_cast<size_t>(j)] = std::max(0.0, acc);
    }
    std::vector<double> z_row = y[static_cast<size_t>(i)];
    for (int j = 0; j < d; ++j) {
      double acc = get("t.ff.b2", 0, j);
      for (int e = 0; e < ff; ++e) acc += hidden_row[static_cast<size_t>(e)] * get("t.ff.w2", e, j);
      z_row[static_cast<size_t>(j)] += acc;
    }
    layer_norm_row(z_row, "t.ln2.g", "t.ln2.b");
    for (int j = 0; j < d; ++j) CHECK(std::abs(out(i, j) - z_row[static_cast<size_t>(j)]) < 1e-10);
  }
}

TEST_CASE("attention with fully masked context reduces to the residual path") {
  const int d = 4;
  Rng rng(3);
  ParamStore store;
  auto mat = [&rng](int r, int c) {
    std::vector<double> v(static_cast<size_t>(r) * c);
    for (double& x : v) x = rng.uniform(-0.5, 0.5);
    return Tensor::from_data({r, c}, std::move(v));
  };
  store.add("t.wq", mat(d, d));
  store.add("t.bq", Tensor::zeros({1, d}));
  store.add("t.wk", mat(d, d));
  store.add("t.bk", Tensor::zeros({1, d}));
  store.add("t.wv", mat(d, d));
  store.add("t.bv", Tensor::zeros({1, d}));
  store.add("t.wo", mat(d, d));
  store.add("t.bo", Tensor::zeros({1, d}));
  store.add("t.ln1.g", Tensor::full({1, d}, 1.0));
  store.add("t.ln1.b", Tensor::zeros({1, d}));
  store.add("t.ff.w1", Tensor::zeros({d, d}));
  store.add("t.ff.b1", Tensor::zeros({1, d}));
  store.add("t.ff.w2", Tensor::zeros({d, d}));
  store.add("t.ff.b2", Tensor::zeros({1, d}));
  store.add("t.ln2.g", Tensor::full({1, d}, 1.0));
  store.add("t.ln2.b", Tensor::zeros({1, d}));

  Tensor x = mat(2, d);
  Tensor ctx = mat(3, d);
  Tensor blocked = Tensor::full({1, 3}, kMaskOff);
  Tensor out = attention_block(x, ctx, blocked, AttnBlockRef::find(store, "t"), 2, RunCtx::eval());
  // With zero value-path contribution the block is layer_norm(x) twice over.
  Tensor ln = layer_norm(x, store.get("t.ln1.g"), store.get("t.ln1.b"), 1e-5);
  Tensor expect = layer_norm(ln, store.get("t.ln2.g"), store.get("t.ln2.b"), 1e-5);
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < d; ++j) CHECK(out(i, j) == doctest::Approx(expect(i, j)).epsilon(1e-12));
}

TEST_CASE("causal attention: outputs at a slot are bitwise blind to later slots") {
  ToySetup toy = make_toy(11, 8, 4);
  const int d = toy.model.config().hidden;
  Rng rng(9);
  Tensor full = random_tensor({6, d}, rng);
  auto block = AttnBlockRef::find(toy.model.params(), "cmt.act.L0.self");
  Tensor full_out = attention_block(full, full, causal_mask(6), block, toy.model.config().heads,
                                    RunCtx::eval());
  // Perturb the last three rows.
  std::vector<double> perturbed = full.data();
  for (size_t i = 3 * static_cast<size_t>(d); i < perturbed.size(); ++i) perturbed[i] += 0.37;
  Tensor tampered = Tensor::from_data({6, d}, std::move(perturbed));
  Tensor tampered_out = attention_block(tampered, tampered, causal_mask(6), block,
                                        toy.model.config().heads, RunCtx::eval());
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < d; ++j) CHECK(full_out(i, j) == tampered_out(i, j));
}

TEST_CASE("language encoder summary is blind to PAD slot embeddings") {
  ToySetup toy = make_toy(21, 8, 4);
  const Episode& ep = toy.episodes[0];
  EncodedInstruction enc = encode(toy.model.vocab(), ep.instruction);
  REQUIRE(enc.length < 42);

  Tensor tokens = instruction_embeddings(toy.model, enc);
  Pose pose{ep.path[0], 0.0, 0.0};
  Tensor views =
      view_input_features(toy.model, toy.world.graph.node(pose.node_id), pose, RunCtx::eval());

  EncoderOutput a = encode_language(toy.model, enc, tokens, views, RunCtx::eval());
  CHECK(a.summary.cols() == toy.model.config().hidden);
  CHECK(a.states.rows() == 42);

  // Overwrite every PAD slot embedding with noise.
  std::vector<double> data = tokens.data();
  Rng rng(5);
  for (int slot = enc.length; slot < 42; ++slot)
    for (int j = 0; j < tokens.cols(); ++j)
      data[static_cast<size_t>(slot) * tokens.cols() + j] = rng.uniform(-3, 3);
  Tensor tampered = Tensor::from_data({42, tokens.cols()}, std::move(data));
  EncoderOutput b = encode_language(toy.model, enc, tampered, views, RunCtx::eval());
  CHECK(a.summary.data() == b.summary.data());  // bitwise
}

TEST_CASE("visual encoder emits hidden-width summaries; heading rotation permutes views") {
  ToySetup toy = make_toy(31, 8, 4);
  const NavNode& node = toy.world.graph.node(toy.episodes[0].path[0]);

  // Uniform features isolate the positional part.
  NavNode uniform = node;
  for (ViewFeature& v : uniform.views) {
    std::fill(v.semantic.begin(), v.semantic.end(), 0.25);
    std::fill(v.visual.begin(), v.visual.end(), -0.5);
  }
  Tensor at_zero = view_input_features(toy.model, uniform, Pose{node.id, 0.0, 0.0}, RunCtx::eval());
  Tensor rotated = view_input_features(toy.model, uniform,
                                       Pose{node.id, kTwoPi / kViewAzimuths, 0.0}, RunCtx::eval());
  // After rotating the heading by one sector, view a looks like view a-1 did.
  for (int t = 0; t < kViewTiers; ++t)
    for (int a = 0; a < kViewAzimuths; ++a) {
      const int rot_row = t * kViewAzimuths + a;
      const int base_row = t * kViewAzimuths + ((a + kViewAzimuths - 1) % kViewAzimuths);
      for (int j = 0; j < at_zero.cols(); ++j)
        CHECK(rotated(rot_row, j) == doctest::Approx(at_zero(base_row, j)).epsilon(1e-9));
    }

  EncodedInstruction enc = encode(toy.model.vocab(), toy.episodes[0].instruction);
  Tensor tokens = instruction_embeddings(toy.model, enc);
  EncoderOutput lang = encode_language(toy.model, enc, tokens, at_zero, RunCtx::eval());
  EncoderOutput vis = encode_visual(toy.model, at_zero, lang.states,
                                    Tensor::row(enc.attention_mask), RunCtx::eval());
  CHECK(vis.summary.cols() == toy.model.config().hidden);
  CHECK(vis.states.rows() == kViewsPerNode + 1);
}

TEST_CASE("environmental dropout is identity in eval and shared across views in training") {
  ToySetup toy = make_toy(41, 8, 4);
  const NavNode& node = toy.world.graph.node(toy.episodes[0].path[0]);
  Pose pose{node.id, 0.0, 0.0};

  Tensor a = view_input_features(toy.model, node, pose, RunCtx::eval());
  Tensor b = view_input_features(toy.model, node, pose, RunCtx::eval());
  CHECK(a.data() == b.data());

  // Training: one feature mask is shared by all 36 views. Make the input
  // projection an identity over the feature block so the masked features are
  // directly visible in the output columns.
  const int feat = toy.model.config().d_sem + toy.model.config().d_vis;
  Tensor win = toy.model.params().get("cmt.vis.in.w");
  std::fill(win.mutable_data().begin(), win.mutable_data().end(), 0.0);
  for (int j = 0; j < feat; ++j)
    win.mutable_data()[static_cast<size_t>(j) * win.cols() + j] = 1.0;
  Tensor bin = toy.model.params().get("cmt.vis.in.b");
  std::fill(bin.mutable_data().begin(), bin.mutable_data().end(), 0.0);

  NavNode ones = node;
  for (ViewFeature& v : ones.views) {
    std::fill(v.semantic.begin(), v.semantic.end(), 1.0);
    std::fill(v.visual.begin(), v.visual.end(), 1.0);
  }
  Rng rng(7);
  RunCtx rc = RunCtx::train(rng, toy.model.config());
  Tensor dropped = view_input_features(toy.model, ones, pose, rc);
  const double keep = 1.0 / (1.0 - toy.model.config().env_dropout);
  int zeroed = 0;
  for (int j = 0; j < feat; ++j) {
    const double v0 = dropped(0, j);
    CHECK((v0 == 0.0 || v0 == doctest::Approx(keep).epsilon(1e-12)));
    if (v0 == 0.0) ++zeroed;
    for (int i = 1; i < kViewsPerNode; ++i) CHECK(dropped(i, j) == v0);
  }
  CHECK(zeroed > 0);  // rate 0.4 over 18 feature dims
  CHECK(zeroed < feat);
}

TEST_CASE("decode_action basics") {
  ToySetup toy = make_toy(51, 8, 4);
  const int d = toy.model.config().hidden;
  Rng rng(13);

  SUBCASE("single STOP candidate gives probability 1") {
    ActionCandidate stop;
    stop.is_stop = true;
    std::vector<Tensor> hist = {embed_action_start(toy.model)};
    std::vector<Tensor> ctx = {random_tensor({1, 2 * d}, rng)};
    DecodeOutput out = decode_action(toy.model, hist, ctx,
                                     {embed_action_candidate(toy.model, stop)}, RunCtx::eval());
    CHECK(out.probs.item() == 1.0);
  }

  SUBCASE("distribution matches a dot-product softmax oracle") {
    const Episode& ep = toy.episodes[0];
    Pose pose{ep.path[0], 0.0, 0.0};
    auto cands = candidate_actions(toy.world.graph, pose);
    std::vector<Tensor> cand_embs;
    for (const auto& c : cands) cand_embs.push_back(embed_action_candidate(toy.model, c));
    std::vector<Tensor> hist = {embed_action_start(toy.model)};
    std::vector<Tensor> ctx = {random_tensor({1, 2 * d}, rng)};
    DecodeOutput out = decode_action(toy.model, hist, ctx, cand_embs, RunCtx::eval());

    std::vector<double> logits(cands.size());
    double mx = -1e300;
    for (size_t kk = 0; kk < cands.size(); ++kk) {
      double dot = 0.0;
      for (int j = 0; j < d; ++j) dot += out.h_a(0, j) * cand_embs[kk](0, j);
      logits[kk] = dot;
      mx = std::max(mx, dot);
    }
    double z = 0.0;
    for (double& l : logits) {
      l = std::exp(l - mx);
      z += l;
    }
    double sum = 0.0;
    for (size_t kk = 0; kk < cands.size(); ++kk) {
      CHECK(std::abs(out.probs(0, static_cast<int>(kk)) - logits[kk] / z) < 1e-10);
      sum += out.probs(0, static_cast<int>(kk));
    }
    CHECK(std::abs(sum - 1.0) < 1e-9);
  }

  SUBCASE("permuting candidates permutes the distribution") {
    const Episode& ep = toy.episodes[0];
    Pose pose{ep.path[0], 0.0, 0.0};
    auto cands = candidate_actions(toy.world.graph, pose);
    REQUIRE(cands.size() >= 3);
    std::vector<Tensor> cand_embs;
    for (const auto& c : cands) cand_embs.push_back(embed_action_candidate(toy.model, c));
    std::vector<Tensor> hist = {embed_action_start(toy.model)};
    std::vector<Tensor> ctx = {random_tensor({1, 2 * d}, rng)};
    DecodeOutput base = decode_action(toy.model, hist, ctx, cand_embs, RunCtx::eval());

    std::vector<size_t> perm;
    for (size_t i = 0; i < cands.size(); ++i) perm.push_back((i + 1) % cands.size());
    std::vector<Tensor> shuffled;
    for (size_t i : perm) shuffled.push_back(cand_embs[i]);
    DecodeOutput permuted = decode_action(toy.model, hist, ctx, shuffled, RunCtx::eval());
    for (size_t i = 0; i < perm.size(); ++i)
      CHECK(permuted.probs(0, static_cast<int>(i)) ==
            doctest::Approx(base.probs(0, static_cast<int>(perm[i]))).epsilon(1e-12));
  }
}

TEST_CASE("rollout modes") {
  ToySetup toy = make_toy(61, 10, 6);
  const Episode& ep = toy.episodes[0];

  SUBCASE("teacher forcing reaches the ground-truth goal in |path| steps") {
    Rng rng(1);
    auto traj = rollout(toy.model, toy.world, ep, RolloutMode::kTeacherForced, rng,
                        RunCtx::eval());
    CHECK(traj.nodes == ep.path);
    CHECK(traj.steps.size() == ep.path.size());
    CHECK_FALSE(traj.truncated);
    CHECK(traj.success);
    CHECK(traj.nav_error == 0.0);
    CHECK(traj.latent_actions.size() == traj.steps.size());
  }

  SUBCASE("greedy rollout is deterministic") {
    Rng rng1(1), rng2(2);
    auto a = rollout(toy.model, toy.world, ep, RolloutMode::kGreedy, rng1, RunCtx::eval());
    auto b = rollout(toy.model, toy.world, ep, RolloutMode::kGreedy, rng2, RunCtx::eval());
    CHECK(a.to_json() == b.to_json());
  }

  SUBCASE("sampled rollout reproduces under a fixed seed") {
    Rng rng1(99), rng2(99);
    auto a = rollout(toy.model, toy.world, ep, RolloutMode::kSample, rng1, RunCtx::eval());
    auto b = rollout(toy.model, toy.world, ep, RolloutMode::kSample, rng2, RunCtx::eval());
    CHECK(a.to_json() == b.to_json());
  }

  SUBCASE("rollouts truncate at max_path") {
    // Force never-stop by zeroing all parameters then biasing STOP hard down.
    ToySetup local = make_toy(61, 10, 6);
    local.model.params().fill(0.0);
    // All-zero params give uniform distributions; greedy then picks the first
    // candidate (never STOP, which is last), so the walk runs out of budget.
    Rng rng(1);
    auto traj = rollout(local.model, local.world, ep, RolloutMode::kGreedy, rng, RunCtx::eval());
    CHECK(traj.truncated);
    CHECK_FALSE(traj.success);
    CHECK(static_cast<int>(traj.steps.size()) == local.model.config().max_path);
  }
}

TEST_CASE("path_loss equals mean ln k under uniform distributions") {
  ToySetup toy = make_toy(71, 10, 6);
  toy.model.params().fill(0.0);
  const Episode& ep = toy.episodes[0];

  Rng rng(1);
  auto traj = rollout(toy.model, toy.world, ep, RolloutMode::kTeacherForced, rng, RunCtx::eval());
  double expect = 0.0;
  for (const auto& s : traj.steps) expect += std::log(static_cast<double>(s.probs.size()));
  expect /= static_cast<double>(traj.steps.size());

  Tensor loss = path_loss(toy.model, toy.world, ep, RunCtx::eval());
  CHECK(loss.item() == doctest::Approx(expect).epsilon(1e-12));
  CHECK(loss.item() >= 0.0);
}

TEST_CASE("path_mask_loss equals the teacher-forced term at the masked step") {
  ToySetup toy = make_toy(81, 10, 6);
  const Episode& ep = toy.episodes[0];

  Rng mask_rng(17);
  int masked_step = -1;
  Tensor loss = path_mask_loss(toy.model, toy.world, ep, mask_rng, RunCtx::eval(), &masked_step);
  REQUIRE(masked_step >= 0);
  CHECK(masked_step < static_cast<int>(ep.path.size()));

  Rng unused(0);
  auto traj = rollout(toy.model, toy.world, ep, RolloutMode::kTeacherForced, unused,
                      RunCtx::eval());
  Tensor expect = cross_entropy(traj.steps[static_cast<size_t>(masked_step)].logits,
                                {traj.steps[static_cast<size_t>(masked_step)].chosen});
  CHECK(loss.item() == doctest::Approx(expect.item()).epsilon(1e-12));

  // Fixed seed draws the same masked position.
  Rng mask_rng2(17);
  int masked_step2 = -1;
  path_mask_loss(toy.model, toy.world, ep, mask_rng2, RunCtx::eval(), &masked_step2);
  CHECK(masked_step2 == masked_step);
}

TEST_CASE("bidirectional path masking variant runs and differs") {
  ToySetup toy = make_toy(91, 10, 6);
  const Episode& ep = toy.episodes[0];
  Rng a(3);
  Tensor causal_loss = path_mask_loss(toy.model, toy.world, ep, a, RunCtx::eval());

  ModelConfig cfg = toy.model.config();
  ToySetup toy2 = make_toy(91, 10, 6);  // identical params
  const_cast<ModelConfig&>(toy2.model.config()).path_mask_bidirectional = true;
  Rng b(3);
  Tensor bi_loss = path_mask_loss(toy2.model, toy2.world, ep, b, RunCtx::eval());
  CHECK(std::isfinite(bi_loss.item()));
  CHECK(bi_loss.item() >= 0.0);
}

TEST_CASE("gradients reach every parameter group through path_loss") {
  ToySetup toy = make_toy(101, 8, 4);
  const Episode& ep = toy.episodes[0];
  {
    GradTape tape;
    Tensor loss = path_loss(toy.model, toy.world, ep, RunCtx::eval());
    tape.backward(loss);
  }
  int with_grad = 0, total = 0;
  for (const auto& [name, t] : toy.model.params().items()) {
    if (name.rfind("cmt.", 0) != 0) continue;
    if (name == "cmt.act.mask") continue;  // only used by the bidirectional variant
    ++total;
    if (t.has_grad()) {
      double norm = 0.0;
      for (double g : t.grad()) norm += std::abs(g);
      if (norm > 0.0) ++with_grad;
    }
  }
  // Every path-network tensor except the PAD-only embedding rows participates.
  CHECK(with_grad >= total - 1);
}

TEST_CASE("model checkpoint round trip") {
  ToySetup toy = make_toy(111, 8, 4);
  const std::string path = (std::filesystem::temp_directory_path() / "cm_model_rt.ckpt").string();
  toy.model.save(path);
  Model loaded = Model::load(path);
  CHECK(loaded.fingerprint() == toy.model.fingerprint());
  CHECK(loaded.config().to_json() == toy.model.config().to_json());
  CHECK(loaded.vocab().to_json() == toy.model.vocab().to_json());

  // Loaded models behave identically.
  const Episode& ep = toy.episodes[0];
  Rng r1(5), r2(5);
  CHECK(rollout(loaded, toy.world, ep, RolloutMode::kGreedy, r1, RunCtx::eval()).to_json() ==
        rollout(toy.model, toy.world, ep, RolloutMode::kGreedy, r2, RunCtx::eval()).to_json());
  std::filesystem::remove(path);
}

TEST_CASE("default configuration widths") {
  // Table-sized model: summaries come out 1 x 384.
  Vocabulary vocab = Vocabulary::build({"walk out of the kitchen and stop by the sink"});
  ModelConfig cfg;
  cfg.d_sem = 40;
  cfg.d_vis = 128;
  cfg.vocab_size = vocab.size();
  Model model(cfg, vocab, 1);
  CHECK(model.config().hidden == 384);
  CHECK(model.config().heads == 12);
  CHECK(model.config().ff_size == 1534);
  CHECK(model.config().dropout == 0.1);
  CHECK(model.config().env_dropout == 0.4);
  CHECK(model.config().lr == 5e-4);
  CHECK(model.config().beta1 == 0.99);
  CHECK(model.config().beta2 == 0.9);
  CHECK(model.config().batch_size == 50);
  CHECK(model.config().lambda_threshold == 20.0);

  WorldSpec spec;
  spec.num_nodes = 4;
  spec.d_sem = 40;
  spec.d_vis = 128;
  World world = generate_world(5, spec);
  const NavNode& node = world.graph.nodes().begin()->second;
  EncodedInstruction enc = encode(vocab, "walk out of the kitchen");
  Tensor tokens = instruction_embeddings(model, enc);
  Tensor views = view_input_features(model, node, Pose{node.id, 0.0, 0.0}, RunCtx::eval());
  EncoderOutput lang = encode_language(model, enc, tokens, views, RunCtx::eval());
  CHECK(lang.summary.rows() == 1);
  CHECK(lang.summary.cols() == 384);
  EncoderOutput vis = encode_visual(model, views, lang.states, Tensor::row(enc.attention_mask),
                                    RunCtx::eval());
  CHECK(vis.summary.rows() == 1);
  CHECK(vis.summary.cols() == 384);
}
