#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "crossmap/model.hpp"
#include "crossmap/rng.hpp"
#include "crossmap/tensor.hpp"
#include "crossmap/world.hpp"

namespace crossmap::testing {

// Small world + model pair used across the model, speaker and trainer tests.
inline WorldSpec toy_world_spec(int nodes) {
  WorldSpec spec;
  spec.num_nodes = nodes;
  spec.d_sem = 10;
  spec.d_vis = 8;
  spec.avg_degree = 3.0;
  spec.room_labels = {"kitchen", "bedroom", "bathroom", "hallway"};
  spec.landmark_labels = {"sofa", "table", "sink", "bed", "plant", "lamp"};
  return spec;
}

inline ModelConfig toy_model_config(const WorldSpec& spec) {
  ModelConfig cfg;
  cfg.hidden = 24;
  cfg.heads = 4;
  cfg.ff_size = 32;
  cfg.d_sem = spec.d_sem;
  cfg.d_vis = spec.d_vis;
  cfg.max_path = 8;
  // Fast-converging optimizer settings for desk-scale runs.
  cfg.lr = 2e-3;
  cfg.beta1 = 0.9;
  cfg.beta2 = 0.999;
  cfg.env_dropout = 0.2;
  return cfg;
}

struct ToySetup {
  World world;
  std::vector<Episode> episodes;
  Model model;
};

inline ToySetup make_toy(uint64_t seed, int nodes, int episode_count) {
  World world = generate_world(seed, toy_world_spec(nodes));
  EpisodeGenOptions opt;
  opt.count = episode_count;
  opt.min_path_nodes = 3;
  opt.max_path_nodes = 5;
  std::vector<Episode> eps = generate_episodes(seed + 1, world, opt);
  std::vector<std::string> corpus;
  for (const Episode& e : eps) corpus.push_back(e.instruction);
  Vocabulary vocab = Vocabulary::build(corpus);
  ModelConfig cfg = toy_model_config(world.spec);
  cfg.vocab_size = vocab.size();
  return ToySetup{std::move(world), std::move(eps), Model(cfg, std::move(vocab), seed + 2)};
}

inline Tensor random_tensor(std::vector<int> shape, Rng& rng, double lo = -1.0, double hi = 1.0,
                            bool requires_grad = false) {
  size_t n = 1;
  for (int d : shape) n *= static_cast<size_t>(d);
  std::vector<double> data(n);
  for (double& v : data) v = rng.uniform(lo, hi);
  return Tensor::from_data(std::move(shape), std::move(data), requires_grad);
}

// Differentiable bilinear reduction to a scalar: wl * t * wr. Used to give
// finite-difference checks a fixed scalar objective.
inline Tensor bilinear_reduce(const Tensor& t, const Tensor& wl, const Tensor& wr) {
  return matmul(matmul(wl, t), wr);
}

inline Tensor make_reducer_left(const Tensor& t, Rng& rng) {
  return random_tensor({1, t.rows()}, rng);
}
inline Tensor make_reducer_right(const Tensor& t, Rng& rng) {
  return random_tensor({t.cols(), 1}, rng);
}

inline double guarded_rel_err(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1.0});
}

// Central finite differences on every listed input against reverse-mode
// gradients of the scalar produced by forward(). forward() must be a pure
// function of the input payloads (re-seed any RNG inside it).
inline double max_grad_rel_err(const std::vector<Tensor>& inputs,
                               const std::function<Tensor()>& forward, Rng& rng,
                               int samples_per_input = 8, double eps = 1e-3) {
  {
    GradTape tape;
    Tensor out = forward();
    tape.backward(out);
  }
  double worst = 0.0;
  for (const Tensor& input : inputs) {
    auto node = input.node();
    const size_t n = node->data.size();
    for (int s = 0; s < samples_per_input; ++s) {
      const size_t i = static_cast<size_t>(rng.uniform_int(static_cast<int>(n)));
      const double saved = node->data[i];
      const_cast<std::vector<double>&>(node->data)[i] = saved + eps;
      const double f_plus = forward().item();
      const_cast<std::vector<double>&>(node->data)[i] = saved - eps;
      const double f_minus = forward().item();
      const_cast<std::vector<double>&>(node->data)[i] = saved;
      const double fd = (f_plus - f_minus) / (2.0 * eps);
      const double ad = node->grad.empty() ? 0.0 : node->grad[i];
      worst = std::max(worst, guarded_rel_err(ad, fd));
    }
  }
  return worst;
}

}  // namespace crossmap::testing
