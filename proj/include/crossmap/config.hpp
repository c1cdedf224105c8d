#pragma once

#include <string>

#include "crossmap/util.hpp"

namespace crossmap {

// Every hyperparameter of the network and training loop, plus the knobs that
// resolve unspecified behaviour. Serialized into every checkpoint.
struct ModelConfig {
  int hidden = 384;
  int layers = 2;  // per encoder/decoder stack
  int heads = 12;
  int ff_size = 1534;
  double dropout = 0.1;
  double env_dropout = 0.4;
  int max_instr = 42;
  int max_path = 12;

  double lr = 5e-4;
  double beta1 = 0.99;  // literal published ordering; swap via config if desired
  double beta2 = 0.9;
  double adam_eps = 1e-8;
  int batch_size = 50;

  // Speaker-score filter threshold and the metric it applies to.
  double lambda_threshold = 20.0;
  std::string score_metric = "cider";

  int d_sem = 40;
  int d_vis = 128;
  int vocab_size = 0;  // filled in when a model is created

  // Path masking conditions only on earlier actions through the causal
  // decoder by default; the bidirectional variant masks the action slot and
  // lets the decoder see both sides.
  bool path_mask_bidirectional = false;
  // Whether speaker losses propagate through the latent action features into
  // the path network.
  bool speaker_updates_cmt = true;
  double mlm_rate = 0.15;  // speaker bidirectional masking rate
  double rouge_beta = 1.2;

  void validate() const;
  OrderedJson to_json() const;
  static ModelConfig from_json(const Json& j);
};

}  // namespace crossmap
