#pragma once

#include <string>
#include <vector>

#include "crossmap/util.hpp"

namespace crossmap {

struct GradCheckEntry {
  std::string name;
  double max_rel_err = 0.0;
  double tolerance = 0.0;
  bool pass = false;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  bool all_pass() const;
  OrderedJson to_json() const;
};

// Central finite differences against reverse-mode gradients for every
// differentiable tensor operation (tolerance 1e-4, eps 1e-3).
GradCheckReport gradcheck_ops(uint64_t seed = 2024);

// End-to-end check of d(path_loss)/d(parameter group) and the speaker loss on
// a two-node world (tolerance 1e-3, eps 1e-3), sampling a few components per
// named parameter.
GradCheckReport gradcheck_model(uint64_t seed = 2024);

// scope: "ops", "model" or "all".
GradCheckReport gradcheck(const std::string& scope, uint64_t seed = 2024);

}  // namespace crossmap
