#pragma once

#include <string>

#include "crossmap/tensor.hpp"
#include "crossmap/util.hpp"

namespace crossmap {

// Single-file checkpoint container: magic, format-version integer, a JSON
// metadata block (config, vocabulary) and named little-endian float64 tensors.
constexpr uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::string& path, const OrderedJson& meta, const ParamStore& params);

struct Checkpoint {
  Json meta;
  ParamStore params;  // tensors loaded with requires_grad = true
};

Checkpoint load_checkpoint(const std::string& path);

}  // namespace crossmap
