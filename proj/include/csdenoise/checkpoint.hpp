#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "csdenoise/tensor.hpp"

namespace csd {

// Versioned binary container: magic, version, embedded config text, then
// named float64 tensors (name, dtype tag, shape, raw little-endian data).
// Model parameters are stored under their parameter names, optimizer moments
// under "adam.m.<name>" / "adam.v.<name>".
struct Checkpoint {
  std::string config_text;
  int64_t step = 0;
  std::map<std::string, RTensor> tensors;
};

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace csd
