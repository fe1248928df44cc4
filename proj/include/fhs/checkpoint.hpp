#pragma once

#include <string>
#include <utility>
#include <vector>

#include "fhs/params.hpp"

namespace fhs {

// Checkpoint file layout (byte-exact so files round-trip bit for bit):
//
//   "FHS1 <n_tensors>\n"
//   then per tensor:
//     "<name> <rank> <dim0> <dim1> ...\n"
//     <numel * 8 bytes: row-major IEEE-754 float64, little-endian>
//
// Names may not contain spaces or newlines. Gradients are not stored.

void save_checkpoint(const std::string& path,
                     const std::vector<std::pair<std::string, const Tensor*>>& tensors);
void save_checkpoint(const std::string& path, const ParamSet& params);

std::vector<std::pair<std::string, Tensor>> load_checkpoint(const std::string& path);

}  // namespace fhs
