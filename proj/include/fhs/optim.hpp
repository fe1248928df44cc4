#pragma once

#include "fhs/params.hpp"

namespace fhs {

struct SgdConfig {
  double learning_rate = 0.01;
  int batch_size = 32;
};

// throws std::invalid_argument naming the offending field
void validate(const SgdConfig& cfg);

// param <- param - lr * grad, then grads are zeroed.
// Every tensor must carry a populated grad buffer; a missing one raises.
void sgd_step(ParamSet& params, const SgdConfig& cfg);
void sgd_step(ParamSet& params, double learning_rate);

}  // namespace fhs
