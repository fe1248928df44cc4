#include "fhs/optim.hpp"

#include <stdexcept>

#include "fhs/kernels.hpp"

namespace fhs {

void validate(const SgdConfig& cfg) {
  if (!(cfg.learning_rate > 0.0))
    throw std::invalid_argument("sgd.learning_rate must be > 0");
  if (cfg.batch_size < 1)
    throw std::invalid_argument("sgd.batch_size must be >= 1");
}

void sgd_step(ParamSet& params, double learning_rate) {
  for (auto& [name, t] : params.items) {
    if (!t.has_grad())
      throw std::runtime_error("sgd_step: missing grad for parameter " + name);
    kernels::axpy(-learning_rate, t.grad.data(), t.data.data(), t.size());
    t.zero_grad();
  }
}

void sgd_step(ParamSet& params, const SgdConfig& cfg) {
  sgd_step(params, cfg.learning_rate);
}

}  // namespace fhs
