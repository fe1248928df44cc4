#pragma once

#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "fhs/tensor.hpp"

namespace fhs {

// An ordered collection of named parameter tensors. Order is construction
// order and is part of the contract (checkpoints and aggregation walk it).
// Finish adding before binding any tensor into a Tape: add() may reallocate.
struct ParamSet {
  std::vector<std::pair<std::string, Tensor>> items;

  Tensor& add(std::string name, Tensor t) {
    items.emplace_back(std::move(name), std::move(t));
    return items.back().second;
  }

  Tensor* find(std::string_view name) {
    for (auto& [n, t] : items)
      if (n == name) return &t;
    return nullptr;
  }
  const Tensor* find(std::string_view name) const {
    for (const auto& [n, t] : items)
      if (n == name) return &t;
    return nullptr;
  }

  std::size_t size() const { return items.size(); }
  std::int64_t numel() const {
    std::int64_t n = 0;
    for (const auto& [_, t] : items) n += t.size();
    return n;
  }
  void zero_grads() {
    for (auto& [_, t] : items) t.zero_grad();
  }
};

}  // namespace fhs
