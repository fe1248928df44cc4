#pragma once

#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

namespace fhs {

// Dense row-major 64-bit float array. Rank is arbitrary but everything in
// this project is rank 0..2. `grad` is empty until a backward pass (or
// ensure_grad) allocates it; when present it always matches `data` in size.
struct Tensor {
  std::vector<int> shape;
  std::vector<double> data;
  std::vector<double> grad;

  Tensor() = default;
  explicit Tensor(std::vector<int> s);
  Tensor(std::vector<int> s, std::vector<double> values);

  static Tensor zeros(std::vector<int> s) { return Tensor(std::move(s)); }
  static Tensor scalar(double v) { return Tensor({1}, {v}); }
  static Tensor row(std::vector<double> values);
  static Tensor matrix(int rows, int cols, std::vector<double> values);

  std::int64_t size() const { return static_cast<std::int64_t>(data.size()); }
  int rank() const { return static_cast<int>(shape.size()); }
  // rank-2 views; a rank-1 tensor counts as a single row
  int rows() const;
  int cols() const;

  double& at(int i, int j);
  double at(int i, int j) const;

  bool has_grad() const { return !grad.empty(); }
  void ensure_grad();
  void zero_grad();

  bool all_finite() const;
  bool same_shape(const Tensor& other) const { return shape == other.shape; }
};

std::int64_t shape_numel(const std::vector<int>& shape);
std::string shape_str(const std::vector<int>& shape);

// throws std::runtime_error naming `context` if any entry is NaN/Inf
void require_finite(const Tensor& t, const std::string& context);

}  // namespace fhs
