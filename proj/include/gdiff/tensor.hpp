#pragma once

#include <string>
#include <vector>

#include "gdiff/errors.hpp"

namespace gdiff {

// Dense row-major tensor of 64-bit floats. Values are plain data: copyable,
// movable, no views. Rank is usually 1 or 2 here; matmul and the row-wise
// ops require rank 2.
struct Tensor {
  std::vector<int> shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> shape_);
  Tensor(std::vector<int> shape_, std::vector<double> data_);

  static Tensor zeros(std::vector<int> shape_);
  static Tensor full(std::vector<int> shape_, double value);
  static Tensor scalar(double value);
  static Tensor vec(std::vector<double> values);

  int numel() const;
  int ndim() const { return static_cast<int>(shape.size()); }

  // Rank-2 accessors. rows()/cols() treat a rank-1 tensor as a single row.
  int rows() const;
  int cols() const;
  double& at(int r, int c);
  double at(int r, int c) const;

  double& operator[](int i) { return data[static_cast<size_t>(i)]; }
  double operator[](int i) const { return data[static_cast<size_t>(i)]; }

  bool same_shape(const Tensor& other) const { return shape == other.shape; }
  std::string shape_str() const;

  // Throws DimensionError if any entry is NaN or infinite.
  void ensure_finite(const char* context) const;
};

std::string shape_str(const std::vector<int>& shape);

}  // namespace gdiff
