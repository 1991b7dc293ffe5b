#include "gdiff/tensor.hpp"

#include <cmath>
#include <sstream>

namespace gdiff {

namespace {
size_t checked_numel(const std::vector<int>& shape) {
  size_t n = 1;
  for (int d : shape) {
    if (d < 0) throw DimensionError("negative dimension in shape " + shape_str(shape));
    n *= static_cast<size_t>(d);
  }
  return n;
}
}  // namespace

Tensor::Tensor(std::vector<int> shape_) : shape(std::move(shape_)) {
  data.assign(checked_numel(shape), 0.0);
}

Tensor::Tensor(std::vector<int> shape_, std::vector<double> data_)
    : shape(std::move(shape_)), data(std::move(data_)) {
  if (checked_numel(shape) != data.size()) {
    throw DimensionError("shape " + gdiff::shape_str(shape) + " does not match data length " +
                         std::to_string(data.size()));
  }
}

Tensor Tensor::zeros(std::vector<int> shape_) { return Tensor(std::move(shape_)); }

Tensor Tensor::full(std::vector<int> shape_, double value) {
  Tensor t(std::move(shape_));
  for (double& x : t.data) x = value;
  return t;
}

Tensor Tensor::scalar(double value) { return Tensor({1}, {value}); }

Tensor Tensor::vec(std::vector<double> values) {
  int n = static_cast<int>(values.size());
  return Tensor({n}, std::move(values));
}

int Tensor::numel() const { return static_cast<int>(data.size()); }

int Tensor::rows() const {
  if (ndim() == 1) return 1;
  if (ndim() == 2) return shape[0];
  throw DimensionError("rows() requires rank 1 or 2, got shape " + gdiff::shape_str(shape));
}

int Tensor::cols() const {
  if (ndim() == 1) return shape[0];
  if (ndim() == 2) return shape[1];
  throw DimensionError("cols() requires rank 1 or 2, got shape " + gdiff::shape_str(shape));
}

double& Tensor::at(int r, int c) { return data[static_cast<size_t>(r) * cols() + c]; }
double Tensor::at(int r, int c) const { return data[static_cast<size_t>(r) * cols() + c]; }

std::string Tensor::shape_str() const { return gdiff::shape_str(shape); }

void Tensor::ensure_finite(const char* context) const {
  for (double x : data) {
    if (!std::isfinite(x)) {
      throw DimensionError(std::string(context) + ": non-finite entry in tensor of shape " +
                           shape_str());
    }
  }
}

std::string shape_str(const std::vector<int>& shape) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << "x";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

}  // namespace gdiff
