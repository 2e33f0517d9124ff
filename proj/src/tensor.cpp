#include "unfmri/tensor.hpp"

#include <cmath>
#include <sstream>

namespace unfmri {

std::size_t shape_numel(const std::vector<int>& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d < 0) throw std::invalid_argument("negative tensor dimension");
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

std::string shape_string(const std::vector<int>& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ')';
  return os.str();
}

Tensor::Tensor(std::vector<int> shape, double fill)
    : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

Tensor::Tensor(std::vector<int> shape, std::vector<double> values)
    : shape_(std::move(shape)), data_(std::move(values)) {
  if (data_.size() != shape_numel(shape_)) {
    throw std::invalid_argument("tensor value count does not match shape " + shape_string(shape_));
  }
}

void Tensor::fill(double v) {
  for (double& d : data_) d = v;
}

void Tensor::add_inplace(const Tensor& other) {
  if (other.data_.size() != data_.size()) {
    throw std::invalid_argument("add_inplace: shape mismatch " + shape_string(shape_) + " vs " +
                                shape_string(other.shape_));
  }
  const double* src = other.data_.data();
  double* dst = data_.data();
  const std::size_t n = data_.size();
  for (std::size_t i = 0; i < n; ++i) dst[i] += src[i];
}

bool Tensor::all_finite() const {
  for (double d : data_) {
    if (!std::isfinite(d)) return false;
  }
  return true;
}

}  // namespace unfmri
