#include "semimoe/tensor.hpp"

#include <numeric>
#include <sstream>

namespace semimoe {

int64_t shape_numel(const std::vector<int64_t>& shape) {
  if (shape.empty()) throw std::invalid_argument("tensor shape must have at least one dimension");
  int64_t n = 1;
  for (int64_t d : shape) {
    if (d <= 0) throw std::invalid_argument("tensor dimensions must be positive");
    n *= d;
  }
  return n;
}

Tensor::Tensor(std::vector<int64_t> shape) : shape_(std::move(shape)) {
  numel_ = shape_numel(shape_);
  data_.assign(static_cast<size_t>(numel_), 0.0);
}

Tensor::Tensor(std::vector<int64_t> shape, double fill) : shape_(std::move(shape)) {
  numel_ = shape_numel(shape_);
  data_.assign(static_cast<size_t>(numel_), fill);
}

Tensor::Tensor(std::vector<int64_t> shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  numel_ = shape_numel(shape_);
  if (static_cast<int64_t>(data_.size()) != numel_)
    throw std::invalid_argument("tensor data size does not match shape");
}

std::string Tensor::shape_str() const {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape_.size(); ++i) os << (i ? "x" : "") << shape_[i];
  os << "]";
  return os.str();
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

void Tensor::add_(const Tensor& other) {
  if (!same_shape(other)) throw std::invalid_argument("add_: shape mismatch " + shape_str() + " vs " + other.shape_str());
  const double* o = other.data();
  double* d = data();
  for (int64_t i = 0; i < numel_; ++i) d[i] += o[i];
}

void Tensor::scale_(double s) {
  for (auto& v : data_) v *= s;
}

double Tensor::sum() const {
  double acc = 0.0;
  for (double v : data_) acc += v;
  return acc;
}

}  // namespace semimoe
