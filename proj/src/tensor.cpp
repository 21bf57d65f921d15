// Copyright Contributors to the INS Project
// SPDX-License-Identifier: Apache-2.0

#include "ins/tensor.h"

#include <cassert>
#include <cmath>
#include <sstream>
#include <utility>

namespace ins {

int64_t shape_numel(const std::vector<int>& shape) {
  int64_t n = 1;
  for (int d : shape) {
    if (d < 0) throw ArgumentError("negative tensor dimension");
    n *= d;
  }
  return n;
}

std::string shape_str(const std::vector<int>& shape) {
  std::ostringstream out;
  out << '[';
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) out << ',';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

Tensor::Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
  data_.assign(static_cast<size_t>(shape_numel(shape_)), 0.0);
}

Tensor Tensor::zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }

Tensor Tensor::full(std::vector<int> shape, double value) {
  Tensor t(std::move(shape));
  t.fill(value);
  return t;
}

Tensor Tensor::scalar(double value) { return full({1}, value); }

Tensor Tensor::from(std::vector<int> shape, std::vector<double> data) {
  if (shape_numel(shape) != static_cast<int64_t>(data.size()))
    throw ArgumentError("tensor data size does not match shape " + shape_str(shape));
  Tensor t;
  t.shape_ = std::move(shape);
  t.data_ = std::move(data);
  return t;
}

double& Tensor::at(int r, int c) {
  assert(rank() == 2);
  return data_[static_cast<size_t>(r) * static_cast<size_t>(shape_[1]) + static_cast<size_t>(c)];
}

double Tensor::at(int r, int c) const {
  assert(rank() == 2);
  return data_[static_cast<size_t>(r) * static_cast<size_t>(shape_[1]) + static_cast<size_t>(c)];
}

int Tensor::rows() const {
  assert(rank() == 2);
  return shape_[0];
}

int Tensor::cols() const {
  assert(rank() == 2);
  return shape_[1];
}

Tensor Tensor::reshaped(std::vector<int> new_shape) const {
  if (shape_numel(new_shape) != numel())
    throw ArgumentError("reshape from " + shape_str(shape_) + " to " + shape_str(new_shape));
  Tensor t;
  t.shape_ = std::move(new_shape);
  t.data_ = data_;
  return t;
}

bool Tensor::all_finite() const {
  for (double v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

void Tensor::fill(double value) { data_.assign(data_.size(), value); }

}  // namespace ins
