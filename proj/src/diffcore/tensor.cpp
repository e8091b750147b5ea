// Copyright 2026-present the eclip project
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
#include "eclip/tensor.hpp"

#include <cmath>
#include <sstream>

#include "eclip/errors.hpp"

namespace eclip {

std::size_t shape_numel(const Shape& dims) {
  std::size_t n = 1;
  for (std::size_t d : dims) n *= d;
  return n;
}

std::string shape_str(const Shape& dims) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < dims.size(); ++i) os << (i ? "," : "") << dims[i];
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape dims) : dims_(std::move(dims)), data_(shape_numel(dims_), 0.0) {}

Tensor::Tensor(Shape dims, std::vector<double> data) : dims_(std::move(dims)), data_(std::move(data)) {
  if (data_.size() != shape_numel(dims_))
    throw ShapeError("tensor data length " + std::to_string(data_.size()) + " does not match extents " +
                     shape_str(dims_));
}

Tensor::Tensor(Shape dims, std::initializer_list<double> data)
    : Tensor(std::move(dims), std::vector<double>(data)) {}

Tensor Tensor::full(Shape dims, double v) {
  Tensor t(std::move(dims));
  for (double& x : t.data_) x = v;
  return t;
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= dims_.size())
    throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_str(dims_));
  return dims_[axis];
}

double Tensor::item() const {
  if (data_.size() != 1) throw ShapeError("item() on tensor with extents " + shape_str(dims_));
  return data_[0];
}

Tensor Tensor::reshaped(Shape dims) const& {
  Tensor copy = *this;
  return std::move(copy).reshaped(std::move(dims));
}

Tensor Tensor::reshaped(Shape dims) && {
  if (shape_numel(dims) != data_.size())
    throw ShapeError("cannot reshape " + shape_str(dims_) + " to " + shape_str(dims));
  dims_ = std::move(dims);
  return std::move(*this);
}

bool Tensor::all_finite() const {
  for (double v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

}  // namespace eclip
