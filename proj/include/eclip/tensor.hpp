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
#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace eclip {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& dims);
std::string shape_str(const Shape& dims);

// Dense row-major f64 array. Plain value type: copies copy the buffer.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape dims);
  Tensor(Shape dims, std::vector<double> data);
  Tensor(Shape dims, std::initializer_list<double> data);

  static Tensor scalar(double v) { return Tensor({}, std::vector<double>{v}); }
  static Tensor full(Shape dims, double v);

  const Shape& dims() const { return dims_; }
  std::size_t rank() const { return dims_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty() && dims_.empty(); }

  std::span<const double> data() const { return data_; }
  std::span<double> data() { return data_; }
  const double* ptr() const { return data_.data(); }
  double* ptr() { return data_.data(); }
  std::vector<double>& storage() { return data_; }

  double operator[](std::size_t i) const { return data_[i]; }
  double& operator[](std::size_t i) { return data_[i]; }
  // Value of a one-element tensor.
  double item() const;

  // Same buffer under new extents; ShapeError if the element count differs.
  Tensor reshaped(Shape dims) const&;
  Tensor reshaped(Shape dims) &&;

  bool all_finite() const;

 private:
  Shape dims_;
  std::vector<double> data_;
};

// Integer matrix (token ids, label vectors).
struct IndexMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::uint32_t> values;

  std::uint32_t at(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
  std::span<const std::uint32_t> row(std::size_t r) const {
    return std::span<const std::uint32_t>(values).subspan(r * cols, cols);
  }
};

}  // namespace eclip
