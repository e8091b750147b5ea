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

#include <functional>

#include "eclip/autograd.hpp"

namespace eclip {

using ScalarFn = std::function<Var(const Var&)>;

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

// Compares backward() against central differences (f(x+h e) - f(x-h e)) / 2h
// coordinate by coordinate. Per-coordinate error is
// |analytic - numeric| / max(1e-8, |analytic| + |numeric|).
// NumericError if f(x) is not finite.
GradCheckResult grad_check_detailed(const ScalarFn& f, const Tensor& x, double h = 1e-5);

inline double grad_check(const ScalarFn& f, const Tensor& x, double h = 1e-5) {
  return grad_check_detailed(f, x, h).max_relative_error;
}

}  // namespace eclip
