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
#include "eclip/grad_check.hpp"

#include <cmath>

#include "eclip/errors.hpp"

namespace eclip {

GradCheckResult grad_check_detailed(const ScalarFn& f, const Tensor& x, double h) {
  if (!(h > 0.0)) throw ContractError("grad_check: step must be positive");
  Var input = Var::parameter(x);
  Var loss = f(input);
  if (loss.value().size() != 1) throw ContractError("grad_check: function must return a scalar");
  if (!std::isfinite(loss.value()[0])) throw NumericError("grad_check: f(x) is not finite");
  backward(loss);
  const Tensor analytic = input.grad();

  GradCheckResult result;
  Tensor probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = probe[i];
    probe[i] = saved + h;
    const double up = f(Var::constant(probe)).value()[0];
    probe[i] = saved - h;
    const double down = f(Var::constant(probe)).value()[0];
    probe[i] = saved;
    const double numeric = (up - down) / (2.0 * h);
    const double err = std::abs(analytic[i] - numeric) / std::max(1e-8, std::abs(analytic[i]) + std::abs(numeric));
    if (i == 0 || err > result.max_relative_error) result = {err, i, analytic[i], numeric};
  }
  return result;
}

}  // namespace eclip
