// Copyright 2026 The ccperso Authors. All Rights Reserved.
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

#include <cstdint>
#include <functional>
#include <set>
#include <string>

#include "ccperso/tensor.hpp"

namespace ccperso {

struct AdamState {
  std::int64_t step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double learning_rate = 1e-3;
  ParamSet first_moment;
  ParamSet second_moment;
};

// Names of the parameters an optimizer may touch.
using ParamSelector = std::set<std::string, std::less<>>;

ParamSelector select_all(const ParamSet& params);

// One bias-corrected Adam update of every selected parameter. Moment
// accumulators are created lazily with the parameter's shape.
void adam_step(ParamSet& params, const Gradients& grads, AdamState& state,
               const ParamSelector& selected);

inline void adam_step(ParamSet& params, const Gradients& grads,
                      AdamState& state) {
  adam_step(params, grads, state, select_all(params));
}

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

// Loss value and backward-pass gradients at the given parameters.
using LossAndGrad = std::function<std::pair<double, Gradients>(const ParamSet&)>;

// Compares analytic gradients against central differences element by
// element. Relative error is |a - n| / max(|a|, |n|, abs_floor).
GradCheckResult grad_check(const LossAndGrad& fn, const ParamSet& params,
                           double h, double abs_floor = 1e-6,
                           const ParamSelector* only = nullptr);

}  // namespace ccperso
