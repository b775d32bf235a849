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

#include "ccperso/optim.hpp"

#include <algorithm>
#include <cmath>

#include "ccperso/error.hpp"
#include "ccperso/simd/kernels.hpp"

namespace ccperso {

ParamSelector select_all(const ParamSet& params) {
  ParamSelector s;
  for (const auto& [name, _] : params) s.insert(name);
  return s;
}

void adam_step(ParamSet& params, const Gradients& grads, AdamState& state,
               const ParamSelector& selected) {
  if (!(state.learning_rate >= 0.0)) {
    throw ContractError("adam_step: learning rate must be non-negative");
  }
  for (const auto& name : selected) {
    auto p = params.find(name);
    if (p == params.end()) throw ContractError("adam_step: unknown parameter " + name);
    auto g = grads.find(name);
    if (g == grads.end()) throw ContractError("adam_step: missing gradient for " + name);
    if (g->second.shape() != p->second.shape()) {
      throw ShapeError("adam_step: gradient shape mismatch for " + name);
    }
  }
  ++state.step;
  const double bias1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bias2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  const auto& k = simd::kernels();
  for (const auto& name : selected) {
    Tensor& p = params.find(name)->second;
    const Tensor& g = grads.find(name)->second;
    auto m = state.first_moment.try_emplace(name, p.shape()).first;
    auto v = state.second_moment.try_emplace(name, p.shape()).first;
    k.adam(p.ptr(), g.ptr(), m->second.ptr(), v->second.ptr(), p.size(),
           state.learning_rate, state.beta1, state.beta2, state.epsilon, bias1,
           bias2);
  }
}

GradCheckResult grad_check(const LossAndGrad& fn, const ParamSet& params,
                           double h, double abs_floor,
                           const ParamSelector* only) {
  const auto [loss, analytic] = fn(params);
  if (!std::isfinite(loss)) throw NumericError("grad_check: non-finite loss");
  GradCheckResult result;
  ParamSet probe = params;
  for (auto& [name, tensor] : probe) {
    if (only && !only->contains(name)) continue;
    auto ga = analytic.find(name);
    for (std::size_t i = 0; i < tensor.size(); ++i) {
      const double orig = tensor[i];
      tensor[i] = orig + h;
      const double up = fn(probe).first;
      tensor[i] = orig - h;
      const double down = fn(probe).first;
      tensor[i] = orig;
      if (!std::isfinite(up) || !std::isfinite(down)) {
        throw NumericError("grad_check: non-finite loss while probing " + name);
      }
      const double numeric = (up - down) / (2.0 * h);
      const double a = ga == analytic.end() ? 0.0 : ga->second[i];
      const double denom = std::max({std::abs(a), std::abs(numeric), abs_floor});
      const double rel = std::abs(a - numeric) / denom;
      if (result.worst_param.empty() || rel > result.max_relative_error) {
        result.max_relative_error = rel;
        result.worst_param = name;
        result.worst_index = i;
        result.analytic = a;
        result.numeric = numeric;
      }
    }
  }
  return result;
}

}  // namespace ccperso
