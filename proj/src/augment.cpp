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

#include "ccperso/augment.hpp"

#include <algorithm>
#include <cmath>

#include "ccperso/error.hpp"
#include "ccperso/rng.hpp"

namespace ccperso {

AugmentPolicy AugmentPolicy::none() {
  AugmentPolicy p;
  p.n_freq_masks = p.max_freq_width = p.n_time_masks = p.max_time_width = 0;
  return p;
}

AugmentPolicy AugmentPolicy::for_feature_dim(std::size_t f) {
  AugmentPolicy p;
  p.max_freq_width = static_cast<std::size_t>(std::lround(static_cast<double>(f) * 13.0 / 80.0));
  return p;
}

AugmentPolicy AugmentPolicy::short_utterances(std::size_t f) {
  AugmentPolicy p = for_feature_dim(f);
  p.max_time_width = 2;
  return p;
}

void AugmentPolicy::validate() const {
  if (fixed_width && ((n_freq_masks > 0 && max_freq_width == 0) ||
                      (n_time_masks > 0 && max_time_width == 0))) {
    throw ConfigError("fixed-width masking needs non-zero widths");
  }
}

Tensor spec_augment(const Tensor& features, const AugmentPolicy& policy, std::uint64_t seed) {
  if (features.rank() != 2 || features.rows() < 1) {
    throw ShapeError("spec_augment expects a T x F matrix with T >= 1");
  }
  const std::size_t t_len = features.rows(), f_len = features.cols();
  Tensor out = features;
  Rng rng(seed);
  auto band = [&](std::size_t max_width, std::size_t extent) -> std::pair<std::size_t, std::size_t> {
    const std::size_t cap = std::min(max_width, extent);
    const std::size_t w = policy.fixed_width ? cap : rng.uniform_int(0, cap);
    const std::size_t start = rng.uniform_int(0, extent - w);
    return {start, w};
  };
  for (std::size_t m = 0; m < policy.n_freq_masks; ++m) {
    auto [start, w] = band(policy.max_freq_width, f_len);
    for (std::size_t t = 0; t < t_len; ++t) {
      for (std::size_t f = start; f < start + w; ++f) out.at(t, f) = 0.0;
    }
  }
  const std::size_t time_cap =
      policy.clamp_time_to_half ? std::min(policy.max_time_width, t_len / 2) : policy.max_time_width;
  for (std::size_t m = 0; m < policy.n_time_masks; ++m) {
    auto [start, w] = band(time_cap, t_len);
    for (std::size_t t = start; t < start + w; ++t) {
      for (std::size_t f = 0; f < f_len; ++f) out.at(t, f) = 0.0;
    }
  }
  return out;
}

void DropoutPolicy::validate() const {
  if (!(rate >= 0.0 && rate < 1.0)) throw ConfigError("dropout rate must be in [0, 1)");
}

Tensor dropout_mask(const Shape& shape, const DropoutPolicy& policy, std::uint64_t seed) {
  policy.validate();
  Tensor mask(shape);
  if (policy.rate == 0.0) {
    mask.fill(1.0);
    return mask;
  }
  const double keep = 1.0 / (1.0 - policy.rate);
  Rng rng(seed);
  for (double& x : mask.data()) x = rng.uniform() < policy.rate ? 0.0 : keep;
  return mask;
}

}  // namespace ccperso
