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

#include "ccperso/tensor.hpp"

namespace ccperso {

struct AugmentPolicy {
  std::size_t n_freq_masks = 1;
  std::size_t max_freq_width = 3;
  std::size_t n_time_masks = 2;
  std::size_t max_time_width = 12;
  // Time widths are additionally clamped to T/2 when set.
  bool clamp_time_to_half = true;
  // Use the maximum width for every mask instead of sampling it.
  bool fixed_width = false;

  static AugmentPolicy none();
  // Frequency width round(F * 13 / 80), time width 12.
  static AugmentPolicy for_feature_dim(std::size_t f);
  // As for_feature_dim, with time masks of at most 2 frames for utterances a
  // few dozen frames long.
  static AugmentPolicy short_utterances(std::size_t f);
  void validate() const;
};

// Zeroes frequency bands and frame ranges. Unmasked cells are copied bit for
// bit.
Tensor spec_augment(const Tensor& features, const AugmentPolicy& policy, std::uint64_t seed);

enum class DropoutScope { encoder, joint, all };

struct DropoutPolicy {
  double rate = 0.0;
  DropoutScope scope = DropoutScope::all;

  bool active() const { return rate > 0.0; }
  bool covers_encoder() const { return active() && scope != DropoutScope::joint; }
  bool covers_joint() const { return active() && scope != DropoutScope::encoder; }
  void validate() const;
};

// Inverted dropout: cells are 0 or 1 / (1 - rate).
Tensor dropout_mask(const Shape& shape, const DropoutPolicy& policy, std::uint64_t seed);

}  // namespace ccperso
