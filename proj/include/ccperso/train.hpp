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
#include <iosfwd>
#include <span>
#include <vector>

#include "ccperso/augment.hpp"
#include "ccperso/corpus.hpp"
#include "ccperso/model.hpp"
#include "ccperso/optim.hpp"

namespace ccperso {

// One training target. `seed` keys the SpecAugment draw and the dropout masks.
struct TrainItem {
  const Tensor* features = nullptr;
  const TokenSeq* target = nullptr;
  std::uint64_t seed = 0;
};

struct TrainPerturbation {
  AugmentPolicy augment = AugmentPolicy::none();
  DropoutPolicy dropout;
};

struct BatchResult {
  double loss = 0.0;  // mean over items
  Gradients grads;
};

// Mean transducer loss of a minibatch under the given input and dropout
// perturbation, with gradients for every parameter.
BatchResult transducer_batch(const Model& model, std::span<const TrainItem> items,
                             const TrainPerturbation& perturb);

// Perturbation actually applied to one item.
Tensor perturbed_features(const TrainItem& item, const TrainPerturbation& perturb);
Perturbation dropout_for(const TrainItem& item, const TrainPerturbation& perturb);

double gradient_norm(const Gradients& g);
// Rescales to at most max_norm; returns the norm before clipping. max_norm <= 0 disables.
double clip_gradients(Gradients& g, double max_norm);

struct PretrainConfig {
  ModelConfig model;
  std::size_t max_epochs = 40;
  double learning_rate = 3e-3;
  std::size_t batch_size = 16;
  AugmentPolicy augment = AugmentPolicy::short_utterances(16);
  double dropout = 0.1;
  std::size_t validation_utts = 200;
  double target_wer = 5.0;
  double clip_norm = 5.0;
  std::uint64_t seed = 0;

  void validate() const;
};

struct PretrainEpoch {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double validation_wer = 0.0;
};

struct PretrainResult {
  Model model;  // best validation WER
  std::vector<PretrainEpoch> curve;
  double best_validation_wer = 0.0;
};

using PretrainObserver = std::function<void(const PretrainEpoch&)>;

// Supervised training on the pretrain speakers' utterances. LHUC stays at
// its identity value.
PretrainResult pretrain(const Corpus& corpus, const PretrainConfig& config,
                        const PretrainObserver& observer = {});

void write_pretrain_curve(const std::vector<PretrainEpoch>& curve, std::ostream& out);

}  // namespace ccperso
