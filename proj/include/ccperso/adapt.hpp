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
#include <optional>
#include <string>
#include <vector>

#include "ccperso/augment.hpp"
#include "ccperso/corpus.hpp"
#include "ccperso/filter.hpp"
#include "ccperso/model.hpp"

namespace ccperso {

enum class AdaptMethod { cc, nst, em, em_only, cc_lhuc };
AdaptMethod parse_adapt_method(std::string_view s);
std::string_view adapt_method_name(AdaptMethod m);
// Comma-separated list for error messages.
std::string adapt_method_names();

struct AdaptationConfig {
  AdaptMethod method = AdaptMethod::cc;
  std::size_t rounds = 10;
  std::size_t epochs_per_round = 3;
  double learning_rate = 1e-3;
  // Used whenever only LHUC is trained; defaults to min(200 * learning_rate, 0.1).
  std::optional<double> lhuc_learning_rate;
  std::size_t batch_size = 16;
  AugmentPolicy augment = AugmentPolicy::short_utterances(16);
  DropoutPolicy dropout{0.1, DropoutScope::all};
  // Overrides the method's own choice: cc_lhuc trains LHUC only, the rest
  // train the encoder.
  std::optional<TrainMode> train_mode;
  std::size_t beam_width = 4;
  double clip_norm = 0.0;
  std::uint64_t seed = 0;

  void validate() const;
  TrainMode effective_train_mode() const;
  double effective_learning_rate() const;
};

// Seed for the SpecAugment draw that produces an utterance's pseudo-label in
// a round, and for the draws it is trained on in each epoch. The two domains
// never share a seed for the same (utterance, round).
std::uint64_t label_seed(std::uint64_t base, std::size_t round, std::string_view id);
std::uint64_t train_seed(std::uint64_t base, std::size_t round, std::size_t epoch,
                         std::string_view id);

enum class LabelSource { augmented, clean };

struct PseudoLabel {
  std::string id;
  TokenSeq tokens;
  std::size_t round = 0;
  LabelSource source = LabelSource::augmented;

  friend bool operator==(const PseudoLabel&, const PseudoLabel&) = default;
};

using PseudoLabelledSet = std::vector<PseudoLabel>;

// Decodes every kept utterance, optionally after SpecAugment, and keeps the
// top hypothesis as a hard label.
PseudoLabelledSet pseudo_label(const Model& model, const UnlabelledView& view,
                               const FilteredSet& filtered, const AugmentPolicy& augment,
                               LabelSource source, std::uint64_t base_seed, std::size_t round,
                               std::size_t beam_width = 4);

struct RoundEntry {
  std::size_t round = 0;
  double loss = 0.0;
  // Filled by the round observer; NaN when nobody measured them.
  double wer_heldin = 0.0;
  double wer_heldout = 0.0;
  // Fraction of pseudo-labels that differ from the previous round's (round 1
  // compares against clean decodes of the initial model).
  double churn = 0.0;
  std::size_t labelled = 0;
};

using RoundObserver = std::function<void(const Model&, RoundEntry&)>;

struct AdaptationResult {
  Model model;
  std::vector<RoundEntry> log;
  FilteredSet filtered;
};

// Unsupervised personalisation on one speaker's unlabelled utterances. Runs
// inside an AdaptationScope; the observer is the only place allowed to open an
// EvaluationScope.
AdaptationResult personalise(const Model& initial, const UnlabelledView& view,
                             const AdaptationConfig& config, const FilterChoice& filter,
                             const RoundObserver& observer = {});

void write_round_log(const std::vector<RoundEntry>& log, std::ostream& out);
std::vector<RoundEntry> read_round_log(std::istream& in);

}  // namespace ccperso
