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

#include <array>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ccperso/corpus.hpp"
#include "ccperso/decode.hpp"
#include "ccperso/model.hpp"

namespace ccperso {

struct FilterDecision {
  std::string id;
  std::string method;
  std::vector<double> scores;
  bool kept = false;
  std::string flag;  // empty, or why the verdict was forced

  friend bool operator==(const FilterDecision&, const FilterDecision&) = default;
};

struct FilteredSet {
  std::vector<FilterDecision> decisions;

  std::vector<std::string> kept_ids() const;
  std::size_t kept_count() const;
  bool keeps(std::string_view id) const;

  friend bool operator==(const FilteredSet&, const FilteredSet&) = default;
};

void save_filtered(const FilteredSet& set, const std::filesystem::path& path);
FilteredSet load_filtered(const std::filesystem::path& path);

FilteredSet keep_all(const UnlabelledView& view);

// ---------------------------------------------------------------- CT

struct CalibrationPoint {
  double score = 0.0;
  double wer = 0.0;  // WER = 0 is the positive class
};

struct CtCalibration {
  double threshold = 0.0;
  double gmean = 0.0;
};

// Sweeps midpoints of the sorted distinct scores and maximises
// sqrt(sensitivity * specificity); ties go to the lower threshold.
CtCalibration ct_calibrate(std::span<const CalibrationPoint> points);
// Keeps confidence_score >= threshold.
FilteredSet ct_filter(std::span<const DecodeRecord> hyps, double threshold);

// ---------------------------------------------------------------- DUST

struct DustConfig {
  std::size_t n_hyps = 5;
  double dropout_rate = 0.2;
  double threshold = 0.1;
  std::size_t beam_width = 4;
  std::uint64_t seed = 0;

  void validate() const;
};

// Rejects an utterance when any dropout decode is further than `threshold`
// (edit distance over reference length) from the clean decode.
FilterDecision dust_decide(std::string id, const TokenSeq& reference,
                           std::span<const TokenSeq> perturbed, double threshold);
FilteredSet dust_filter(const Model& model, const UnlabelledView& view, const DustConfig& config);

// ---------------------------------------------------------------- NCM

struct NcmExample {
  std::vector<TopK> topk;
  double beam_score = 0.0;
  bool correct = false;  // WER = 0
};

NcmExample ncm_example(const Hypothesis& h, bool correct = false);

struct NcmConfig {
  std::size_t hidden = 64;
  double learning_rate = 1e-3;
  double decay = 0.5;
  std::size_t decay_steps = 500;
  std::size_t batch_size = 32;
  double validation_fraction = 0.2;
  std::size_t max_epochs = 200;
  std::size_t patience = 15;
  std::uint64_t seed = 0;
};

struct NcmEpoch {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double validation_loss = 0.0;
  double validation_accuracy = 0.0;
};

// Per-token top-K logits through two tanh layers, single-head self-attention
// summed over tokens, concatenated with the beam score, two tanh layers and a
// two-way output (class 1 = WER 0).
struct NcmModel {
  ParamSet params;
  std::size_t hidden = 64;
  // Input standardisation fitted on the training split.
  double logit_mean = 0.0, logit_scale = 1.0;
  double score_mean = 0.0, score_scale = 1.0;
  double validation_accuracy = 0.0;
  std::vector<NcmEpoch> curve;

  // Log posterior of [WER > 0, WER = 0].
  std::array<double, 2> log_posterior(const NcmExample& x) const;
  bool predicts_correct(const NcmExample& x) const;
};

NcmModel ncm_init(std::size_t hidden, std::uint64_t seed);
NcmModel ncm_train(std::span<const NcmExample> data, const NcmConfig& config);
double ncm_loss(const NcmModel& model, std::span<const NcmExample> data);
FilteredSet ncm_filter(const NcmModel& model, std::span<const DecodeRecord> hyps);

void save_ncm(const NcmModel& model, const std::filesystem::path& path);
NcmModel load_ncm(const std::filesystem::path& path);

// ---------------------------------------------------------------- oracle

// Keeps utterances whose decode equals the reference. Reads references, so it
// refuses to run in an adaptation context.
FilteredSet oracle_filter(const Model& model, const std::vector<const Utterance*>& utts,
                          std::size_t width = 4);

// ---------------------------------------------------------------- dispatch

enum class FilterKind { none, ct, dust, ncm, oracle };
FilterKind parse_filter_kind(std::string_view s);
std::string_view filter_kind_name(FilterKind k);

struct FilterChoice {
  FilterKind kind = FilterKind::none;
  double ct_threshold = 0.0;
  DustConfig dust;
  std::shared_ptr<const NcmModel> ncm;
  // Oracle decisions are computed outside adaptation and passed in.
  std::optional<FilteredSet> precomputed;
  std::size_t beam_width = 4;
};

FilteredSet apply_filter(const FilterChoice& choice, const Model& model, const UnlabelledView& view);

}  // namespace ccperso
