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
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "ccperso/adapt.hpp"
#include "ccperso/decode.hpp"
#include "ccperso/eval.hpp"
#include "ccperso/filter.hpp"
#include "ccperso/settings.hpp"

namespace ccperso {

// One personalisation speaker's utterances. `view` hides the heldin
// references and is what adaptation sees.
struct SpeakerData {
  std::string speaker;
  std::vector<const Utterance*> heldin;
  std::vector<const Utterance*> heldout;
  UnlabelledView view;
};

std::vector<SpeakerData> personalisation_data(const Corpus& corpus);
std::vector<const Utterance*> calibration_utterances(const Corpus& corpus);

// Decodes of utterances with known references, as CT points and NCM examples.
struct CalibrationSet {
  std::vector<CalibrationPoint> points;
  std::vector<NcmExample> examples;
  std::size_t correct = 0;
};

CalibrationSet collect_calibration(const Model& model, const std::vector<const Utterance*>& utts,
                                   std::size_t beam_width);

struct Calibration {
  CtCalibration ct;
  NcmModel ncm;
};

Calibration calibrate(const Model& model, const Corpus& corpus, const Settings& settings);
// ct.txt and ncm.txt under `dir`.
void save_calibration(const Calibration& c, const std::filesystem::path& dir);
Calibration load_calibration(const std::filesystem::path& dir);

// Filter choice for one speaker. The oracle filter is resolved here from
// references; it needs a model and is the only kind that reads them.
FilterChoice speaker_filter(FilterKind kind, const Calibration* calibration, const Settings& settings,
                            const Model& model, const SpeakerData& data);

struct SpeakerScores {
  ErrorTally heldin;
  ErrorTally heldout;
};

SpeakerScores score_speaker(const Model& model, const SpeakerData& data, std::size_t width);

struct SpeakerRun {
  AdaptationResult result;
  SpeakerScores after;
  // Per-round scores at the round beam width; empty when it is 0.
  std::vector<SpeakerScores> rounds;
};

// Personalises one speaker and scores the result. Round WERs are filled in
// the log when settings.eval.round_beam_width > 0.
SpeakerRun run_speaker(const Model& model, const SpeakerData& data, const AdaptationConfig& config,
                       const FilterChoice& filter, const EvalConfig& eval);

// Method label as used in reports: "ncm+cc", "nst", "em" and so on.
std::string run_label(AdaptMethod method, FilterKind filter);

struct SweepRow {
  std::string method;
  std::string filter;
  std::size_t epochs = 0;
  std::uint64_t seed = 0;
  std::size_t round = 0;
  std::string split;  // heldin or heldout
  double wer = 0.0;
  double werr = 0.0;
  double werr_ema = 0.0;
};

using SweepProgress = std::function<void(const std::string& what)>;

// Grid over methods x epochs x seeds on every personalisation speaker, WER
// pooled over speakers per round and compared with the initial model at the
// round beam width.
std::vector<SweepRow> run_sweep(const Model& model, const Corpus& corpus, const Calibration* calibration,
                                const Settings& settings, const SweepProgress& progress = {});
void write_sweep_csv(const std::vector<SweepRow>& rows, const std::filesystem::path& path);

}  // namespace ccperso
