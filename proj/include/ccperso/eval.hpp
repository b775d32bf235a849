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

#include <algorithm>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ccperso/corpus.hpp"
#include "ccperso/model.hpp"

namespace ccperso {

struct EditCounts {
  std::size_t distance = 0;
  std::size_t substitutions = 0;
  std::size_t deletions = 0;
  std::size_t insertions = 0;

  friend bool operator==(const EditCounts&, const EditCounts&) = default;
};

// Levenshtein alignment. Among minimal alignments the backtrace prefers
// substitutions, then deletions, then insertions.
template <class Seq>
EditCounts edit_distance(const Seq& ref, const Seq& hyp) {
  const std::size_t n = ref.size(), m = hyp.size();
  std::vector<std::size_t> d((n + 1) * (m + 1));
  auto at = [&](std::size_t i, std::size_t j) -> std::size_t& { return d[i * (m + 1) + j]; };
  for (std::size_t i = 0; i <= n; ++i) at(i, 0) = i;
  for (std::size_t j = 0; j <= m; ++j) at(0, j) = j;
  for (std::size_t i = 1; i <= n; ++i) {
    for (std::size_t j = 1; j <= m; ++j) {
      const std::size_t sub = at(i - 1, j - 1) + (ref[i - 1] == hyp[j - 1] ? 0 : 1);
      at(i, j) = std::min({sub, at(i - 1, j) + 1, at(i, j - 1) + 1});
    }
  }
  EditCounts out;
  out.distance = at(n, m);
  std::size_t i = n, j = m;
  while (i > 0 || j > 0) {
    if (i > 0 && j > 0 && at(i, j) == at(i - 1, j - 1) + (ref[i - 1] == hyp[j - 1] ? 0 : 1)) {
      if (ref[i - 1] != hyp[j - 1]) ++out.substitutions;
      --i;
      --j;
    } else if (i > 0 && at(i, j) == at(i - 1, j) + 1) {
      ++out.deletions;
      --i;
    } else {
      ++out.insertions;
      --j;
    }
  }
  return out;
}

struct ErrorTally {
  std::size_t substitutions = 0;
  std::size_t deletions = 0;
  std::size_t insertions = 0;
  std::size_t ref_tokens = 0;
  std::size_t utterances = 0;

  void add(const TokenSeq& ref, const TokenSeq& hyp);
  void merge(const ErrorTally& other);
  std::size_t errors() const { return substitutions + deletions + insertions; }
  // Percent; throws ContractError without reference tokens.
  double wer() const;

  friend bool operator==(const ErrorTally&, const ErrorTally&) = default;
};

// Pooled over pairs: sum of distances / sum of reference lengths * 100.
double wer(std::span<const std::pair<TokenSeq, TokenSeq>> pairs);
// Relative reduction in percent.
double werr(double baseline_wer, double new_wer);
std::vector<double> ema_smooth(std::span<const double> series, double weight = 0.6);

// Decodes (beam `width`) and scores one speaker's utterances of one split.
// Reads references, so it must not run in an adaptation context.
ErrorTally score_utterances(const Model& model, const std::vector<const Utterance*>& utts,
                            std::size_t width);

struct WerCell {
  std::string method;
  std::string speaker;
  std::string split;  // heldin_A, heldin_B, heldin, heldout
  ErrorTally tally;

  friend bool operator==(const WerCell&, const WerCell&) = default;
};

struct WerReport {
  std::vector<WerCell> cells;
  std::vector<std::string> warnings;

  std::vector<std::string> methods() const;
  std::vector<std::string> speakers() const;
  std::vector<std::string> splits() const;
  // Pooled over speakers; nullopt when no cell matches.
  std::optional<ErrorTally> pooled(std::string_view method, std::string_view split) const;
  std::optional<ErrorTally> cell(std::string_view method, std::string_view speaker,
                                 std::string_view split) const;
};

// Adds heldin_A, heldin_B, pooled heldin and heldout cells for one speaker.
void add_speaker_cells(WerReport& report, const std::string& method, const std::string& speaker,
                       const Model& model, const Corpus& corpus, std::size_t width);

// Aggregate table: method, split, S, D, I, N, WER, WERR against `baseline`.
void write_aggregate_csv(const WerReport& report, const std::string& baseline,
                         const std::filesystem::path& path);
// Per-speaker table: method, speaker, split, N, WER, WERR against `baseline`.
void write_speaker_csv(const WerReport& report, const std::string& baseline,
                       const std::filesystem::path& path);
std::string aggregate_markdown(const WerReport& report, const std::string& baseline);

}  // namespace ccperso
