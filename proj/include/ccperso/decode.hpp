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
#include <string>
#include <vector>

#include "ccperso/corpus.hpp"
#include "ccperso/model.hpp"

namespace ccperso {

inline constexpr std::size_t kTopK = 4;
inline constexpr std::size_t kMaxEmissionsPerFrame = 8;

struct TopK {
  std::array<int, kTopK> ids{};
  // Descending; outputs beyond the vocabulary pad with id -1 at -inf.
  std::array<double, kTopK> logits{};

  friend bool operator==(const TopK&, const TopK&) = default;
};

struct AlignmentStep {
  std::size_t frame = 0;
  int symbol = 0;  // blank advances the frame
  double log_prob = 0.0;

  friend bool operator==(const AlignmentStep&, const AlignmentStep&) = default;
};

struct Hypothesis {
  TokenSeq tokens;
  // Beam score, summed over merged alignments. Equal to alignment_logp for
  // greedy decoding.
  double log_prob = 0.0;
  double beam_score = 0.0;
  // Sum of log posteriors along the best single alignment.
  double alignment_logp = 0.0;
  std::vector<double> token_logps;
  std::vector<TopK> topk;
  std::vector<AlignmentStep> alignment;

  friend bool operator==(const Hypothesis&, const Hypothesis&) = default;
};

Hypothesis greedy_decode(const Model& model, const Tensor& features,
                         const Perturbation* perturb = nullptr);

// Best first. Width 1 reproduces greedy_decode exactly.
std::vector<Hypothesis> beam_search(const Model& model, const Tensor& features, std::size_t width,
                                    const Perturbation* perturb = nullptr);

// Sum of the emitted tokens' log posteriors; 0 for an empty hypothesis.
double confidence_score(const Hypothesis& h);

TopK top_k(std::span<const double> logits);

struct DecodeRecord {
  std::string id;
  Hypothesis hyp;

  friend bool operator==(const DecodeRecord&, const DecodeRecord&) = default;
};

DecodeRecord decode_utterance(const Model& model, const UnlabelledUtterance& u, std::size_t width);
std::vector<DecodeRecord> decode_all(const Model& model, const UnlabelledView& view,
                                     std::size_t width);

// One JSON object per line.
void save_decodes(const std::vector<DecodeRecord>& records, const std::filesystem::path& path);
std::vector<DecodeRecord> load_decodes(const std::filesystem::path& path);
std::string decode_record_json(const DecodeRecord& r);
DecodeRecord parse_decode_record(std::string_view line);

}  // namespace ccperso
