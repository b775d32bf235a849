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
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ccperso/tensor.hpp"

namespace ccperso {

using TokenSeq = std::vector<int>;

enum class Split { pretrain, heldin_A, heldin_B, heldout };

std::string_view split_name(Split s);
Split parse_split(std::string_view s);
inline bool is_heldin(Split s) { return s == Split::heldin_A || s == Split::heldin_B; }

// Word tokens; the transducer blank is appended after the last word.
class Vocabulary {
 public:
  Vocabulary() = default;
  explicit Vocabulary(std::vector<std::string> tokens);

  std::size_t size() const { return tokens_.size(); }
  int blank_id() const { return static_cast<int>(tokens_.size()); }
  // Outputs of the transducer: every word plus blank.
  std::size_t output_size() const { return tokens_.size() + 1; }
  const std::string& token(int id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  std::optional<int> find(std::string_view word) const;
  int id(std::string_view word) const;
  const std::vector<std::string>& tokens() const { return tokens_; }

  TokenSeq encode(std::string_view sentence) const;
  std::string decode(const TokenSeq& ids) const;

  friend bool operator==(const Vocabulary&, const Vocabulary&) = default;

 private:
  std::vector<std::string> tokens_;
};

class ReferenceAccess;

// One recording. The ground-truth transcript is private: only
// ReferenceAccess can read it.
class Utterance {
 public:
  Utterance() = default;
  Utterance(std::string id, std::string speaker_id, Split split, Tensor features,
            TokenSeq reference);

  const std::string& id() const { return id_; }
  const std::string& speaker_id() const { return speaker_id_; }
  Split split() const { return split_; }
  const Tensor& features() const { return features_; }
  std::size_t frames() const { return features_.rows(); }

  friend bool operator==(const Utterance&, const Utterance&) = default;

 private:
  friend class ReferenceAccess;
  std::string id_;
  std::string speaker_id_;
  Split split_ = Split::pretrain;
  Tensor features_;
  TokenSeq reference_;
};

enum class AccessContext { neutral, adaptation, evaluation };

// Privileged path to reference transcripts. Every read is counted; reads
// made while an AdaptationScope is the innermost scope on the calling thread
// are contract violations.
class ReferenceAccess {
 public:
  static const TokenSeq& read(const Utterance& u);
  static std::uint64_t read_count();
  static void reset_count();
  static AccessContext current_context();

 private:
  friend class AdaptationScope;
  friend class EvaluationScope;
  static void set_context(AccessContext c);
};

class AdaptationScope {
 public:
  AdaptationScope();
  ~AdaptationScope();
  AdaptationScope(const AdaptationScope&) = delete;
  AdaptationScope& operator=(const AdaptationScope&) = delete;

 private:
  AccessContext previous_;
};

class EvaluationScope {
 public:
  EvaluationScope();
  ~EvaluationScope();
  EvaluationScope(const EvaluationScope&) = delete;
  EvaluationScope& operator=(const EvaluationScope&) = delete;

 private:
  AccessContext previous_;
};

enum class SpeakerRole { pretrain, calibration, personalisation };

std::string_view role_name(SpeakerRole r);
SpeakerRole parse_role(std::string_view s);

struct SpeakerProfile {
  std::string speaker_id;
  SpeakerRole role = SpeakerRole::pretrain;
  double shift_magnitude = 0.0;
  Tensor affine_transform;  // F x F
  Tensor bias;              // F
  double noise_sigma = 0.0;

  friend bool operator==(const SpeakerProfile&, const SpeakerProfile&) = default;
};

struct Corpus {
  Vocabulary vocabulary;
  std::size_t feature_dim = 0;
  std::vector<Utterance> utterances;
  std::vector<SpeakerProfile> profiles;

  const SpeakerProfile& profile(std::string_view speaker) const;
  std::vector<std::string> speakers(SpeakerRole role) const;

  friend bool operator==(const Corpus&, const Corpus&) = default;
};

struct CorpusConfig {
  std::size_t feature_dim = 16;
  std::size_t vocab_size = 40;
  std::size_t n_pretrain_speakers = 24;
  // Held back from pretraining; their references calibrate the filters.
  std::size_t n_calib_speakers = 6;
  std::size_t n_perso_speakers = 12;
  std::size_t pretrain_utts_per_speaker = 100;
  std::size_t calib_utts_per_speaker = 84;
  // Split evenly between heldin_A and heldin_B.
  std::size_t heldin_utts_per_speaker = 120;
  std::size_t heldout_utts_per_speaker = 40;
  std::size_t min_segment_frames = 3;
  std::size_t max_segment_frames = 8;
  double prototype_scale = 1.0;
  double frame_noise = 0.35;
  // Global multiplier on every personalisation and calibration speaker shift.
  double shift_magnitude = 1.0;
  double perso_shift_min = 0.4;
  double perso_shift_max = 1.2;
  double pretrain_shift_max = 0.3;
  double rotation_scale = 0.8;
  double bias_scale = 0.5;
  double speaker_noise = 0.3;
  double sigma_max = 0.5;
  std::uint64_t seed = 0;

  void validate() const;
};

// The fixed word list the grammars draw from, in vocabulary order.
const std::vector<std::string>& master_word_list();

Corpus generate_corpus(const CorpusConfig& config);

// All sentences a split's grammar can produce with the given vocabulary.
std::vector<TokenSeq> grammar_sentences(const Vocabulary& vocab, Split split);

// Builds the speaker transform for a magnitude from a seeded direction.
SpeakerProfile make_speaker_profile(const std::string& speaker, SpeakerRole role,
                                    double magnitude, const CorpusConfig& config);

// Applies a speaker's affine shift and additive noise to clean frames.
Tensor apply_speaker(const SpeakerProfile& profile, const Tensor& clean,
                     std::uint64_t seed);

// Features-only projection of an utterance for unsupervised code paths.
struct UnlabelledUtterance {
  std::string id;
  std::string speaker_id;
  Split split = Split::pretrain;
  Tensor features;

  friend bool operator==(const UnlabelledUtterance&, const UnlabelledUtterance&) = default;
};

class UnlabelledView {
 public:
  UnlabelledView() = default;
  explicit UnlabelledView(std::vector<UnlabelledUtterance> items) : items_(std::move(items)) {}

  std::size_t size() const { return items_.size(); }
  bool empty() const { return items_.empty(); }
  const UnlabelledUtterance& operator[](std::size_t i) const { return items_[i]; }
  auto begin() const { return items_.begin(); }
  auto end() const { return items_.end(); }
  const UnlabelledUtterance* find(std::string_view id) const;

  friend bool operator==(const UnlabelledView&, const UnlabelledView&) = default;

 private:
  std::vector<UnlabelledUtterance> items_;
};

UnlabelledView hide_references(const Corpus& corpus);
UnlabelledView hide_references(const std::vector<const Utterance*>& utterances);

std::vector<const Utterance*> select_utterances(const Corpus& corpus, std::string_view speaker,
                                                std::initializer_list<Split> splits);

void save_corpus(const Corpus& corpus, const std::filesystem::path& path);
Corpus load_corpus(const std::filesystem::path& path);
void write_corpus(const Corpus& corpus, std::ostream& out);
Corpus read_corpus(std::istream& in);

void save_view(const UnlabelledView& view, const std::filesystem::path& path);
UnlabelledView load_view(const std::filesystem::path& path);

}  // namespace ccperso
