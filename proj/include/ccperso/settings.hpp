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
#include <iosfwd>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "ccperso/adapt.hpp"
#include "ccperso/corpus.hpp"
#include "ccperso/filter.hpp"
#include "ccperso/train.hpp"

namespace ccperso {

struct EvalConfig {
  std::size_t beam_width = 4;
  // Per-round WERs in round logs and sweeps; 0 skips them.
  std::size_t round_beam_width = 1;
};

struct SweepConfig {
  std::vector<std::size_t> epochs{1, 3, 5};
  std::size_t rounds = 20;
  std::vector<std::uint64_t> seeds{0};
  std::vector<AdaptMethod> methods{AdaptMethod::cc, AdaptMethod::nst};
  FilterKind cc_filter = FilterKind::ncm;
  FilterKind nst_filter = FilterKind::none;
  double ema_weight = 0.6;

  FilterKind filter_for(AdaptMethod m) const { return m == AdaptMethod::nst ? nst_filter : cc_filter; }
};

// Every tunable of the pipeline behind flat dotted keys. The model's feature
// and vocabulary sizes always follow the corpus.
struct Settings {
  CorpusConfig corpus;
  PretrainConfig pretrain;
  std::size_t calibration_beam_width = 4;
  NcmConfig ncm;
  DustConfig dust;
  FilterKind filter = FilterKind::ncm;
  AdaptationConfig adapt;
  EvalConfig eval;
  SweepConfig sweep;

  // "seed" sets every stage seed at once. Unknown keys and bad values throw
  // ConfigError naming the key.
  void set(std::string_view key, std::string_view value);
  std::string get(std::string_view key) const;
  // Every readable key in a stable order.
  static std::vector<std::string> keys();
  std::vector<std::pair<std::string, std::string>> snapshot() const;
  void validate() const;
};

// "key = value" lines; blank lines and '#' comments are skipped.
void apply_settings(Settings& settings, std::istream& in);
void apply_settings_file(Settings& settings, const std::filesystem::path& path);
void write_settings(const Settings& settings, std::ostream& out);

}  // namespace ccperso
