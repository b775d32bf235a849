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

#include <set>
#include <sstream>

#include <gtest/gtest.h>

#include "ccperso/error.hpp"
#include "ccperso/settings.hpp"

namespace ccperso {
namespace {

TEST(Settings, SnapshotRoundTripsThroughText) {
  Settings a;
  a.set("adapt.method", "nst");
  a.set("adapt.learning_rate", "0.00025");
  a.set("sweep.epochs", "1, 2,4");
  a.set("adapt.train_mode", "lhuc_only");
  std::stringstream text;
  write_settings(a, text);
  Settings b;
  apply_settings(b, text);
  EXPECT_EQ(a.snapshot(), b.snapshot());
  EXPECT_EQ(b.adapt.method, AdaptMethod::nst);
  EXPECT_EQ(b.sweep.epochs, (std::vector<std::size_t>{1, 2, 4}));
}

TEST(Settings, KeysAreUniqueAndReadable) {
  const Settings s;
  const auto keys = Settings::keys();
  std::set<std::string> seen(keys.begin(), keys.end());
  EXPECT_EQ(seen.size(), keys.size());
  for (const auto& k : keys) EXPECT_NO_THROW(s.get(k)) << k;
  EXPECT_EQ(s.get("adapt.lhuc_learning_rate"), "auto");
  EXPECT_EQ(s.get("adapt.train_mode"), "auto");
}

TEST(Settings, SeedSetsEveryStage) {
  Settings s;
  s.set("seed", "9");
  EXPECT_EQ(s.corpus.seed, 9u);
  EXPECT_EQ(s.pretrain.seed, 9u);
  EXPECT_EQ(s.ncm.seed, 9u);
  EXPECT_EQ(s.dust.seed, 9u);
  EXPECT_EQ(s.adapt.seed, 9u);
  s.set("adapt.seed", "3");
  EXPECT_EQ(s.adapt.seed, 3u);
  EXPECT_EQ(s.corpus.seed, 9u);
}

TEST(Settings, UnknownKeysAndBadValuesNameTheKey) {
  Settings s;
  try {
    s.set("adapt.learnign_rate", "1");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("adapt.learnign_rate"), std::string::npos);
  }
  try {
    s.set("adapt.rounds", "-2");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("adapt.rounds"), std::string::npos);
  }
  EXPECT_THROW(s.set("sweep.seeds", "1,,2"), ConfigError);
  EXPECT_THROW(s.get("nope"), ConfigError);
}

TEST(Settings, ParserSkipsCommentsAndReportsLines) {
  Settings s;
  std::istringstream ok("# comment\n\n  adapt.rounds = 4  \nfilter=ct\n");
  apply_settings(s, ok);
  EXPECT_EQ(s.adapt.rounds, 4u);
  EXPECT_EQ(s.filter, FilterKind::ct);
  std::istringstream bad("adapt.rounds = 4\nno equals sign\n");
  try {
    apply_settings(s, bad);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 2u);
  }
  EXPECT_THROW(apply_settings_file(s, "/nonexistent/settings.txt"), ConfigError);
}

TEST(Settings, ValidateRejectsOutOfRangeValues) {
  Settings s;
  EXPECT_NO_THROW(s.validate());
  s.sweep.ema_weight = 1.0;
  EXPECT_THROW(s.validate(), ConfigError);
  s.sweep.ema_weight = 0.6;
  s.eval.beam_width = 0;
  EXPECT_THROW(s.validate(), ConfigError);
}

}  // namespace
}  // namespace ccperso
