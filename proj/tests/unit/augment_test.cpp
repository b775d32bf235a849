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

#include <gtest/gtest.h>

#include "ccperso/augment.hpp"
#include "ccperso/error.hpp"
#include "ccperso/rng.hpp"

namespace ccperso {
namespace {

Tensor random_features(std::size_t t, std::size_t f, std::uint64_t seed) {
  Rng rng(seed);
  Tensor x({t, f});
  // Strictly non-zero so every zero in the output is a mask.
  for (double& v : x.data()) v = 0.5 + rng.uniform();
  return x;
}

TEST(SpecAugment, EmptyPolicyIsIdentity) {
  const Tensor x = random_features(20, 16, 1);
  EXPECT_EQ(spec_augment(x, AugmentPolicy::none(), 99), x);
}

TEST(SpecAugment, DefaultWidthsScaleWithFeatureDim) {
  EXPECT_EQ(AugmentPolicy::for_feature_dim(16).max_freq_width, 3u);
  EXPECT_EQ(AugmentPolicy::for_feature_dim(80).max_freq_width, 13u);
  EXPECT_EQ(AugmentPolicy::for_feature_dim(16).max_time_width, 12u);
  const AugmentPolicy s = AugmentPolicy::short_utterances(16);
  EXPECT_EQ(s.max_freq_width, 3u);
  EXPECT_EQ(s.max_time_width, 2u);
  EXPECT_EQ(s.n_time_masks, 2u);
}

TEST(SpecAugment, FullWidthFrequencyMaskZeroesEverything) {
  const Tensor x = random_features(9, 16, 2);
  AugmentPolicy p = AugmentPolicy::none();
  p.n_freq_masks = 1;
  p.max_freq_width = 16;
  p.fixed_width = true;
  const Tensor y = spec_augment(x, p, 5);
  for (double v : y.data()) EXPECT_EQ(v, 0.0);
}

TEST(SpecAugment, ZeroCountIsBoundedAndUnmaskedCellsAreExact) {
  const AugmentPolicy p = AugmentPolicy::for_feature_dim(16);
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const std::size_t t = 1 + seed % 40;
    const Tensor x = random_features(t, 16, seed + 1000);
    const Tensor y = spec_augment(x, p, seed);
    ASSERT_EQ(y.shape(), x.shape());
    std::size_t zeros = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (y.data()[i] == 0.0) {
        ++zeros;
      } else {
        EXPECT_EQ(y.data()[i], x.data()[i]);
      }
    }
    const std::size_t bound = p.n_freq_masks * p.max_freq_width * t +
                              p.n_time_masks * std::min<std::size_t>(p.max_time_width, t / 2) * 16;
    EXPECT_LE(zeros, bound) << "seed " << seed;
  }
}

TEST(SpecAugment, MasksAreFullBandsOrFullFrames) {
  const Tensor x = random_features(30, 16, 3);
  AugmentPolicy p = AugmentPolicy::for_feature_dim(16);
  p.fixed_width = true;
  const Tensor y = spec_augment(x, p, 11);
  // Every zero cell lies in a fully zeroed column or a fully zeroed row.
  std::vector<bool> col_zero(16, true), row_zero(30, true);
  for (std::size_t t = 0; t < 30; ++t) {
    for (std::size_t f = 0; f < 16; ++f) {
      if (y.at(t, f) != 0.0) col_zero[f] = row_zero[t] = false;
    }
  }
  std::size_t cols = 0, rows = 0;
  for (bool b : col_zero) cols += b;
  for (bool b : row_zero) rows += b;
  EXPECT_GE(cols, 1u);
  EXPECT_LE(cols, 3u);
  EXPECT_GE(rows, 12u);
  EXPECT_LE(rows, 24u);
  for (std::size_t t = 0; t < 30; ++t) {
    for (std::size_t f = 0; f < 16; ++f) {
      if (y.at(t, f) == 0.0) {
        EXPECT_TRUE(col_zero[f] || row_zero[t]);
      }
    }
  }
}

TEST(SpecAugment, DeterministicPerSeedAndVariesAcrossSeeds) {
  const Tensor x = random_features(40, 16, 4);
  const AugmentPolicy p = AugmentPolicy::for_feature_dim(16);
  EXPECT_EQ(spec_augment(x, p, 7), spec_augment(x, p, 7));
  std::set<std::vector<double>> outputs;
  for (std::uint64_t s = 0; s < 20; ++s) {
    const Tensor y = spec_augment(x, p, s);
    outputs.emplace(y.data().begin(), y.data().end());
  }
  EXPECT_GE(outputs.size(), 18u);
}

TEST(SpecAugment, SingleFrameInput) {
  const Tensor x = random_features(1, 16, 5);
  const Tensor y = spec_augment(x, AugmentPolicy::for_feature_dim(16), 3);
  EXPECT_EQ(y.shape(), x.shape());
}

TEST(Dropout, RateZeroIsAllOnes) {
  const Tensor m = dropout_mask({7, 5}, DropoutPolicy{0.0}, 1);
  for (double v : m.data()) EXPECT_EQ(v, 1.0);
}

TEST(Dropout, HalfRateKeepsHalfWithInvertedScaling) {
  const Tensor m = dropout_mask({100000}, DropoutPolicy{0.5}, 42);
  std::size_t kept = 0;
  double sum = 0.0;
  for (double v : m.data()) {
    EXPECT_TRUE(v == 0.0 || v == 2.0);
    kept += v != 0.0;
    sum += v;
  }
  EXPECT_NEAR(static_cast<double>(kept) / 1e5, 0.5, 0.01);
  EXPECT_NEAR(sum / 1e5, 1.0, 0.02);
}

TEST(Dropout, DeterministicPerSeed) {
  const DropoutPolicy p{0.2};
  EXPECT_EQ(dropout_mask({64}, p, 3), dropout_mask({64}, p, 3));
  EXPECT_NE(dropout_mask({64}, p, 3), dropout_mask({64}, p, 4));
}

TEST(Dropout, RejectsRateOne) {
  EXPECT_THROW(dropout_mask({3}, DropoutPolicy{1.0}, 0), ConfigError);
  EXPECT_THROW(dropout_mask({3}, DropoutPolicy{-0.1}, 0), ConfigError);
}

}  // namespace
}  // namespace ccperso
