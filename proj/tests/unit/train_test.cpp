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

#include <cmath>
#include <sstream>

#include <gtest/gtest.h>

#include "ccperso/error.hpp"
#include "ccperso/rng.hpp"
#include "ccperso/train.hpp"

namespace ccperso {
namespace {

ModelConfig tiny_config() {
  ModelConfig c;
  c.feature_dim = 4;
  c.vocab_size = 5;
  c.encoder_dim = c.embed_dim = c.pred_dim = c.joint_dim = 6;
  return c;
}

Tensor random_features(std::size_t t, std::size_t f, std::uint64_t seed) {
  Rng rng(seed);
  Tensor x({t, f});
  for (double& v : x.data()) v = rng.normal();
  return x;
}

TEST(ClipGradients, ScalesDownToTheBound) {
  Gradients g{{"a", Tensor({2}, {3.0, 0.0})}, {"b", Tensor({1}, {4.0})}};
  EXPECT_DOUBLE_EQ(clip_gradients(g, 1.0), 5.0);
  EXPECT_NEAR(gradient_norm(g), 1.0, 1e-12);
  EXPECT_NEAR(g.at("a").data()[0], 0.6, 1e-12);
  EXPECT_NEAR(g.at("b").data()[0], 0.8, 1e-12);
}

TEST(ClipGradients, LeavesSmallOrDisabledUntouched) {
  Gradients g{{"a", Tensor({2}, {3.0, 4.0})}};
  clip_gradients(g, 10.0);
  EXPECT_EQ(g.at("a").values(), (std::vector<double>{3.0, 4.0}));
  clip_gradients(g, 0.0);
  EXPECT_EQ(g.at("a").values(), (std::vector<double>{3.0, 4.0}));
}

TEST(TransducerBatch, UnperturbedLossIsTheMeanOfItemLosses) {
  const Model m = init_model(tiny_config(), 3);
  const Tensor x1 = random_features(5, 4, 1), x2 = random_features(7, 4, 2);
  const TokenSeq y1{0, 2}, y2{1, 3, 4};
  const std::vector<TrainItem> items{{&x1, &y1, 10}, {&x2, &y2, 11}};
  const BatchResult r = transducer_batch(m, items, TrainPerturbation{});
  const double l1 = transducer_loss(forward_lattice(m, x1, y1), y1, m.config.blank_id()).loss;
  const double l2 = transducer_loss(forward_lattice(m, x2, y2), y2, m.config.blank_id()).loss;
  EXPECT_NEAR(r.loss, 0.5 * (l1 + l2), 1e-10);
  EXPECT_EQ(r.grads.size(), m.params.size());
}

TEST(TransducerBatch, GradientIsTheMeanOfSingleItemGradients) {
  const Model m = init_model(tiny_config(), 4);
  const Tensor x1 = random_features(4, 4, 5), x2 = random_features(6, 4, 6);
  const TokenSeq y1{2}, y2{0, 4};
  const std::vector<TrainItem> both{{&x1, &y1, 1}, {&x2, &y2, 2}};
  const auto r = transducer_batch(m, both, TrainPerturbation{});
  const auto a = transducer_batch(m, std::span(both).first(1), TrainPerturbation{});
  const auto b = transducer_batch(m, std::span(both).last(1), TrainPerturbation{});
  for (const auto& [name, g] : r.grads) {
    for (std::size_t i = 0; i < g.size(); ++i) {
      EXPECT_NEAR(g.data()[i], 0.5 * (a.grads.at(name).data()[i] + b.grads.at(name).data()[i]), 1e-12)
          << name;
    }
  }
}

TEST(PerturbedFeatures, DependsOnlyOnTheItemSeed) {
  const Tensor x = random_features(40, 16, 9);
  const TokenSeq y{1};
  TrainPerturbation p;
  p.augment = AugmentPolicy::for_feature_dim(16);
  const TrainItem a{&x, &y, 77}, b{&x, &y, 78};
  EXPECT_EQ(perturbed_features(a, p), perturbed_features(a, p));
  EXPECT_NE(perturbed_features(a, p), perturbed_features(b, p));
  EXPECT_EQ(perturbed_features(a, TrainPerturbation{}), x);
}

TEST(PretrainConfig, RejectsDegenerateSettings) {
  PretrainConfig c;
  c.max_epochs = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.batch_size = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.learning_rate = 0.0;
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_NO_THROW(PretrainConfig{}.validate());
}

struct SmallRun {
  Corpus corpus;
  PretrainConfig config;
};

SmallRun small_run() {
  CorpusConfig cc;
  cc.n_pretrain_speakers = 2;
  cc.n_calib_speakers = 1;
  cc.n_perso_speakers = 1;
  cc.pretrain_utts_per_speaker = 20;
  cc.calib_utts_per_speaker = 4;
  cc.heldin_utts_per_speaker = 4;
  cc.heldout_utts_per_speaker = 2;
  cc.seed = 5;
  SmallRun r{generate_corpus(cc), {}};
  r.config.model.encoder_dim = r.config.model.embed_dim = 8;
  r.config.model.pred_dim = r.config.model.joint_dim = 8;
  r.config.max_epochs = 3;
  r.config.validation_utts = 8;
  r.config.target_wer = 0.0;
  r.config.seed = 2;
  return r;
}

TEST(Pretrain, IsDeterministicAndKeepsTheBestEpoch) {
  const SmallRun s = small_run();
  std::size_t seen = 0;
  const PretrainResult a = pretrain(s.corpus, s.config, [&](const PretrainEpoch&) { ++seen; });
  const PretrainResult b = pretrain(s.corpus, s.config);
  ASSERT_EQ(a.curve.size(), 3u);
  EXPECT_EQ(seen, 3u);
  double best = a.curve.front().validation_wer;
  for (std::size_t i = 0; i < a.curve.size(); ++i) {
    EXPECT_EQ(a.curve[i].epoch, i + 1);
    EXPECT_EQ(a.curve[i].train_loss, b.curve[i].train_loss);
    EXPECT_TRUE(std::isfinite(a.curve[i].train_loss));
    best = std::min(best, a.curve[i].validation_wer);
  }
  EXPECT_EQ(a.best_validation_wer, best);
  for (const auto& [name, t] : a.model.params) EXPECT_EQ(t, b.model.params.at(name));
}

TEST(Pretrain, LeavesLhucAtIdentity) {
  const SmallRun s = small_run();
  const PretrainResult r = pretrain(s.corpus, s.config);
  for (const auto& name : r.model.lhuc_names()) {
    for (double v : r.model.param(name).data()) EXPECT_EQ(v, 0.0);
  }
}

TEST(Pretrain, RejectsMismatchedModelDimensions) {
  SmallRun s = small_run();
  s.config.model.feature_dim = 7;
  EXPECT_THROW(pretrain(s.corpus, s.config), ConfigError);
}

TEST(PretrainCurve, WritesOneRowPerEpoch) {
  std::ostringstream out;
  write_pretrain_curve({{1, 2.5, 40.0}, {2, 1.25, 20.0}}, out);
  std::istringstream in(out.str());
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "epoch,train_loss,validation_wer");
  std::size_t rows = 0;
  while (std::getline(in, line)) ++rows;
  EXPECT_EQ(rows, 2u);
}

}  // namespace
}  // namespace ccperso
