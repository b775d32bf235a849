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
#include <filesystem>
#include <functional>
#include <limits>

#include <gtest/gtest.h>

#include "ccperso/decode.hpp"
#include "ccperso/error.hpp"
#include "ccperso/rng.hpp"

namespace ccperso {
namespace {

Tensor random_matrix(std::size_t r, std::size_t c, std::uint64_t seed, double sd = 1.0) {
  Rng rng(seed);
  Tensor t({r, c});
  for (double& x : t.data()) x = sd * rng.normal();
  return t;
}

Model random_model(std::size_t vocab, std::size_t dim, std::uint64_t seed, double out_scale = 3.0) {
  ModelConfig c;
  c.feature_dim = 3;
  c.vocab_size = vocab;
  c.encoder_dim = c.embed_dim = c.pred_dim = c.joint_dim = dim;
  Model m = init_model(c, seed);
  // Sharper outputs and a blank bias spread the decodes over lengths.
  for (double& w : m.params["joint.Wo"].data()) w *= out_scale;
  Rng rng(seed ^ 0xb1a4c);
  m.params["joint.bo"][vocab] = rng.uniform(-1.0, 2.0);
  return m;
}

// Best single alignment over every path within the per-frame emission cap.
// Depth-first with an exact bound: partial scores never increase, so a branch
// already below the incumbent cannot win.
double exhaustive_best_path(const Model& m, const Tensor& x) {
  const Inference inf(m, x);
  const int blank = m.config.blank_id();
  double best = -std::numeric_limits<double>::infinity();
  std::function<void(std::size_t, std::size_t, std::size_t, const Inference::PredState&, double)>
      walk = [&](std::size_t t, std::size_t u, std::size_t level,
                 const Inference::PredState& st, double logp) {
        if (logp <= best) return;
        const Tensor lp = ops::log_softmax(inf.logits(t, u, st));
        const double adv = logp + lp[static_cast<std::size_t>(blank)];
        if (t + 1 == inf.frames()) {
          best = std::max(best, adv);
        } else {
          walk(t + 1, u, 0, st, adv);
        }
        if (level < kMaxEmissionsPerFrame) {
          for (int k = 0; k < blank; ++k) {
            const double next = logp + lp[static_cast<std::size_t>(k)];
            if (next > best) walk(t, u + 1, level + 1, inf.step(st, k), next);
          }
        }
      };
  walk(0, 0, 0, inf.initial(), 0.0);
  return best;
}

TEST(Greedy, BlankDominatedModelEmitsNothing) {
  Model m = random_model(5, 6, 1);
  m.params["joint.bo"][5] = 100.0;
  const Hypothesis h = greedy_decode(m, random_matrix(7, 3, 2));
  EXPECT_TRUE(h.tokens.empty());
  EXPECT_EQ(h.alignment.size(), 7u);
  EXPECT_EQ(confidence_score(h), 0.0);
}

TEST(Greedy, HandTracedTwoFrameModel) {
  // Every weight zero except identity maps, and a saturated update gate, so
  // the logits at frame t are tanh(tanh(tanh(x_t))) whatever was emitted.
  ModelConfig c;
  c.feature_dim = 4;
  c.vocab_size = 3;
  c.encoder_dim = c.embed_dim = c.pred_dim = c.joint_dim = 4;
  Model m = init_model(c, 0);
  for (auto& [name, t] : m.params) t.fill(0.0);
  for (const char* name : {"enc.in.W", "enc.rec.Wc", "joint.We", "joint.Wo"}) {
    for (std::size_t i = 0; i < 4; ++i) m.params[name].at(i, i) = 1.0;
  }
  m.params["enc.rec.bz"].fill(50.0);
  const Tensor x = Tensor::matrix({{0.0, 0.0, 0.0, 2.0}, {0.0, 3.0, 0.0, 1.0}});
  const Hypothesis h = greedy_decode(m, x);
  // Frame 0: blank wins. Frame 1: token 1 wins until the emission cap.
  const std::size_t cap = kMaxEmissionsPerFrame;
  EXPECT_EQ(h.tokens, TokenSeq(cap, 1));
  ASSERT_EQ(h.alignment.size(), cap + 2);
  EXPECT_EQ(h.alignment[0].symbol, 3);
  EXPECT_EQ(h.alignment[cap + 1].symbol, 3);
  auto f = [](double v) { return std::tanh(std::tanh(std::tanh(v))); };
  auto log_softmax_at = [&](std::vector<double> l, std::size_t k) {
    double z = 0.0;
    for (double v : l) z += std::exp(v);
    return l[k] - std::log(z);
  };
  const std::vector<double> l0{f(0), f(0), f(0), f(2)}, l1{f(0), f(3), f(0), f(1)};
  EXPECT_NEAR(h.alignment[0].log_prob, log_softmax_at(l0, 3), 1e-12);
  for (double lp : h.token_logps) EXPECT_NEAR(lp, log_softmax_at(l1, 1), 1e-12);
  EXPECT_NEAR(h.alignment[cap + 1].log_prob, log_softmax_at(l1, 3), 1e-12);
  EXPECT_NEAR(confidence_score(h), static_cast<double>(cap) * log_softmax_at(l1, 1), 1e-12);
}

TEST(Greedy, ScoresAgreeWithTheLattice) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Model m = random_model(6, 8, seed);
    const Tensor x = random_matrix(6, 3, seed + 100);
    const Hypothesis h = greedy_decode(m, x);
    const auto lat = forward_lattice(m, x, h.tokens);
    double sum = 0.0, tokens = 0.0;
    std::size_t u = 0;
    for (const auto& step : h.alignment) {
      EXPECT_EQ(step.log_prob, lat.log_prob(step.frame, u, step.symbol));
      sum += step.log_prob;
      if (step.symbol != m.config.blank_id()) {
        tokens += step.log_prob;
        ++u;
      }
    }
    EXPECT_EQ(u, h.tokens.size());
    EXPECT_DOUBLE_EQ(h.alignment_logp, sum);
    EXPECT_EQ(h.log_prob, h.alignment_logp);
    EXPECT_DOUBLE_EQ(confidence_score(h), tokens);
    for (std::size_t i = 0; i < h.tokens.size(); ++i) EXPECT_EQ(h.topk[i].ids[0], h.tokens[i]);
  }
}

TEST(Beam, WidthOneIsGreedy) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const Model m = random_model(2 + seed % 5, 4 + seed % 5, seed);
    const Tensor x = random_matrix(1 + seed % 8, 3, seed * 7 + 1);
    const auto beams = beam_search(m, x, 1);
    ASSERT_EQ(beams.size(), 1u);
    EXPECT_EQ(beams[0], greedy_decode(m, x)) << "seed " << seed;
  }
}

TEST(Beam, TopScoreCoversExhaustiveBestPath) {
  ModelConfig c;
  c.feature_dim = 3;
  c.vocab_size = 2;
  c.encoder_dim = c.embed_dim = c.pred_dim = c.joint_dim = 4;
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const Model m = init_model(c, seed);
    const Tensor x = random_matrix(1 + seed % 3, 3, seed + 500);
    const auto beams = beam_search(m, x, 4);
    EXPECT_GE(beams.front().log_prob, exhaustive_best_path(m, x) - 1e-9) << "seed " << seed;
  }
}

TEST(Beam, WiderBeamsNeverLowerTheTopScore) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Model m = random_model(4, 6, seed);
    const Tensor x = random_matrix(5, 3, seed + 900);
    double previous = -std::numeric_limits<double>::infinity();
    for (std::size_t w = 1; w <= 4; ++w) {
      const double top = beam_search(m, x, w).front().log_prob;
      EXPECT_GE(top, previous - 1e-12) << "seed " << seed << " width " << w;
      previous = top;
    }
  }
}

TEST(Beam, HypothesesAreSortedAndConsistent) {
  const Model m = random_model(5, 8, 3);
  const Tensor x = random_matrix(8, 3, 4);
  const auto beams = beam_search(m, x, 4);
  ASSERT_GE(beams.size(), 2u);
  for (std::size_t i = 0; i < beams.size(); ++i) {
    const auto& h = beams[i];
    if (i) {
      EXPECT_GE(beams[i - 1].log_prob, h.log_prob);
    }
    EXPECT_LE(h.log_prob, 0.0);
    EXPECT_GE(h.log_prob, h.alignment_logp - 1e-12);
    EXPECT_EQ(h.beam_score, h.log_prob);
    EXPECT_EQ(h.token_logps.size(), h.tokens.size());
    EXPECT_EQ(h.topk.size(), h.tokens.size());
    double sum = 0.0;
    for (const auto& s : h.alignment) sum += s.log_prob;
    EXPECT_NEAR(sum, h.alignment_logp, 1e-12);
    for (const auto& k : h.topk) {
      for (std::size_t j = 1; j < kTopK; ++j) EXPECT_GE(k.logits[j - 1], k.logits[j]);
    }
  }
  EXPECT_EQ(beams, beam_search(m, x, 4));
}

TEST(Beam, DropoutDecodesDependOnSeed) {
  const Model m = random_model(6, 8, 5, 1.0);
  const Tensor x = random_matrix(12, 3, 6);
  const Perturbation a{DropoutPolicy{0.2}, 1}, b{DropoutPolicy{0.2}, 2};
  EXPECT_EQ(beam_search(m, x, 4, &a), beam_search(m, x, 4, &a));
  EXPECT_NE(beam_search(m, x, 4, &a).front().log_prob, beam_search(m, x, 4, &b).front().log_prob);
}

TEST(Beam, RejectsZeroWidth) {
  EXPECT_THROW(beam_search(random_model(3, 4, 1), random_matrix(2, 3, 1), 0), ContractError);
}

TEST(Confidence, SumsTokenScores) {
  EXPECT_EQ(confidence_score(Hypothesis{}), 0.0);
  Hypothesis h;
  h.tokens = {1, 2};
  h.token_logps = {-0.1, -0.2};
  EXPECT_DOUBLE_EQ(confidence_score(h), -0.1 + -0.2);
  EXPECT_NEAR(confidence_score(h), -0.3, 1e-15);
}

TEST(TopK, OrdersAndPads) {
  const std::vector<double> v{0.5, 2.0, -1.0, 2.0, 0.1};
  const TopK k = top_k(v);
  EXPECT_EQ(k.ids, (std::array<int, 4>{1, 3, 0, 4}));
  const TopK small = top_k(std::vector<double>{1.0, 3.0});
  EXPECT_EQ(small.ids, (std::array<int, 4>{1, 0, -1, -1}));
  EXPECT_EQ(small.logits[3], -std::numeric_limits<double>::infinity());
}

TEST(DecodeDump, JsonLinesRoundTrip) {
  const Model m = random_model(2, 4, 8);
  std::vector<DecodeRecord> records;
  for (int i = 0; i < 5; ++i) {
    records.push_back({"utt" + std::to_string(i), beam_search(m, random_matrix(4, 3, i), 4).front()});
  }
  const auto path = std::filesystem::temp_directory_path() / "ccperso_decodes.jsonl";
  save_decodes(records, path);
  EXPECT_EQ(load_decodes(path), records);
  std::filesystem::remove(path);
}

}  // namespace
}  // namespace ccperso
