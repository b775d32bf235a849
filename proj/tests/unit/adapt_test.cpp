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
#include <set>
#include <sstream>

#include <gtest/gtest.h>

#include "ccperso/adapt.hpp"
#include "ccperso/decode.hpp"
#include "ccperso/error.hpp"

namespace ccperso {
namespace {

struct Fixture {
  Corpus corpus;
  Model model;
  std::vector<const Utterance*> heldin;
  UnlabelledView view;
};

const Fixture& fixture() {
  static const Fixture f = [] {
    CorpusConfig cc;
    cc.n_pretrain_speakers = 1;
    cc.n_calib_speakers = 1;
    cc.n_perso_speakers = 1;
    cc.pretrain_utts_per_speaker = 2;
    cc.calib_utts_per_speaker = 2;
    cc.heldin_utts_per_speaker = 6;
    cc.heldout_utts_per_speaker = 2;
    cc.seed = 11;
    Fixture out;
    out.corpus = generate_corpus(cc);
    ModelConfig mc;
    mc.encoder_dim = mc.embed_dim = mc.pred_dim = mc.joint_dim = 8;
    out.model = init_model(mc, 4);
    const auto speaker = out.corpus.speakers(SpeakerRole::personalisation).front();
    out.heldin = select_utterances(out.corpus, speaker, {Split::heldin_A, Split::heldin_B});
    out.view = hide_references(out.heldin);
    return out;
  }();
  return f;
}

AdaptationConfig quick(AdaptMethod method) {
  AdaptationConfig c;
  c.method = method;
  c.rounds = 3;
  c.epochs_per_round = 1;
  c.batch_size = 4;
  c.beam_width = 2;
  c.seed = 9;
  return c;
}

FilterChoice no_filter() { return FilterChoice{}; }

void expect_same_params(const Model& a, const Model& b) {
  for (const auto& [name, t] : a.params) EXPECT_EQ(t, b.params.at(name)) << name;
}

TEST(AdaptMethod, NamesRoundTrip) {
  for (auto m : {AdaptMethod::cc, AdaptMethod::nst, AdaptMethod::em, AdaptMethod::em_only,
                 AdaptMethod::cc_lhuc}) {
    EXPECT_EQ(parse_adapt_method(adapt_method_name(m)), m);
  }
  try {
    parse_adapt_method("bogus");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find(adapt_method_names()), std::string::npos);
  }
}

TEST(AdaptationConfig, TrainModeAndRateFollowTheMethod) {
  AdaptationConfig c;
  EXPECT_EQ(c.effective_train_mode(), TrainMode::encoder);
  EXPECT_DOUBLE_EQ(c.effective_learning_rate(), 1e-3);
  c.method = AdaptMethod::cc_lhuc;
  EXPECT_EQ(c.effective_train_mode(), TrainMode::lhuc_only);
  EXPECT_DOUBLE_EQ(c.effective_learning_rate(), 0.1);
  c.learning_rate = 1e-4;
  EXPECT_DOUBLE_EQ(c.effective_learning_rate(), 0.02);
  c.lhuc_learning_rate = 0.5;
  EXPECT_DOUBLE_EQ(c.effective_learning_rate(), 0.5);
  c.train_mode = TrainMode::full;
  EXPECT_DOUBLE_EQ(c.effective_learning_rate(), 1e-4);
}

TEST(AdaptationConfig, RejectsDegenerateSettings) {
  for (auto edit : std::vector<std::function<void(AdaptationConfig&)>>{
           [](auto& c) { c.rounds = 0; }, [](auto& c) { c.epochs_per_round = 0; },
           [](auto& c) { c.batch_size = 0; }, [](auto& c) { c.beam_width = 0; },
           [](auto& c) { c.learning_rate = -1.0; }, [](auto& c) { c.learning_rate = NAN; },
           [](auto& c) { c.lhuc_learning_rate = INFINITY; }}) {
    AdaptationConfig c;
    edit(c);
    EXPECT_THROW(c.validate(), ConfigError);
  }
}

TEST(SeedSchedule, LabelAndTrainingDrawsNeverCollide) {
  std::set<std::uint64_t> seen;
  std::size_t draws = 0;
  for (std::size_t u = 0; u < 200; ++u) {
    const std::string id = "spk00-" + std::to_string(u);
    for (std::size_t round = 1; round <= 20; ++round) {
      seen.insert(label_seed(0, round, id));
      ++draws;
      for (std::size_t epoch = 1; epoch <= 5; ++epoch) {
        seen.insert(train_seed(0, round, epoch, id));
        ++draws;
      }
    }
  }
  EXPECT_EQ(seen.size(), draws);
  EXPECT_NE(label_seed(0, 1, "a"), label_seed(1, 1, "a"));
}

TEST(PseudoLabel, UnperturbedLabelsAreTheCleanDecodes) {
  const Fixture& f = fixture();
  const FilteredSet all = keep_all(f.view);
  const auto clean = pseudo_label(f.model, f.view, all, AugmentPolicy::for_feature_dim(16),
                                  LabelSource::clean, 3, 1, 2);
  const auto none = pseudo_label(f.model, f.view, all, AugmentPolicy::none(),
                                 LabelSource::augmented, 3, 1, 2);
  ASSERT_EQ(clean.size(), f.view.size());
  for (std::size_t i = 0; i < clean.size(); ++i) {
    EXPECT_EQ(clean[i].id, f.view[i].id);
    EXPECT_EQ(clean[i].source, LabelSource::clean);
    EXPECT_EQ(clean[i].tokens, beam_search(f.model, f.view[i].features, 2).front().tokens);
    EXPECT_EQ(none[i].tokens, clean[i].tokens);
  }
}

TEST(Personalise, ZeroLearningRateLeavesTheModelUnchanged) {
  const Fixture& f = fixture();
  AdaptationConfig c = quick(AdaptMethod::cc);
  c.learning_rate = 0.0;
  const auto r = personalise(f.model, f.view, c, no_filter());
  expect_same_params(r.model, f.model);
  ASSERT_EQ(r.log.size(), c.rounds);
  for (std::size_t i = 0; i < r.log.size(); ++i) {
    EXPECT_EQ(r.log[i].round, i + 1);
    EXPECT_EQ(r.log[i].labelled, f.view.size());
    EXPECT_TRUE(std::isnan(r.log[i].wer_heldin));
  }
}

TEST(Personalise, IsBitwiseReproducible) {
  const Fixture& f = fixture();
  const AdaptationConfig c = quick(AdaptMethod::cc);
  const auto a = personalise(f.model, f.view, c, no_filter());
  const auto b = personalise(f.model, f.view, c, no_filter());
  expect_same_params(a.model, b.model);
  for (std::size_t i = 0; i < a.log.size(); ++i) {
    EXPECT_EQ(a.log[i].loss, b.log[i].loss);
    EXPECT_EQ(a.log[i].churn, b.log[i].churn);
  }
  AdaptationConfig other = c;
  other.seed = 10;
  const auto d = personalise(f.model, f.view, other, no_filter());
  EXPECT_NE(d.log.back().loss, a.log.back().loss);
}

TEST(Personalise, NeverReadsReferences) {
  const Fixture& f = fixture();
  ReferenceAccess::reset_count();
  for (auto m : {AdaptMethod::cc, AdaptMethod::nst, AdaptMethod::em, AdaptMethod::cc_lhuc}) {
    personalise(f.model, f.view, quick(m), no_filter());
  }
  EXPECT_EQ(ReferenceAccess::read_count(), 0u);
}

TEST(Personalise, ObserverNeedsAnEvaluationScopeToReadReferences) {
  const Fixture& f = fixture();
  const auto* u = f.heldin.front();
  EXPECT_THROW(personalise(f.model, f.view, quick(AdaptMethod::nst), no_filter(),
                           [&](const Model&, RoundEntry&) { ReferenceAccess::read(*u); }),
               ContractError);
  std::size_t calls = 0;
  personalise(f.model, f.view, quick(AdaptMethod::nst), no_filter(), [&](const Model&, RoundEntry& e) {
    EvaluationScope scope;
    e.wer_heldin = static_cast<double>(ReferenceAccess::read(*u).size());
    ++calls;
  });
  EXPECT_EQ(calls, 3u);
}

TEST(Personalise, LhucOnlyTrainingTouchesNothingElse) {
  const Fixture& f = fixture();
  const auto r = personalise(f.model, f.view, quick(AdaptMethod::cc_lhuc), no_filter());
  const auto lhuc = f.model.lhuc_names();
  bool moved = false;
  for (const auto& [name, t] : r.model.params) {
    if (std::find(lhuc.begin(), lhuc.end(), name) != lhuc.end()) {
      moved = moved || !(t == f.model.param(name));
    } else {
      EXPECT_EQ(t, f.model.param(name)) << name;
    }
  }
  EXPECT_TRUE(moved);
}

TEST(Personalise, DefaultModeFreezesPredictionAndJoint) {
  const Fixture& f = fixture();
  const AdaptationConfig c = quick(AdaptMethod::cc);
  const auto r = personalise(f.model, f.view, c, no_filter());
  for (const auto& [name, t] : r.model.params) {
    if (!name.starts_with("enc.")) EXPECT_EQ(t, f.model.param(name)) << name;
  }
  EXPECT_FALSE(r.model.param("enc.in.W") == f.model.param("enc.in.W"));
}

// Round 1 run with 1..epochs epochs; the log holds the running mean, so the
// loss of epoch k is k * mean_k - (k - 1) * mean_{k-1}.
std::vector<double> first_round_epoch_losses(const Model& model, const UnlabelledView& view,
                                             AdaptationConfig c, std::size_t epochs) {
  c.rounds = 1;
  std::vector<double> out;
  double prev_total = 0.0;
  for (std::size_t k = 1; k <= epochs; ++k) {
    c.epochs_per_round = k;
    const double total = personalise(model, view, c, no_filter()).log.front().loss * static_cast<double>(k);
    out.push_back(total - prev_total);
    prev_total = total;
  }
  return out;
}

TEST(Personalise, SelfTrainingLossFallsWithoutPerturbation) {
  const Fixture& f = fixture();
  const UnlabelledView one(std::vector<UnlabelledUtterance>{f.view[0]});
  AdaptationConfig c = quick(AdaptMethod::cc);
  c.augment = AugmentPolicy::none();
  c.dropout.rate = 0.0;
  const auto losses = first_round_epoch_losses(f.model, one, c, 5);
  // The first epoch trains on the model's own clean decode.
  const TokenSeq own = beam_search(f.model, f.view[0].features, 2).front().tokens;
  const auto lattice = forward_lattice(f.model, f.view[0].features, own);
  EXPECT_NEAR(losses.front(), transducer_loss(lattice, own, f.model.config.blank_id()).loss, 1e-9);
  for (std::size_t i = 1; i < losses.size(); ++i) EXPECT_LT(losses[i], losses[i - 1]);
}

TEST(Personalise, EntropyMinimisationLowersEntropy) {
  const Fixture& f = fixture();
  // Favour one token so decodes contain emissions to train on.
  Model m = f.model;
  m.params.at("joint.bo").data()[3] += 6.0;
  ASSERT_FALSE(beam_search(m, f.view[0].features, 2).front().tokens.empty());
  AdaptationConfig c = quick(AdaptMethod::em);
  c.batch_size = f.view.size();
  const auto losses = first_round_epoch_losses(m, f.view, c, 5);
  EXPECT_GT(losses.front(), 0.0);
  for (std::size_t i = 1; i < losses.size(); ++i) EXPECT_LE(losses[i], losses[i - 1] + 1e-12);
}

TEST(Personalise, EmOnlyIgnoresTheFilter) {
  const Fixture& f = fixture();
  FilterChoice ct;
  ct.kind = FilterKind::ct;
  ct.ct_threshold = std::numeric_limits<double>::infinity();
  EXPECT_THROW(personalise(f.model, f.view, quick(AdaptMethod::em), ct), AdaptationError);
  const auto r = personalise(f.model, f.view, quick(AdaptMethod::em_only), ct);
  EXPECT_EQ(r.filtered.kept_count(), f.view.size());
}

TEST(Personalise, OracleFilterMustBePrecomputed) {
  const Fixture& f = fixture();
  FilterChoice oracle;
  oracle.kind = FilterKind::oracle;
  EXPECT_THROW(personalise(f.model, f.view, quick(AdaptMethod::cc), oracle), ContractError);
}

TEST(RoundLog, CsvRoundTrip) {
  const std::vector<RoundEntry> log{{1, 0.75, 12.5, NAN, 0.25, 40}, {2, 0.5, 10.0, 8.0, 0.0, 40}};
  std::stringstream s;
  write_round_log(log, s);
  const auto back = read_round_log(s);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].round, 1u);
  EXPECT_EQ(back[0].loss, 0.75);
  EXPECT_TRUE(std::isnan(back[0].wer_heldout));
  EXPECT_EQ(back[1].wer_heldout, 8.0);
  EXPECT_EQ(back[1].labelled, 40u);
  std::istringstream bad("round,loss\n");
  EXPECT_THROW(read_round_log(bad), ParseError);
}

}  // namespace
}  // namespace ccperso
