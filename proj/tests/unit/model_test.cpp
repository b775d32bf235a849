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
#include <fstream>
#include <functional>

#include <gtest/gtest.h>

#include "ccperso/error.hpp"
#include "ccperso/model.hpp"
#include "ccperso/rng.hpp"

namespace ccperso {
namespace {

ModelConfig tiny_config() {
  ModelConfig c;
  c.feature_dim = 3;
  c.vocab_size = 3;
  c.encoder_dim = c.embed_dim = c.pred_dim = c.joint_dim = 4;
  return c;
}

Tensor random_matrix(std::size_t r, std::size_t c, std::uint64_t seed, double sd = 1.0) {
  Rng rng(seed);
  Tensor t({r, c});
  for (double& x : t.data()) x = sd * rng.normal();
  return t;
}

// Random normalised lattice with rows of log-probabilities.
Tensor random_lattice(std::size_t rows, std::size_t k, std::uint64_t seed) {
  return ops::log_softmax(random_matrix(rows, k, seed, 1.5));
}

// Sum over every alignment path, enumerated explicitly. Blank at (t, u)
// moves to t + 1; the final blank at (T - 1, U) ends the path.
double brute_force_log_likelihood(const Tensor& lp, std::size_t frames, const TokenSeq& y,
                                  int blank) {
  const std::size_t u1 = y.size() + 1;
  double total = 0.0;
  std::function<void(std::size_t, std::size_t, double)> walk = [&](std::size_t t, std::size_t u,
                                                                  double logp) {
    const double b = lp.at(t * u1 + u, static_cast<std::size_t>(blank));
    if (t == frames - 1 && u == y.size()) {
      total += std::exp(logp + b);
      return;
    }
    if (u < y.size()) walk(t, u + 1, logp + lp.at(t * u1 + u, static_cast<std::size_t>(y[u])));
    if (t + 1 < frames) walk(t + 1, u, logp + b);
  };
  walk(0, 0, 0.0);
  return std::log(total);
}

double log_binomial(std::size_t n, std::size_t k) {
  return std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0);
}

TEST(TransducerLoss, SingleFrameEmptyTargetIsBlankProbability) {
  const Tensor lp = random_lattice(1, 4, 1);
  const auto l = transducer_loss(lp, 1, {}, 3);
  EXPECT_DOUBLE_EQ(l.loss, -lp.at(0, 3));
}

TEST(TransducerLoss, UniformLatticeClosedForm) {
  // T blanks and U labels at probability 1/k each; the U labels are spread
  // over T frames in C(T + U - 1, U) ways.
  for (std::size_t t = 1; t <= 5; ++t) {
    for (std::size_t u = 0; u <= 4; ++u) {
      const std::size_t k = 5;
      Tensor lp({t * (u + 1), k}, -std::log(static_cast<double>(k)));
      TokenSeq y;
      for (std::size_t i = 0; i < u; ++i) y.push_back(static_cast<int>(i % 4));
      const double expected =
          static_cast<double>(t + u) * std::log(static_cast<double>(k)) - log_binomial(t + u - 1, u);
      EXPECT_NEAR(transducer_loss(lp, t, y, 4).loss, expected, 1e-12) << t << "," << u;
    }
  }
}

TEST(TransducerLoss, MatchesExhaustiveEnumeration) {
  std::uint64_t seed = 0;
  for (std::size_t v = 1; v <= 3; ++v) {
    for (std::size_t t = 1; t <= 4; ++t) {
      for (std::size_t u = 0; u <= 3; ++u) {
        Rng rng(++seed);
        TokenSeq y;
        for (std::size_t i = 0; i < u; ++i) y.push_back(static_cast<int>(rng.uniform_int(0, v - 1)));
        const Tensor lp = random_lattice(t * (u + 1), v + 1, seed * 31);
        const auto l = transducer_loss(lp, t, y, static_cast<int>(v));
        EXPECT_NEAR(l.loss, -brute_force_log_likelihood(lp, t, y, static_cast<int>(v)), 1e-8);
        EXPECT_GE(l.loss, 0.0);
      }
    }
  }
}

TEST(TransducerLoss, GradientMatchesEnumerationDifferences) {
  const std::size_t t = 3, v = 2;
  const TokenSeq y{0, 1};
  Tensor lp = random_lattice(t * 3, v + 1, 5);
  const auto l = transducer_loss(lp, t, y, 2);
  const double h = 1e-6;
  for (std::size_t i = 0; i < lp.size(); ++i) {
    Tensor plus = lp, minus = lp;
    plus[i] += h;
    minus[i] -= h;
    const double numeric = (-brute_force_log_likelihood(plus, t, y, 2) +
                            brute_force_log_likelihood(minus, t, y, 2)) /
                           (2 * h);
    EXPECT_NEAR(l.grad[i], numeric, 1e-7) << "cell " << i;
  }
}

TEST(TransducerLoss, GradientOccupanciesSumToPathLength) {
  // Each alignment takes T + U steps, so the occupancies total T + U.
  const Tensor lp = random_lattice(4 * 3, 4, 9);
  const auto l = transducer_loss(lp, 4, {1, 2}, 3);
  double total = 0.0;
  for (double g : l.grad.data()) total -= g;
  EXPECT_NEAR(total, 6.0, 1e-10);
}

TEST(TransducerLoss, PermutingUniformLatticeKeepsLoss) {
  Tensor lp({3 * 3, 4}, -std::log(4.0));
  const double a = transducer_loss(lp, 3, {0, 1}, 3).loss;
  const double b = transducer_loss(lp, 3, {2, 0}, 3).loss;
  EXPECT_DOUBLE_EQ(a, b);
}

TEST(TransducerLoss, RejectsBadShapes) {
  EXPECT_THROW(transducer_loss(Tensor({0, 4}), 0, {}, 3), ContractError);
  EXPECT_THROW(transducer_loss(Tensor({5, 4}), 2, {1}, 3), ShapeError);
}

TEST(Model, LatticeShapeAndNormalisation) {
  const Model m = init_model(ModelConfig{}, 3);
  const Tensor x = random_matrix(7, 16, 4);
  const auto empty = forward_lattice(m, x, {});
  EXPECT_EQ(empty.log_probs.shape(), (Shape{7, 41}));
  const auto lat = forward_lattice(m, x, {3, 5, 9});
  EXPECT_EQ(lat.log_probs.shape(), (Shape{7 * 4, 41}));
  for (std::size_t r = 0; r < lat.log_probs.rows(); ++r) {
    double s = 0.0;
    for (double v : lat.log_probs.row(r)) s += std::exp(v);
    EXPECT_NEAR(s, 1.0, 1e-10);
  }
}

TEST(Model, DeterministicWithoutDropout) {
  const Model m = init_model(ModelConfig{}, 3);
  const Tensor x = random_matrix(9, 16, 4);
  EXPECT_EQ(forward_lattice(m, x, {1, 2}).log_probs, forward_lattice(m, x, {1, 2}).log_probs);
}

TEST(Model, DropoutChangesLatticeDeterministically) {
  const Model m = init_model(ModelConfig{}, 3);
  const Tensor x = random_matrix(9, 16, 4);
  const Perturbation p{DropoutPolicy{0.2}, 77};
  const auto a = forward_lattice(m, x, {1, 2}, &p);
  EXPECT_EQ(a.log_probs, forward_lattice(m, x, {1, 2}, &p).log_probs);
  EXPECT_NE(a.log_probs, forward_lattice(m, x, {1, 2}).log_probs);
  const Perturbation q{DropoutPolicy{0.2}, 78};
  EXPECT_NE(a.log_probs, forward_lattice(m, x, {1, 2}, &q).log_probs);
}

TEST(Model, FreshLhucIsIdentity) {
  ModelConfig with = ModelConfig{};
  ModelConfig without = with;
  without.lhuc = false;
  const Model a = init_model(with, 11);
  const Model b = init_model(without, 11);
  EXPECT_EQ(a.params.size(), b.params.size() + 2);
  const Tensor x = random_matrix(12, 16, 4);
  EXPECT_EQ(forward_lattice(a, x, {4, 7}).log_probs, forward_lattice(b, x, {4, 7}).log_probs);
}

TEST(Model, TargetWithBlankIsRejected) {
  const Model m = init_model(tiny_config(), 1);
  EXPECT_THROW(forward_lattice(m, random_matrix(2, 3, 1), {0, 3}), ContractError);
  EXPECT_THROW(forward_lattice(m, random_matrix(2, 3, 1), {-1}), ContractError);
  EXPECT_THROW(forward_lattice(m, random_matrix(2, 4, 1), {0}), ShapeError);
}

TEST(Model, StepwiseInferenceMatchesLatticeBitwise) {
  Model m = init_model(ModelConfig{}, 5);
  for (double& v : m.params["enc.lhuc0"].data()) v = 0.3;
  const Tensor x = random_matrix(10, 16, 6);
  const TokenSeq y{2, 17, 30, 4};
  for (const bool perturbed : {false, true}) {
    const Perturbation p{DropoutPolicy{0.2}, 123};
    const Perturbation* pp = perturbed ? &p : nullptr;
    const auto lat = forward_lattice(m, x, y, pp);
    const Inference inf(m, x, pp);
    auto state = inf.initial();
    for (std::size_t u = 0; u <= y.size(); ++u) {
      for (std::size_t t = 0; t < x.rows(); ++t) {
        const Tensor logits = inf.logits(t, u, state);
        const auto row = lat.logits.row(lat.node(t, u));
        ASSERT_TRUE(std::equal(row.begin(), row.end(), logits.data().begin()))
            << "t=" << t << " u=" << u << " perturbed=" << perturbed;
      }
      if (u < y.size()) state = inf.step(state, y[u]);
    }
  }
}

TEST(Model, FullModelGradientMatchesFiniteDifferences) {
  Model m = init_model(tiny_config(), 2);
  // Move LHUC off zero so its gradient path is exercised away from identity.
  m.params["enc.lhuc0"] = random_matrix(1, 4, 9, 0.5);
  m.params["enc.lhuc0"].reshape({4});
  const Tensor x = random_matrix(4, 3, 3);
  const TokenSeq y{0, 2};
  const Perturbation p{DropoutPolicy{0.1}, 5};
  for (const Perturbation* pp : {static_cast<const Perturbation*>(nullptr), &p}) {
    const LossAndGrad fn = [&](const ParamSet& params) {
      Model mm{m.config, params};
      Graph g;
      const auto lat = forward_lattice(g, mm, x, y, pp);
      const Var loss = transducer_loss(g, lat, y, mm.config.blank_id());
      g.backward(loss);
      return std::pair{g.value(loss)[0], g.parameter_gradients()};
    };
    const auto r = grad_check(fn, m.params, 1e-5);
    EXPECT_LT(r.max_relative_error, 1e-3) << r.worst_param << "[" << r.worst_index << "]";
  }
}

TEST(Entropy, ClosedForms) {
  Tensor one_hot({2, 3}, -1e300);
  one_hot.at(0, 1) = 0.0;
  one_hot.at(1, 2) = 0.0;
  // exp(-1e300) * -1e300 underflows to -0.
  EXPECT_EQ(entropy_loss(one_hot), 0.0);
  const Tensor uniform({4, 6}, -std::log(6.0));
  EXPECT_NEAR(entropy_loss(uniform), std::log(6.0), 1e-12);
  const Tensor mixed = random_lattice(5, 4, 3);
  double direct = 0.0;
  for (std::size_t r = 0; r < 5; ++r) {
    for (std::size_t c = 0; c < 4; ++c) {
      const double p = std::exp(mixed.at(r, c));
      direct += -p * std::log(p);
    }
  }
  EXPECT_NEAR(entropy_loss(mixed), direct / 5.0, 1e-12);
}

TEST(Entropy, GraphMatchesValueAndGradient) {
  const Tensor logits = random_matrix(3, 4, 8);
  const LossAndGrad fn = [&](const ParamSet& params) {
    Graph g;
    const Var e = entropy_loss(g, g.log_softmax(g.parameter("z", params.at("z"))));
    g.backward(e);
    return std::pair{g.value(e)[0], g.parameter_gradients()};
  };
  EXPECT_NEAR(fn({{"z", logits}}).first, entropy_loss(ops::log_softmax(logits)), 1e-14);
  EXPECT_LT(grad_check(fn, {{"z", logits}}, 1e-5).max_relative_error, 1e-6);
}

TEST(TrainableSubset, LhucOnlySelectsAmplitudes) {
  Model m = init_model(ModelConfig{}, 1);
  const auto lhuc = trainable_subset(m, TrainMode::lhuc_only);
  const auto full = trainable_subset(m, TrainMode::full);
  std::size_t width = 0;
  for (const auto& n : lhuc) width += m.param(n).size();
  EXPECT_EQ(width, 2 * m.config.encoder_dim);
  for (const auto& n : lhuc) EXPECT_EQ(full.count(n), 1u);
  EXPECT_EQ(full.size(), m.params.size());

  const Tensor x = random_matrix(6, 16, 2);
  Graph g;
  const auto lat = forward_lattice(g, m, x, {1});
  g.backward(transducer_loss(g, lat, {1}, m.config.blank_id()));
  const ParamSet before = m.params;
  AdamState state;
  adam_step(m.params, g.parameter_gradients(), state, lhuc);
  for (const auto& [name, t] : m.params) {
    if (lhuc.count(name)) {
      EXPECT_NE(t, before.at(name)) << name;
    } else {
      EXPECT_EQ(t, before.at(name)) << name;
    }
  }
  ModelConfig no_lhuc;
  no_lhuc.lhuc = false;
  EXPECT_THROW(trainable_subset(init_model(no_lhuc, 1), TrainMode::lhuc_only), ConfigError);
}

TEST(TrainableSubset, EncoderCoversEncoderAndLhuc) {
  const Model m = init_model(ModelConfig{}, 1);
  const auto enc = trainable_subset(m, TrainMode::encoder);
  for (const auto& n : trainable_subset(m, TrainMode::lhuc_only)) EXPECT_EQ(enc.count(n), 1u);
  for (const auto& [name, t] : m.params) EXPECT_EQ(enc.count(name) == 1, name.starts_with("enc.")) << name;
  for (auto mode : {TrainMode::full, TrainMode::encoder, TrainMode::lhuc_only}) {
    EXPECT_EQ(parse_train_mode(train_mode_name(mode)), mode);
  }
  EXPECT_THROW(parse_train_mode("joint"), ConfigError);
}

TEST(Checkpoint, RoundTripIsExact) {
  Model m = init_model(ModelConfig{}, 4);
  m.params["enc.lhuc1"][3] = -0.123456789012345;
  const auto path = std::filesystem::temp_directory_path() / "ccperso_model_test.ckpt";
  save_model(m, path);
  const Model back = load_model(path);
  EXPECT_EQ(back.config, m.config);
  EXPECT_EQ(back.params, m.params);
  std::filesystem::remove(path);
}

TEST(Checkpoint, MissingTensorIsAParseError) {
  const Model m = init_model(tiny_config(), 4);
  const auto path = std::filesystem::temp_directory_path() / "ccperso_model_bad.ckpt";
  save_model(m, path);
  std::ifstream in(path);
  std::string text((std::istreambuf_iterator<char>(in)), {});
  in.close();
  text.erase(text.find("tensor\tjoint.Wo"), text.find('\n', text.find("tensor\tjoint.Wo")) + 1 -
                                                  text.find("tensor\tjoint.Wo"));
  std::ofstream(path) << text;
  EXPECT_THROW(load_model(path), ParseError);
  std::filesystem::remove(path);
}

}  // namespace
}  // namespace ccperso
