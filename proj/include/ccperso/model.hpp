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
#include <vector>

#include "ccperso/augment.hpp"
#include "ccperso/autodiff.hpp"
#include "ccperso/corpus.hpp"
#include "ccperso/optim.hpp"
#include "ccperso/tensor.hpp"

namespace ccperso {

struct ModelConfig {
  std::size_t feature_dim = 16;
  std::size_t vocab_size = 40;
  std::size_t encoder_dim = 32;
  std::size_t embed_dim = 32;
  std::size_t pred_dim = 32;
  std::size_t joint_dim = 32;
  // Amplitude vectors after the input projection and the recurrent layer.
  bool lhuc = true;

  std::size_t output_size() const { return vocab_size + 1; }
  int blank_id() const { return static_cast<int>(vocab_size); }
  void validate() const;
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// Encoder: tanh input projection, LHUC, gated recurrent layer, LHUC.
// Prediction network: embedding (blank row is the start symbol) and a gated
// recurrent layer. Joint: tanh(enc We + pred Wp + b) Wo + bo.
//
// Gated cell, one step: z = sigmoid(x Wz + s Uz + bz),
//                       c = tanh(x Wc + s Uc + bc), s' = s + z * (c - s).
struct Model {
  ModelConfig config;
  ParamSet params;

  const Tensor& param(std::string_view name) const;
  std::vector<std::string> lhuc_names() const;
  std::size_t parameter_count() const;
};

Model init_model(const ModelConfig& config, std::uint64_t seed);

// Dropout applied to encoder activations and joint hidden units. Joint masks
// are drawn per lattice node so decoding and training see the same mask for
// the same (frame, emitted count) pair.
struct Perturbation {
  DropoutPolicy dropout;
  std::uint64_t seed = 0;
};

struct LatticeVars {
  Var log_probs;  // (T * (U + 1)) x (V + 1), row t * (U + 1) + u
  Var logits;
  std::size_t frames = 0;
  std::size_t target_length = 0;
};

// Records every parameter into the graph under its own name.
LatticeVars forward_lattice(Graph& g, const Model& model, const Tensor& features,
                            const TokenSeq& target, const Perturbation* perturb = nullptr);

struct PosteriorLattice {
  Tensor log_probs;
  Tensor logits;
  std::size_t frames = 0;
  std::size_t target_length = 0;

  std::size_t node(std::size_t t, std::size_t u) const { return t * (target_length + 1) + u; }
  double log_prob(std::size_t t, std::size_t u, int k) const {
    return log_probs.at(node(t, u), static_cast<std::size_t>(k));
  }
};

PosteriorLattice forward_lattice(const Model& model, const Tensor& features,
                                 const TokenSeq& target, const Perturbation* perturb = nullptr);

struct TransducerLoss {
  double loss = 0.0;
  Tensor grad;  // d loss / d log_probs
  double log_likelihood = 0.0;
};

// Negative log of the summed probability of every alignment, by the forward
// recursion. The gradient comes from forward-backward occupancies.
TransducerLoss transducer_loss(const Tensor& log_probs, std::size_t frames,
                               const TokenSeq& target, int blank);
inline TransducerLoss transducer_loss(const PosteriorLattice& lattice, const TokenSeq& target,
                                      int blank) {
  return transducer_loss(lattice.log_probs, lattice.frames, target, blank);
}
Var transducer_loss(Graph& g, const LatticeVars& lattice, const TokenSeq& target, int blank);

// Mean over rows of -sum p ln p, given log-probability rows.
double entropy_loss(const Tensor& log_prob_rows);
Var entropy_loss(Graph& g, Var log_prob_rows);

// encoder: acoustic-side tensors including LHUC; prediction and joint stay fixed.
enum class TrainMode { full, encoder, lhuc_only };
TrainMode parse_train_mode(std::string_view s);
std::string_view train_mode_name(TrainMode m);
ParamSelector trainable_subset(const Model& model, TrainMode mode);

// Step-wise inference used by the decoders. The arithmetic matches the graph
// path operation for operation, so scores agree bit for bit with the lattice.
class Inference {
 public:
  Inference(const Model& model, const Tensor& features, const Perturbation* perturb = nullptr);

  struct PredState {
    Tensor state;      // 1 x P
    Tensor projected;  // 1 x J, state Wp
  };

  std::size_t frames() const { return enc_proj_.rows(); }
  const PredState& initial() const { return initial_; }
  PredState step(const PredState& prev, int token) const;
  // Joint logits (1 x (V + 1)) at frame t with u tokens emitted so far.
  Tensor logits(std::size_t t, std::size_t u, const PredState& pred) const;

 private:
  const Model& model_;
  std::optional<Perturbation> perturb_;
  Tensor enc_proj_;
  PredState initial_;
};

void save_model(const Model& model, const std::filesystem::path& path);
Model load_model(const std::filesystem::path& path);

}  // namespace ccperso
