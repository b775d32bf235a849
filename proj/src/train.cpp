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

#include "ccperso/train.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <set>

#include "ccperso/autodiff.hpp"
#include "ccperso/error.hpp"
#include "ccperso/eval.hpp"
#include "ccperso/rng.hpp"
#include "ccperso/text_io.hpp"

namespace ccperso {

namespace {
constexpr std::uint64_t kAugmentTag = 0xa06;
constexpr std::uint64_t kDropoutTag = 0xd0;
}  // namespace

Tensor perturbed_features(const TrainItem& item, const TrainPerturbation& perturb) {
  return spec_augment(*item.features, perturb.augment, derive_seed(item.seed, kAugmentTag));
}

Perturbation dropout_for(const TrainItem& item, const TrainPerturbation& perturb) {
  return {perturb.dropout, derive_seed(item.seed, kDropoutTag)};
}

BatchResult transducer_batch(const Model& model, std::span<const TrainItem> items,
                             const TrainPerturbation& perturb) {
  if (items.empty()) throw ContractError("empty training batch");
  BatchResult out;
  const int blank = model.config.blank_id();
  const double w = 1.0 / static_cast<double>(items.size());
  for (const auto& item : items) {
    Graph g;
    const Tensor x = perturbed_features(item, perturb);
    const Perturbation p = dropout_for(item, perturb);
    const auto lattice =
        forward_lattice(g, model, x, *item.target, perturb.dropout.active() ? &p : nullptr);
    const Var loss = transducer_loss(g, lattice, *item.target, blank);
    out.loss += w * g.value(loss)[0];
    g.backward(loss);
    for (auto& [name, grad] : g.parameter_gradients()) {
      auto [it, fresh] = out.grads.try_emplace(name, grad.shape());
      auto dst = it->second.data();
      const auto src = grad.data();
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += w * src[i];
    }
  }
  return out;
}

double gradient_norm(const Gradients& g) {
  double s = 0.0;
  for (const auto& [name, t] : g) {
    for (double v : t.data()) s += v * v;
  }
  return std::sqrt(s);
}

double clip_gradients(Gradients& g, double max_norm) {
  const double n = gradient_norm(g);
  if (max_norm > 0.0 && n > max_norm) {
    const double c = max_norm / n;
    for (auto& [name, t] : g) {
      for (double& v : t.data()) v *= c;
    }
  }
  return n;
}

void PretrainConfig::validate() const {
  model.validate();
  if (max_epochs < 1) throw ConfigError("pretrain max_epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("pretrain batch_size must be >= 1");
  if (!(learning_rate > 0.0)) throw ConfigError("pretrain learning_rate must be > 0");
  augment.validate();
  DropoutPolicy{dropout, DropoutScope::all}.validate();
}

PretrainResult pretrain(const Corpus& corpus, const PretrainConfig& config,
                        const PretrainObserver& observer) {
  config.validate();
  if (config.model.feature_dim != corpus.feature_dim ||
      config.model.vocab_size != corpus.vocabulary.size()) {
    throw ConfigError("model dimensions do not match the corpus");
  }
  const auto speakers = corpus.speakers(SpeakerRole::pretrain);
  const std::set<std::string, std::less<>> pool(speakers.begin(), speakers.end());
  std::vector<const Utterance*> utts;
  for (const auto& u : corpus.utterances) {
    if (u.split() == Split::pretrain && pool.contains(u.speaker_id())) utts.push_back(&u);
  }
  if (utts.size() < 2) throw TrainingError("too few pretraining utterances");

  Rng rng(derive_seed(config.seed, 0x9e7a));
  for (std::size_t i = utts.size(); i > 1; --i) std::swap(utts[i - 1], utts[rng.uniform_int(0, i - 1)]);
  const std::size_t n_val = std::min(config.validation_utts, utts.size() / 2);
  const std::vector<const Utterance*> valid(utts.begin(), utts.begin() + static_cast<std::ptrdiff_t>(n_val));
  const std::vector<const Utterance*> train(utts.begin() + static_cast<std::ptrdiff_t>(n_val), utts.end());

  std::vector<TokenSeq> targets;
  targets.reserve(train.size());
  for (const auto* u : train) targets.push_back(ReferenceAccess::read(*u));

  PretrainResult result;
  result.model = init_model(config.model, derive_seed(config.seed, 0x1417));
  Model& m = result.model;
  Model best = m;
  double best_wer = n_val ? score_utterances(m, valid, 1).wer() : 100.0;

  const TrainPerturbation perturb{config.augment, {config.dropout, DropoutScope::all}};
  ParamSelector trainable = select_all(m.params);
  for (const auto& name : m.lhuc_names()) trainable.erase(name);
  AdamState adam;
  adam.learning_rate = config.learning_rate;

  std::vector<std::size_t> order(train.size());
  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng erng(derive_seed(config.seed, 0xe70c, epoch));
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[erng.uniform_int(0, i - 1)]);

    double loss_sum = 0.0;
    std::size_t batches = 0;
    std::vector<TrainItem> batch;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      batch.clear();
      for (std::size_t k = start; k < std::min(order.size(), start + config.batch_size); ++k) {
        const std::size_t i = order[k];
        batch.push_back({&train[i]->features(), &targets[i],
                         derive_seed(config.seed, 0x7a1, epoch, hash_string(train[i]->id()))});
      }
      auto r = transducer_batch(m, batch, perturb);
      if (!std::isfinite(r.loss)) {
        throw TrainingError("pretraining loss is not finite at epoch " + std::to_string(epoch));
      }
      clip_gradients(r.grads, config.clip_norm);
      adam_step(m.params, r.grads, adam, trainable);
      loss_sum += r.loss;
      ++batches;
    }
    PretrainEpoch e{epoch, loss_sum / static_cast<double>(batches),
                    n_val ? score_utterances(m, valid, 1).wer() : 0.0};
    result.curve.push_back(e);
    if (observer) observer(e);
    if (e.validation_wer < best_wer) {
      best_wer = e.validation_wer;
      best = m;
    }
    if (e.validation_wer <= config.target_wer) break;
  }
  result.model = std::move(best);
  result.best_validation_wer = best_wer;
  return result;
}

void write_pretrain_curve(const std::vector<PretrainEpoch>& curve, std::ostream& out) {
  out << "epoch,train_loss,validation_wer\n";
  for (const auto& e : curve) {
    out << e.epoch << ',' << text::format_double(e.train_loss) << ','
        << text::format_double(e.validation_wer) << '\n';
  }
}

}  // namespace ccperso
