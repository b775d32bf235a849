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

#include "ccperso/adapt.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>

#include "ccperso/autodiff.hpp"
#include "ccperso/decode.hpp"
#include "ccperso/error.hpp"
#include "ccperso/optim.hpp"
#include "ccperso/rng.hpp"
#include "ccperso/text_io.hpp"
#include "ccperso/train.hpp"

namespace ccperso {

namespace {

constexpr std::uint64_t kLabelDomain = 0x1abe1;
constexpr std::uint64_t kTrainDomain = 0x7a17;
constexpr std::uint64_t kShuffleDomain = 0x5f1e;

constexpr std::array<std::pair<AdaptMethod, std::string_view>, 5> kMethods{{
    {AdaptMethod::cc, "cc"},
    {AdaptMethod::nst, "nst"},
    {AdaptMethod::em, "em"},
    {AdaptMethod::em_only, "em_only"},
    {AdaptMethod::cc_lhuc, "cc_lhuc"},
}};

bool is_em(AdaptMethod m) { return m == AdaptMethod::em || m == AdaptMethod::em_only; }

}  // namespace

AdaptMethod parse_adapt_method(std::string_view s) {
  for (const auto& [m, name] : kMethods) {
    if (name == s) return m;
  }
  throw ConfigError("unknown method '" + std::string(s) + "' (valid: " + adapt_method_names() + ")");
}

std::string_view adapt_method_name(AdaptMethod m) {
  for (const auto& [k, name] : kMethods) {
    if (k == m) return name;
  }
  return "?";
}

std::string adapt_method_names() {
  std::string out;
  for (const auto& [m, name] : kMethods) {
    if (!out.empty()) out += ", ";
    out += name;
  }
  return out;
}

void AdaptationConfig::validate() const {
  if (rounds < 1) throw ConfigError("rounds must be >= 1");
  if (epochs_per_round < 1) throw ConfigError("epochs per round must be >= 1");
  if (batch_size < 1) throw ConfigError("batch size must be >= 1");
  if (beam_width < 1) throw ConfigError("beam width must be >= 1");
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    throw ConfigError("learning rate must be finite and >= 0");
  }
  if (lhuc_learning_rate && !(*lhuc_learning_rate >= 0.0 && std::isfinite(*lhuc_learning_rate))) {
    throw ConfigError("LHUC learning rate must be finite and >= 0");
  }
  augment.validate();
  dropout.validate();
}

TrainMode AdaptationConfig::effective_train_mode() const {
  if (train_mode) return *train_mode;
  return method == AdaptMethod::cc_lhuc ? TrainMode::lhuc_only : TrainMode::encoder;
}

double AdaptationConfig::effective_learning_rate() const {
  if (effective_train_mode() != TrainMode::lhuc_only) return learning_rate;
  return lhuc_learning_rate.value_or(std::min(200.0 * learning_rate, 0.1));
}

std::uint64_t label_seed(std::uint64_t base, std::size_t round, std::string_view id) {
  return derive_seed(base, kLabelDomain, round, hash_string(id));
}

std::uint64_t train_seed(std::uint64_t base, std::size_t round, std::size_t epoch,
                         std::string_view id) {
  return derive_seed(base, kTrainDomain, round, epoch, hash_string(id));
}

namespace {

Hypothesis top_hypothesis(const Model& model, const Tensor& features, std::size_t width) {
  return width == 1 ? greedy_decode(model, features) : beam_search(model, features, width).front();
}

std::vector<const UnlabelledUtterance*> kept_utterances(const UnlabelledView& view,
                                                        const FilteredSet& filtered) {
  std::vector<const UnlabelledUtterance*> out;
  for (const auto& u : view) {
    if (filtered.keeps(u.id)) out.push_back(&u);
  }
  return out;
}

}  // namespace

PseudoLabelledSet pseudo_label(const Model& model, const UnlabelledView& view,
                               const FilteredSet& filtered, const AugmentPolicy& augment,
                               LabelSource source, std::uint64_t base_seed, std::size_t round,
                               std::size_t beam_width) {
  const auto kept = kept_utterances(view, filtered);
  if (kept.empty()) {
    throw AdaptationError("the filter kept no utterances; relax the filter or use --filter none");
  }
  PseudoLabelledSet out;
  out.reserve(kept.size());
  for (const auto* u : kept) {
    const Tensor x = source == LabelSource::augmented
                         ? spec_augment(u->features, augment, label_seed(base_seed, round, u->id))
                         : u->features;
    out.push_back({u->id, top_hypothesis(model, x, beam_width).tokens, round, source});
  }
  return out;
}

namespace {

struct EmItem {
  const Tensor* features = nullptr;
  Hypothesis hyp;
};

// Entropy of the output posterior at the nodes where the clean decode emits
// its tokens, averaged over those nodes and then over the batch.
BatchResult entropy_batch(const Model& model, std::span<const EmItem* const> items) {
  BatchResult out;
  const double w = 1.0 / static_cast<double>(items.size());
  for (const auto* item : items) {
    const auto& h = item->hyp;
    std::vector<std::size_t> rows;
    std::size_t u = 0;
    for (const auto& step : h.alignment) {
      if (step.symbol == model.config.blank_id()) continue;
      rows.push_back(step.frame * (h.tokens.size() + 1) + u);
      ++u;
    }
    if (rows.empty()) continue;
    Graph g;
    const auto lattice = forward_lattice(g, model, *item->features, h.tokens);
    const Var loss = entropy_loss(g, g.gather_rows(lattice.log_probs, std::move(rows)));
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

double churn(const PseudoLabelledSet& now, const std::map<std::string, TokenSeq, std::less<>>& before) {
  if (now.empty()) return 0.0;
  std::size_t changed = 0;
  for (const auto& l : now) {
    auto it = before.find(l.id);
    if (it == before.end() || it->second != l.tokens) ++changed;
  }
  return static_cast<double>(changed) / static_cast<double>(now.size());
}

[[noreturn]] void diverged(const AdaptationConfig& c, std::size_t round, std::size_t epoch,
                           std::size_t batch, double loss, std::span<const std::string> ids) {
  std::ostringstream msg;
  msg << "loss became non-finite (" << loss << ") in round " << round << ", epoch " << epoch
      << ", batch " << batch << " of method " << adapt_method_name(c.method)
      << " at learning rate " << c.effective_learning_rate() << "; batch utterances:";
  for (const auto& id : ids) msg << ' ' << id;
  throw AdaptationError(msg.str());
}

}  // namespace

AdaptationResult personalise(const Model& initial, const UnlabelledView& view,
                             const AdaptationConfig& config, const FilterChoice& filter,
                             const RoundObserver& observer) {
  config.validate();
  if (view.empty()) throw AdaptationError("no utterances to personalise on");
  AdaptationScope scope;

  AdaptationResult result;
  result.model = initial;
  Model& m = result.model;
  FilterChoice effective = filter;
  if (config.method == AdaptMethod::em_only) effective.kind = FilterKind::none;
  result.filtered = apply_filter(effective, initial, view);
  const auto kept = kept_utterances(view, result.filtered);
  if (kept.empty()) {
    throw AdaptationError("the filter kept no utterances; relax the filter or use --filter none");
  }

  const ParamSelector trainable = trainable_subset(m, config.effective_train_mode());
  AdamState adam;
  adam.learning_rate = config.effective_learning_rate();
  const TrainPerturbation perturb{config.augment, config.dropout};
  const LabelSource source =
      config.method == AdaptMethod::nst ? LabelSource::clean : LabelSource::augmented;

  std::map<std::string, TokenSeq, std::less<>> previous;
  for (const auto* u : kept) previous[u->id] = top_hypothesis(initial, u->features, config.beam_width).tokens;

  for (std::size_t round = 1; round <= config.rounds; ++round) {
    RoundEntry entry;
    entry.round = round;
    entry.wer_heldin = entry.wer_heldout = std::numeric_limits<double>::quiet_NaN();

    // Per-utterance training material for this round.
    PseudoLabelledSet labels;
    std::vector<EmItem> em_items;
    if (is_em(config.method)) {
      for (const auto* u : kept) em_items.push_back({&u->features, top_hypothesis(m, u->features, config.beam_width)});
      for (std::size_t i = 0; i < kept.size(); ++i) {
        labels.push_back({kept[i]->id, em_items[i].hyp.tokens, round, LabelSource::clean});
      }
    } else {
      labels = pseudo_label(m, view, result.filtered, config.augment, source, config.seed, round,
                            config.beam_width);
    }
    entry.churn = churn(labels, previous);
    entry.labelled = labels.size();
    for (const auto& l : labels) previous[l.id] = l.tokens;

    double loss_sum = 0.0;
    std::size_t batches = 0;
    std::vector<std::size_t> order(kept.size());
    for (std::size_t epoch = 1; epoch <= config.epochs_per_round; ++epoch) {
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
      Rng rng(derive_seed(config.seed, kShuffleDomain, round, epoch));
      for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.uniform_int(0, i - 1)]);

      for (std::size_t start = 0, b = 1; start < order.size(); start += config.batch_size, ++b) {
        const std::size_t end = std::min(order.size(), start + config.batch_size);
        std::vector<std::string> ids;
        BatchResult r;
        if (is_em(config.method)) {
          std::vector<const EmItem*> batch;
          for (std::size_t k = start; k < end; ++k) {
            batch.push_back(&em_items[order[k]]);
            ids.push_back(kept[order[k]]->id);
          }
          r = entropy_batch(m, batch);
        } else {
          std::vector<TrainItem> batch;
          for (std::size_t k = start; k < end; ++k) {
            const std::size_t i = order[k];
            batch.push_back({&kept[i]->features, &labels[i].tokens,
                             train_seed(config.seed, round, epoch, kept[i]->id)});
            ids.push_back(kept[i]->id);
          }
          r = transducer_batch(m, batch, perturb);
        }
        if (!std::isfinite(r.loss)) diverged(config, round, epoch, b, r.loss, ids);
        if (r.grads.empty()) continue;
        clip_gradients(r.grads, config.clip_norm);
        adam_step(m.params, r.grads, adam, trainable);
        loss_sum += r.loss;
        ++batches;
      }
    }
    entry.loss = batches ? loss_sum / static_cast<double>(batches) : 0.0;
    for (const auto& [name, t] : m.params) {
      if (!t.all_finite()) diverged(config, round, config.epochs_per_round, 0, entry.loss, {});
    }
    if (observer) observer(m, entry);
    result.log.push_back(entry);
  }
  return result;
}

void write_round_log(const std::vector<RoundEntry>& log, std::ostream& out) {
  out << "round,loss,wer_heldin,wer_heldout,churn,labelled\n";
  for (const auto& e : log) {
    out << e.round << ',' << text::format_double(e.loss) << ',' << text::format_double(e.wer_heldin)
        << ',' << text::format_double(e.wer_heldout) << ',' << text::format_double(e.churn) << ','
        << e.labelled << '\n';
  }
}

std::vector<RoundEntry> read_round_log(std::istream& in) {
  std::string line;
  std::size_t n = 1;
  if (!std::getline(in, line) || text::trim(line) != "round,loss,wer_heldin,wer_heldout,churn,labelled") {
    throw ParseError("bad round log header", 1);
  }
  std::vector<RoundEntry> out;
  while (std::getline(in, line)) {
    ++n;
    if (text::trim(line).empty()) continue;
    const auto f = text::split(line, ',');
    if (f.size() != 6) throw ParseError("round log rows need 6 fields", n);
    RoundEntry e;
    const auto round = text::parse_int(f[0]);
    const auto loss = text::parse_double(f[1]);
    const auto hi = text::parse_double(f[2]);
    const auto ho = text::parse_double(f[3]);
    const auto ch = text::parse_double(f[4]);
    const auto lab = text::parse_int(f[5]);
    if (!round || !loss || !hi || !ho || !ch || !lab) throw ParseError("bad round log value", n);
    e.round = static_cast<std::size_t>(*round);
    e.loss = *loss;
    e.wer_heldin = *hi;
    e.wer_heldout = *ho;
    e.churn = *ch;
    e.labelled = static_cast<std::size_t>(*lab);
    out.push_back(e);
  }
  return out;
}

}  // namespace ccperso
