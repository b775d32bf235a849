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

#include "ccperso/decode.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <memory>
#include <numeric>

#include "json.hpp"

#include "ccperso/error.hpp"

namespace ccperso {

namespace {

using PredState = Inference::PredState;

double log_add(double a, double b) {
  return a > b ? a + std::log1p(std::exp(b - a)) : b + std::log1p(std::exp(a - b));
}

struct Beam {
  Hypothesis h;
  std::shared_ptr<const PredState> state;
};

struct Scored {
  std::shared_ptr<const Tensor> logits;
  Tensor log_probs;
};

Scored score(const Inference& inf, std::size_t t, const Beam& b) {
  auto logits = std::make_shared<const Tensor>(inf.logits(t, b.h.tokens.size(), *b.state));
  Tensor lp = ops::log_softmax(*logits);
  return {std::move(logits), std::move(lp)};
}

void push_step(Hypothesis& h, std::size_t t, int symbol, double lp) {
  h.alignment.push_back({t, symbol, lp});
  h.alignment_logp += lp;
  h.log_prob += lp;
}

void emit(Hypothesis& h, std::size_t t, int k, const Scored& s) {
  const double lp = s.log_probs[static_cast<std::size_t>(k)];
  push_step(h, t, k, lp);
  h.tokens.push_back(k);
  h.token_logps.push_back(lp);
  h.topk.push_back(top_k(s.logits->data()));
}

void finish(Hypothesis& h) { h.beam_score = h.log_prob; }

// Slots held for frame-complete hypotheses. Zero at width 1, so a single
// beam commits exactly like greedy decoding.
std::size_t reserved_slots(std::size_t width) { return width / 2; }

}  // namespace

TopK top_k(std::span<const double> logits) {
  std::vector<int> ids(logits.size());
  std::iota(ids.begin(), ids.end(), 0);
  const std::size_t n = std::min(kTopK, ids.size());
  std::partial_sort(ids.begin(), ids.begin() + static_cast<long>(n), ids.end(), [&](int a, int b) {
    const double la = logits[static_cast<std::size_t>(a)], lb = logits[static_cast<std::size_t>(b)];
    return la > lb || (la == lb && a < b);
  });
  // Fewer than K outputs: pad with id -1 at -inf.
  TopK out;
  out.ids.fill(-1);
  out.logits.fill(-std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i < n; ++i) {
    out.ids[i] = ids[i];
    out.logits[i] = logits[static_cast<std::size_t>(ids[i])];
  }
  return out;
}

Hypothesis greedy_decode(const Model& model, const Tensor& features, const Perturbation* perturb) {
  const Inference inf(model, features, perturb);
  const int blank = model.config.blank_id();
  Beam b{{}, std::make_shared<const PredState>(inf.initial())};
  for (std::size_t t = 0; t < inf.frames(); ++t) {
    for (std::size_t level = 0;; ++level) {
      const Scored s = score(inf, t, b);
      int k = blank;
      if (level < kMaxEmissionsPerFrame) {
        const auto lp = s.log_probs.data();
        k = static_cast<int>(std::max_element(lp.begin(), lp.end()) - lp.begin());
      }
      if (k == blank) {
        push_step(b.h, t, blank, s.log_probs[static_cast<std::size_t>(blank)]);
        break;
      }
      emit(b.h, t, k, s);
      b.state = std::make_shared<const PredState>(inf.step(*b.state, k));
    }
  }
  finish(b.h);
  return std::move(b.h);
}

std::vector<Hypothesis> beam_search(const Model& model, const Tensor& features, std::size_t width,
                                    const Perturbation* perturb) {
  if (width < 1) throw ContractError("beam width must be >= 1");
  const Inference inf(model, features, perturb);
  const int blank = model.config.blank_id();
  const std::size_t vocab = model.config.vocab_size;

  std::vector<Beam> active{{{}, std::make_shared<const PredState>(inf.initial())}};
  for (std::size_t t = 0; t < inf.frames(); ++t) {
    std::vector<Beam> advanced;
    for (std::size_t level = 0; level <= kMaxEmissionsPerFrame && !active.empty(); ++level) {
      std::vector<Scored> scored;
      scored.reserve(active.size());
      for (const auto& b : active) scored.push_back(score(inf, t, b));

      // Blank extensions join the advanced set, merging equal prefixes.
      for (std::size_t i = 0; i < active.size(); ++i) {
        Beam next = active[i];
        push_step(next.h, t, blank, scored[i].log_probs[static_cast<std::size_t>(blank)]);
        auto same = std::find_if(advanced.begin(), advanced.end(),
                                 [&](const Beam& o) { return o.h.tokens == next.h.tokens; });
        if (same == advanced.end()) {
          advanced.push_back(std::move(next));
        } else {
          const double merged = log_add(same->h.log_prob, next.h.log_prob);
          if (next.h.alignment_logp > same->h.alignment_logp) *same = std::move(next);
          same->h.log_prob = merged;
        }
      }

      // Non-blank extensions stay on this frame.
      struct Candidate {
        double score;
        std::size_t parent;  // index into active, or npos for advanced entries
        int token;           // or index into advanced
      };
      constexpr std::size_t npos = static_cast<std::size_t>(-1);
      std::vector<Candidate> pool;
      if (level < kMaxEmissionsPerFrame) {
        pool.reserve(active.size() * vocab + advanced.size());
        for (std::size_t i = 0; i < active.size(); ++i) {
          for (std::size_t k = 0; k < vocab; ++k) {
            pool.push_back({active[i].h.log_prob + scored[i].log_probs[k], i, static_cast<int>(k)});
          }
        }
      }
      for (std::size_t j = 0; j < advanced.size(); ++j) {
        pool.push_back({advanced[j].h.log_prob, npos, static_cast<int>(j)});
      }
      std::sort(pool.begin(), pool.end(), [&](const Candidate& a, const Candidate& b) {
        if (a.score != b.score) return a.score > b.score;
        // Stays before advanced entries; then by position.
        const bool sa = a.parent != npos, sb = b.parent != npos;
        if (sa != sb) return sa;
        if (a.parent != b.parent) return a.parent < b.parent;
        return a.token < b.token;
      });
      // The best width / 2 frame-complete hypotheses keep their slots; the
      // rest of the beam goes to the best candidates of either kind.
      std::vector<bool> take(pool.size(), false);
      std::size_t taken = 0, protected_left = reserved_slots(width);
      for (std::size_t c = 0; c < pool.size() && protected_left > 0; ++c) {
        if (pool[c].parent == npos) {
          take[c] = true;
          ++taken;
          --protected_left;
        }
      }
      for (std::size_t c = 0; c < pool.size() && taken < width; ++c) {
        if (!take[c]) {
          take[c] = true;
          ++taken;
        }
      }
      std::vector<Beam> next_active, kept_advanced;
      for (std::size_t c = 0; c < pool.size(); ++c) {
        if (!take[c]) continue;
        const Candidate& cand = pool[c];
        if (cand.parent == npos) {
          kept_advanced.push_back(std::move(advanced[static_cast<std::size_t>(cand.token)]));
          continue;
        }
        const Beam& parent = active[cand.parent];
        Beam b{parent.h, nullptr};
        emit(b.h, t, cand.token, scored[cand.parent]);
        b.state = std::make_shared<const PredState>(inf.step(*parent.state, cand.token));
        next_active.push_back(std::move(b));
      }
      active = std::move(next_active);
      advanced = std::move(kept_advanced);
    }
    active = std::move(advanced);
  }
  std::stable_sort(active.begin(), active.end(),
                   [](const Beam& a, const Beam& b) { return a.h.log_prob > b.h.log_prob; });
  std::vector<Hypothesis> out;
  out.reserve(active.size());
  for (auto& b : active) {
    finish(b.h);
    out.push_back(std::move(b.h));
  }
  return out;
}

double confidence_score(const Hypothesis& h) {
  double s = 0.0;
  for (double lp : h.token_logps) s += lp;
  return s;
}

DecodeRecord decode_utterance(const Model& model, const UnlabelledUtterance& u, std::size_t width) {
  return {u.id, width == 1 ? greedy_decode(model, u.features)
                           : beam_search(model, u.features, width).front()};
}

std::vector<DecodeRecord> decode_all(const Model& model, const UnlabelledView& view,
                                     std::size_t width) {
  std::vector<DecodeRecord> out;
  out.reserve(view.size());
  for (const auto& u : view) out.push_back(decode_utterance(model, u, width));
  return out;
}

// ---------------------------------------------------------------- JSONL

std::string decode_record_json(const DecodeRecord& r) {
  nlohmann::json topk = nlohmann::json::array();
  for (const auto& k : r.hyp.topk) topk.push_back({{"ids", k.ids}, {"logits", k.logits}});
  nlohmann::json align = nlohmann::json::array();
  for (const auto& s : r.hyp.alignment) align.push_back({s.frame, s.symbol, s.log_prob});
  const nlohmann::json j{{"id", r.id},
                         {"tokens", r.hyp.tokens},
                         {"log_prob", r.hyp.log_prob},
                         {"beam_score", r.hyp.beam_score},
                         {"alignment_logp", r.hyp.alignment_logp},
                         {"token_logps", r.hyp.token_logps},
                         {"topk", topk},
                         {"alignment", align}};
  return j.dump();
}

DecodeRecord parse_decode_record(std::string_view line) {
  const auto j = nlohmann::json::parse(line);
  DecodeRecord r;
  r.id = j.at("id").get<std::string>();
  r.hyp.tokens = j.at("tokens").get<TokenSeq>();
  r.hyp.log_prob = j.at("log_prob").get<double>();
  r.hyp.beam_score = j.at("beam_score").get<double>();
  r.hyp.alignment_logp = j.at("alignment_logp").get<double>();
  r.hyp.token_logps = j.at("token_logps").get<std::vector<double>>();
  for (const auto& k : j.at("topk")) {
    TopK t;
    t.ids = k.at("ids").get<std::array<int, kTopK>>();
    const auto& logits = k.at("logits");
    for (std::size_t i = 0; i < kTopK; ++i) {
      // Padding slots are -inf, which JSON stores as null.
      t.logits[i] = logits.at(i).is_null() ? -std::numeric_limits<double>::infinity()
                                            : logits.at(i).get<double>();
    }
    r.hyp.topk.push_back(t);
  }
  for (const auto& s : j.at("alignment")) {
    r.hyp.alignment.push_back({s.at(0).get<std::size_t>(), s.at(1).get<int>(), s.at(2).get<double>()});
  }
  if (r.hyp.token_logps.size() != r.hyp.tokens.size() || r.hyp.topk.size() != r.hyp.tokens.size()) {
    throw ContractError("decode record " + r.id + " has inconsistent per-token fields");
  }
  return r;
}

void save_decodes(const std::vector<DecodeRecord>& records, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  for (const auto& r : records) out << decode_record_json(r) << '\n';
  if (!out) throw Error("failed writing " + path.string());
}

std::vector<DecodeRecord> load_decodes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read " + path.string());
  std::vector<DecodeRecord> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    try {
      out.push_back(parse_decode_record(line));
    } catch (const std::exception& e) {
      throw ParseError(e.what(), n);
    }
  }
  return out;
}

}  // namespace ccperso
