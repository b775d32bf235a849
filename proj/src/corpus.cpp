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

#include "ccperso/corpus.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "ccperso/error.hpp"
#include "ccperso/rng.hpp"
#include "ccperso/text_io.hpp"

namespace ccperso {

std::string_view split_name(Split s) {
  switch (s) {
    case Split::pretrain:
      return "pretrain";
    case Split::heldin_A:
      return "heldin_A";
    case Split::heldin_B:
      return "heldin_B";
    case Split::heldout:
      return "heldout";
  }
  return "?";
}

Split parse_split(std::string_view s) {
  for (Split x : {Split::pretrain, Split::heldin_A, Split::heldin_B, Split::heldout}) {
    if (s == split_name(x)) return x;
  }
  throw ContractError("unknown split: " + std::string(s));
}

std::string_view role_name(SpeakerRole r) {
  switch (r) {
    case SpeakerRole::pretrain:
      return "pretrain";
    case SpeakerRole::calibration:
      return "calibration";
    case SpeakerRole::personalisation:
      return "personalisation";
  }
  return "?";
}

SpeakerRole parse_role(std::string_view s) {
  for (SpeakerRole r : {SpeakerRole::pretrain, SpeakerRole::calibration,
                        SpeakerRole::personalisation}) {
    if (s == role_name(r)) return r;
  }
  throw ContractError("unknown speaker role: " + std::string(s));
}

// ---------------------------------------------------------------- vocabulary

Vocabulary::Vocabulary(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  if (tokens_.size() < 2) throw ConfigError("vocabulary needs at least 2 tokens");
  std::vector<std::string> sorted = tokens_;
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
    throw ConfigError("vocabulary tokens must be unique");
  }
  for (const auto& t : tokens_) {
    if (t.empty() || t.find_first_of(" \t\n") != std::string::npos) {
      throw ConfigError("vocabulary token must be a non-empty word: '" + t + "'");
    }
  }
}

std::optional<int> Vocabulary::find(std::string_view word) const {
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (tokens_[i] == word) return static_cast<int>(i);
  }
  return std::nullopt;
}

int Vocabulary::id(std::string_view word) const {
  if (auto i = find(word)) return *i;
  throw ContractError("word not in vocabulary: " + std::string(word));
}

TokenSeq Vocabulary::encode(std::string_view sentence) const {
  TokenSeq out;
  for (auto w : text::split(text::trim(sentence), ' ')) {
    if (!w.empty()) out.push_back(id(w));
  }
  return out;
}

std::string Vocabulary::decode(const TokenSeq& ids) const {
  std::string s;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i) s += ' ';
    s += token(ids[i]);
  }
  return s;
}

// ---------------------------------------------------------------- utterances

Utterance::Utterance(std::string id, std::string speaker_id, Split split, Tensor features,
                     TokenSeq reference)
    : id_(std::move(id)),
      speaker_id_(std::move(speaker_id)),
      split_(split),
      features_(std::move(features)),
      reference_(std::move(reference)) {
  if (features_.rank() != 2 || features_.rows() < 1) {
    throw ContractError("utterance " + id_ + " needs a T x F feature matrix with T >= 1");
  }
  if (reference_.empty()) throw ContractError("utterance " + id_ + " has an empty reference");
}

namespace {

std::atomic<std::uint64_t> g_reference_reads{0};
thread_local AccessContext t_context = AccessContext::neutral;

}  // namespace

const TokenSeq& ReferenceAccess::read(const Utterance& u) {
  g_reference_reads.fetch_add(1, std::memory_order_relaxed);
  if (t_context == AccessContext::adaptation) {
    throw ContractError("reference transcript of " + u.id() +
                        " read from an adaptation code path");
  }
  return u.reference_;
}

std::uint64_t ReferenceAccess::read_count() {
  return g_reference_reads.load(std::memory_order_relaxed);
}

void ReferenceAccess::reset_count() { g_reference_reads.store(0, std::memory_order_relaxed); }

AccessContext ReferenceAccess::current_context() { return t_context; }

void ReferenceAccess::set_context(AccessContext c) { t_context = c; }

AdaptationScope::AdaptationScope() : previous_(ReferenceAccess::current_context()) {
  ReferenceAccess::set_context(AccessContext::adaptation);
}
AdaptationScope::~AdaptationScope() { ReferenceAccess::set_context(previous_); }

EvaluationScope::EvaluationScope() : previous_(ReferenceAccess::current_context()) {
  ReferenceAccess::set_context(AccessContext::evaluation);
}
EvaluationScope::~EvaluationScope() { ReferenceAccess::set_context(previous_); }

// ---------------------------------------------------------------- corpus

const SpeakerProfile& Corpus::profile(std::string_view speaker) const {
  for (const auto& p : profiles) {
    if (p.speaker_id == speaker) return p;
  }
  throw ContractError("no profile for speaker " + std::string(speaker));
}

std::vector<std::string> Corpus::speakers(SpeakerRole role) const {
  std::vector<std::string> out;
  for (const auto& p : profiles) {
    if (p.role == role) out.push_back(p.speaker_id);
  }
  return out;
}

const std::vector<std::string>& master_word_list() {
  // The first eight words already give every grammar one sentence.
  static const std::vector<std::string> words{
      "open",    "snapchat", "call",    "emma",     "what",   "time",   "is",    "it",
      "install", "messenger", "stone",  "text",     "anne",   "hathaway", "the", "weather",
      "today",   "launch",   "spotify", "download", "maps",   "please", "send",  "a",
      "message", "to",       "john",    "smith",    "when",   "does",   "summer", "start",
      "set",     "an",       "alarm",   "for",      "seven",  "thirty", "camera", "mary"};
  return words;
}

void CorpusConfig::validate() const {
  if (feature_dim < 1) throw ConfigError("feature_dim must be >= 1");
  if (vocab_size < 8) throw ConfigError("vocab_size must be >= 8");
  if (vocab_size > master_word_list().size()) {
    throw ConfigError("vocab_size must be <= " + std::to_string(master_word_list().size()));
  }
  if (n_pretrain_speakers < 1) throw ConfigError("n_pretrain_speakers must be >= 1");
  if (n_perso_speakers < 1) throw ConfigError("n_perso_speakers must be >= 1");
  if (min_segment_frames < 1 || max_segment_frames < min_segment_frames) {
    throw ConfigError("segment frame bounds must satisfy 1 <= min <= max");
  }
  if (frame_noise < 0 || shift_magnitude < 0 || sigma_max < 0 || speaker_noise < 0) {
    throw ConfigError("noise and shift settings must be non-negative");
  }
  if (perso_shift_min < 0 || perso_shift_max < perso_shift_min) {
    throw ConfigError("personalisation shift range must satisfy 0 <= min <= max");
  }
}

namespace {

struct Template {
  std::vector<std::string> items;  // words or $CLASS slots
};

const std::map<std::string, std::vector<std::string>>& word_classes() {
  static const std::map<std::string, std::vector<std::string>> classes{
      {"$APP", {"snapchat", "messenger", "spotify", "maps", "camera"}},
      {"$VERB", {"open", "install", "launch", "download"}},
      {"$FIRST", {"emma", "anne", "john", "mary"}},
      {"$LAST", {"stone", "hathaway", "smith"}},
  };
  return classes;
}

std::vector<Template> templates(Split split) {
  auto t = [](std::string_view s) {
    Template out;
    for (auto w : text::split(s, ' ')) out.items.emplace_back(w);
    return out;
  };
  switch (split) {
    case Split::heldin_A:
      return {t("$VERB $APP"), t("please $VERB $APP"), t("$VERB the $APP"),
              t("please $VERB the $APP")};
    case Split::heldin_B:
      return {t("call $FIRST"), t("call $FIRST $LAST"), t("text $FIRST $LAST"),
              t("message $FIRST $LAST"), t("send a message to $FIRST")};
    case Split::heldout:
      return {t("what time is it"),          t("what is the weather"),
              t("what is the weather today"), t("when does summer start"),
              t("when does $FIRST start"),    t("set an alarm for seven"),
              t("set an alarm for seven thirty"), t("is the $APP open")};
    case Split::pretrain:
      break;
  }
  return {};
}

// Templates whose words all exist, with slot fillers restricted to the
// vocabulary.
std::vector<std::vector<std::vector<int>>> viable_templates(const Vocabulary& vocab, Split split) {
  std::vector<std::vector<std::vector<int>>> out;
  for (const auto& tpl : templates(split)) {
    std::vector<std::vector<int>> slots;
    bool ok = true;
    for (const auto& item : tpl.items) {
      std::vector<int> choices;
      if (item.starts_with('$')) {
        for (const auto& w : word_classes().at(item)) {
          if (auto id = vocab.find(w)) choices.push_back(*id);
        }
      } else if (auto id = vocab.find(item)) {
        choices.push_back(*id);
      }
      if (choices.empty()) {
        ok = false;
        break;
      }
      slots.push_back(std::move(choices));
    }
    if (ok) out.push_back(std::move(slots));
  }
  return out;
}

TokenSeq sample_sentence(const std::vector<std::vector<std::vector<int>>>& grammar, Rng& rng) {
  const auto& tpl = grammar[rng.uniform_int(0, grammar.size() - 1)];
  TokenSeq out;
  for (const auto& slot : tpl) out.push_back(slot[rng.uniform_int(0, slot.size() - 1)]);
  return out;
}

Tensor make_prototypes(const CorpusConfig& cfg) {
  Rng rng(derive_seed(cfg.seed, 0x70726f746fULL));
  Tensor p({cfg.vocab_size, cfg.feature_dim});
  for (double& x : p.data()) x = cfg.prototype_scale * rng.normal();
  return p;
}

std::string speaker_name(std::string_view prefix, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.*s%02zu", static_cast<int>(prefix.size()), prefix.data(), i);
  return buf;
}

std::string utterance_name(const std::string& speaker, Split split, std::size_t i) {
  char buf[96];
  std::snprintf(buf, sizeof(buf), "%s-%s-%04zu", speaker.c_str(),
                std::string(split_name(split)).c_str(), i);
  return buf;
}

double spread(const CorpusConfig& cfg, std::size_t i, std::size_t n) {
  const double frac = n > 1 ? static_cast<double>(i) / static_cast<double>(n - 1) : 0.5;
  return cfg.shift_magnitude * (cfg.perso_shift_min + (cfg.perso_shift_max - cfg.perso_shift_min) * frac);
}

}  // namespace

std::vector<TokenSeq> grammar_sentences(const Vocabulary& vocab, Split split) {
  std::vector<TokenSeq> out;
  std::vector<Split> splits = split == Split::pretrain
                                  ? std::vector<Split>{Split::heldin_A, Split::heldin_B, Split::heldout}
                                  : std::vector<Split>{split};
  for (Split s : splits) {
    for (const auto& tpl : viable_templates(vocab, s)) {
      std::vector<TokenSeq> partial{{}};
      for (const auto& slot : tpl) {
        std::vector<TokenSeq> next;
        for (const auto& p : partial) {
          for (int c : slot) {
            next.push_back(p);
            next.back().push_back(c);
          }
        }
        partial = std::move(next);
      }
      out.insert(out.end(), partial.begin(), partial.end());
    }
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

SpeakerProfile make_speaker_profile(const std::string& speaker, SpeakerRole role, double magnitude,
                                    const CorpusConfig& cfg) {
  const std::size_t f = cfg.feature_dim;
  Rng rng(derive_seed(cfg.seed, hash_string(speaker)));
  // Product of Givens rotations on random coordinate pairs; angles scale
  // linearly with the magnitude so the direction is fixed per speaker.
  Tensor q({f, f});
  for (std::size_t i = 0; i < f; ++i) q.at(i, i) = 1.0;
  const std::size_t n_rot = f > 1 ? f : 0;
  for (std::size_t r = 0; r < n_rot; ++r) {
    const std::size_t i = rng.uniform_int(0, f - 1);
    std::size_t j = rng.uniform_int(0, f - 2);
    if (j >= i) ++j;
    const double angle = magnitude * cfg.rotation_scale * rng.uniform(-1.0, 1.0);
    const double c = std::cos(angle), s = std::sin(angle);
    for (std::size_t col = 0; col < f; ++col) {
      const double qi = q.at(i, col), qj = q.at(j, col);
      q.at(i, col) = c * qi - s * qj;
      q.at(j, col) = s * qi + c * qj;
    }
  }
  const double scale = std::clamp(1.0 + 0.3 * magnitude * rng.uniform(-1.0, 1.0), 0.7, 1.3);
  for (double& x : q.data()) x *= scale;
  Tensor bias({f});
  for (double& x : bias.data()) x = magnitude * cfg.bias_scale * rng.normal();
  SpeakerProfile p;
  p.speaker_id = speaker;
  p.role = role;
  p.shift_magnitude = magnitude;
  p.affine_transform = std::move(q);
  p.bias = std::move(bias);
  p.noise_sigma = std::min(magnitude * cfg.speaker_noise, cfg.sigma_max);
  return p;
}

Tensor apply_speaker(const SpeakerProfile& profile, const Tensor& clean, std::uint64_t seed) {
  Tensor out = ops::add_row(ops::matmul_nt(clean, profile.affine_transform), profile.bias);
  if (profile.noise_sigma > 0.0) {
    Rng rng(seed);
    for (double& x : out.data()) x += profile.noise_sigma * rng.normal();
  }
  return out;
}

Corpus generate_corpus(const CorpusConfig& cfg) {
  cfg.validate();
  Corpus corpus;
  corpus.vocabulary = Vocabulary(std::vector<std::string>(
      master_word_list().begin(), master_word_list().begin() + static_cast<long>(cfg.vocab_size)));
  corpus.feature_dim = cfg.feature_dim;

  std::map<Split, std::vector<std::vector<std::vector<int>>>> grammars;
  for (Split s : {Split::heldin_A, Split::heldin_B, Split::heldout}) {
    grammars[s] = viable_templates(corpus.vocabulary, s);
    if (grammars[s].empty()) {
      throw ConfigError("vocabulary of " + std::to_string(cfg.vocab_size) +
                        " words is too small for the " + std::string(split_name(s)) + " grammar");
    }
  }
  const Tensor prototypes = make_prototypes(cfg);

  Rng magnitudes(derive_seed(cfg.seed, 0x6d6167ULL));
  for (std::size_t i = 0; i < cfg.n_pretrain_speakers; ++i) {
    corpus.profiles.push_back(make_speaker_profile(
        speaker_name("pre", i), SpeakerRole::pretrain,
        magnitudes.uniform(0.0, cfg.pretrain_shift_max), cfg));
  }
  for (std::size_t i = 0; i < cfg.n_calib_speakers; ++i) {
    corpus.profiles.push_back(make_speaker_profile(speaker_name("cal", i), SpeakerRole::calibration,
                                                   spread(cfg, i, cfg.n_calib_speakers), cfg));
  }
  for (std::size_t i = 0; i < cfg.n_perso_speakers; ++i) {
    corpus.profiles.push_back(make_speaker_profile(speaker_name("spk", i),
                                                   SpeakerRole::personalisation,
                                                   spread(cfg, i, cfg.n_perso_speakers), cfg));
  }

  auto emit = [&](const SpeakerProfile& profile, Split split, std::size_t index, Split grammar) {
    const std::string id = utterance_name(profile.speaker_id, split, index);
    Rng rng(derive_seed(cfg.seed, hash_string(id)));
    const TokenSeq sentence = sample_sentence(grammars.at(grammar), rng);
    std::vector<double> frames;
    std::size_t t = 0;
    for (int token : sentence) {
      const std::size_t dur = rng.uniform_int(cfg.min_segment_frames, cfg.max_segment_frames);
      for (std::size_t k = 0; k < dur; ++k, ++t) {
        for (std::size_t d = 0; d < cfg.feature_dim; ++d) {
          const double noise = cfg.frame_noise > 0.0 ? cfg.frame_noise * rng.normal() : 0.0;
          frames.push_back(prototypes.at(static_cast<std::size_t>(token), d) + noise);
        }
      }
    }
    Tensor clean({t, cfg.feature_dim}, std::move(frames));
    Tensor features = apply_speaker(profile, clean, derive_seed(cfg.seed, hash_string(id), 1));
    corpus.utterances.emplace_back(id, profile.speaker_id, split, std::move(features), sentence);
  };

  for (const auto& profile : corpus.profiles) {
    switch (profile.role) {
      case SpeakerRole::pretrain:
      case SpeakerRole::calibration: {
        const std::size_t n = profile.role == SpeakerRole::pretrain ? cfg.pretrain_utts_per_speaker
                                                                     : cfg.calib_utts_per_speaker;
        for (std::size_t i = 0; i < n; ++i) {
          const Split grammar = std::array{Split::heldin_A, Split::heldin_B, Split::heldout}[i % 3];
          emit(profile, Split::pretrain, i, grammar);
        }
        break;
      }
      case SpeakerRole::personalisation: {
        const std::size_t na = cfg.heldin_utts_per_speaker / 2;
        for (std::size_t i = 0; i < na; ++i) emit(profile, Split::heldin_A, i, Split::heldin_A);
        for (std::size_t i = 0; i < cfg.heldin_utts_per_speaker - na; ++i) {
          emit(profile, Split::heldin_B, i, Split::heldin_B);
        }
        for (std::size_t i = 0; i < cfg.heldout_utts_per_speaker; ++i) {
          emit(profile, Split::heldout, i, Split::heldout);
        }
        break;
      }
    }
  }
  return corpus;
}

// ---------------------------------------------------------------- views

const UnlabelledUtterance* UnlabelledView::find(std::string_view id) const {
  for (const auto& u : items_) {
    if (u.id == id) return &u;
  }
  return nullptr;
}

UnlabelledView hide_references(const std::vector<const Utterance*>& utterances) {
  std::vector<UnlabelledUtterance> items;
  items.reserve(utterances.size());
  for (const Utterance* u : utterances) {
    items.push_back({u->id(), u->speaker_id(), u->split(), u->features()});
  }
  return UnlabelledView(std::move(items));
}

UnlabelledView hide_references(const Corpus& corpus) {
  std::vector<const Utterance*> all;
  for (const auto& u : corpus.utterances) all.push_back(&u);
  return hide_references(all);
}

std::vector<const Utterance*> select_utterances(const Corpus& corpus, std::string_view speaker,
                                                std::initializer_list<Split> splits) {
  std::vector<const Utterance*> out;
  for (const auto& u : corpus.utterances) {
    if (!speaker.empty() && u.speaker_id() != speaker) continue;
    if (std::find(splits.begin(), splits.end(), u.split()) == splits.end()) continue;
    out.push_back(&u);
  }
  return out;
}

// ---------------------------------------------------------------- file format

namespace {

constexpr std::string_view kCorpusMagic = "#ccperso-corpus v1";
constexpr std::string_view kViewMagic = "#ccperso-unlabelled v1";

std::string shape_field(const Tensor& t) {
  return std::to_string(t.rows()) + "x" + std::to_string(t.cols());
}

Tensor parse_matrix(std::string_view shape, std::string_view values, std::size_t line) {
  const auto dims = text::split(shape, 'x');
  if (dims.size() != 2) throw ParseError("bad shape field '" + std::string(shape) + "'", line);
  const auto r = text::parse_int(dims[0]);
  const auto c = text::parse_int(dims[1]);
  if (!r || !c || *r < 1 || *c < 1) throw ParseError("bad shape field '" + std::string(shape) + "'", line);
  std::vector<double> data;
  data.reserve(static_cast<std::size_t>(*r * *c));
  for (auto v : text::split(values, ' ')) {
    if (v.empty()) continue;
    auto d = text::parse_double(v);
    if (!d) throw ParseError("bad number '" + std::string(v) + "'", line);
    data.push_back(*d);
  }
  if (data.size() != static_cast<std::size_t>(*r * *c)) {
    throw ParseError("expected " + std::to_string(*r * *c) + " feature values, found " +
                         std::to_string(data.size()),
                     line);
  }
  return Tensor({static_cast<std::size_t>(*r), static_cast<std::size_t>(*c)}, std::move(data));
}

std::vector<double> parse_values(std::string_view values, std::size_t expected, std::size_t line) {
  std::vector<double> out;
  for (auto v : text::split(values, ' ')) {
    if (v.empty()) continue;
    auto d = text::parse_double(v);
    if (!d) throw ParseError("bad number '" + std::string(v) + "'", line);
    out.push_back(*d);
  }
  if (out.size() != expected) {
    throw ParseError("expected " + std::to_string(expected) + " values, found " +
                         std::to_string(out.size()),
                     line);
  }
  return out;
}

}  // namespace

void write_corpus(const Corpus& corpus, std::ostream& out) {
  out << kCorpusMagic << '\n';
  out << "vocab\t" << corpus.vocabulary.size() << '\t';
  for (std::size_t i = 0; i < corpus.vocabulary.size(); ++i) {
    if (i) out << ' ';
    out << corpus.vocabulary.token(static_cast<int>(i));
  }
  out << '\n';
  out << "feature_dim\t" << corpus.feature_dim << '\n';
  for (const auto& p : corpus.profiles) {
    out << "profile\t" << p.speaker_id << '\t' << role_name(p.role) << '\t'
        << text::format_double(p.shift_magnitude) << '\t' << text::format_double(p.noise_sigma)
        << '\t' << text::join_doubles(p.affine_transform.data()) << '\t'
        << text::join_doubles(p.bias.data()) << '\n';
  }
  for (const auto& u : corpus.utterances) {
    out << "utt\t" << u.id() << '\t' << u.speaker_id() << '\t' << split_name(u.split()) << '\t'
        << shape_field(u.features()) << '\t' << text::join_doubles(u.features().data()) << '\t'
        << corpus.vocabulary.decode(ReferenceAccess::read(u)) << '\n';
  }
}

Corpus read_corpus(std::istream& in) {
  Corpus corpus;
  std::string line;
  std::size_t n = 0;
  bool have_vocab = false, have_dim = false;
  if (!std::getline(in, line) || text::trim(line) != kCorpusMagic) {
    throw ParseError("missing corpus header", 1);
  }
  ++n;
  while (std::getline(in, line)) {
    ++n;
    if (text::trim(line).empty()) continue;
    const auto f = text::split(line, '\t');
    if (f[0] == "vocab") {
      if (f.size() != 3) throw ParseError("vocab record needs 3 fields", n);
      std::vector<std::string> words;
      for (auto w : text::split(f[2], ' ')) words.emplace_back(w);
      auto count = text::parse_int(f[1]);
      if (!count || static_cast<std::size_t>(*count) != words.size()) {
        throw ParseError("vocab size does not match token list", n);
      }
      try {
        corpus.vocabulary = Vocabulary(std::move(words));
      } catch (const ConfigError& e) {
        throw ParseError(e.what(), n);
      }
      have_vocab = true;
    } else if (f[0] == "feature_dim") {
      auto d = f.size() == 2 ? text::parse_int(f[1]) : std::nullopt;
      if (!d || *d < 1) throw ParseError("bad feature_dim record", n);
      corpus.feature_dim = static_cast<std::size_t>(*d);
      have_dim = true;
    } else if (f[0] == "profile") {
      if (!have_dim) throw ParseError("profile before feature_dim", n);
      if (f.size() != 7) throw ParseError("profile record needs 7 fields", n);
      const std::size_t fd = corpus.feature_dim;
      SpeakerProfile p;
      p.speaker_id = std::string(f[1]);
      try {
        p.role = parse_role(f[2]);
      } catch (const ContractError& e) {
        throw ParseError(e.what(), n);
      }
      auto mag = text::parse_double(f[3]);
      auto sig = text::parse_double(f[4]);
      if (!mag || !sig) throw ParseError("bad profile scalars", n);
      p.shift_magnitude = *mag;
      p.noise_sigma = *sig;
      p.affine_transform = Tensor({fd, fd}, parse_values(f[5], fd * fd, n));
      p.bias = Tensor({fd}, parse_values(f[6], fd, n));
      corpus.profiles.push_back(std::move(p));
    } else if (f[0] == "utt") {
      if (!have_vocab || !have_dim) throw ParseError("utterance before vocab/feature_dim", n);
      if (f.size() != 7) {
        throw ParseError("utterance record needs 7 fields, found " + std::to_string(f.size()), n);
      }
      Tensor features = parse_matrix(f[4], f[5], n);
      if (features.cols() != corpus.feature_dim) throw ParseError("feature width mismatch", n);
      TokenSeq ref;
      try {
        ref = corpus.vocabulary.encode(f[6]);
        corpus.utterances.emplace_back(std::string(f[1]), std::string(f[2]), parse_split(f[3]),
                                       std::move(features), std::move(ref));
      } catch (const ContractError& e) {
        throw ParseError(e.what(), n);
      }
    } else {
      throw ParseError("unknown record type '" + std::string(f[0]) + "'", n);
    }
  }
  if (!have_vocab || !have_dim) throw ParseError("truncated corpus header", n);
  return corpus;
}

void save_corpus(const Corpus& corpus, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  write_corpus(corpus, out);
  if (!out) throw Error("failed writing " + path.string());
}

Corpus load_corpus(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read " + path.string());
  return read_corpus(in);
}

void save_view(const UnlabelledView& view, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << kViewMagic << '\n';
  for (const auto& u : view) {
    out << "feat\t" << u.id << '\t' << u.speaker_id << '\t' << split_name(u.split) << '\t'
        << shape_field(u.features) << '\t' << text::join_doubles(u.features.data()) << '\n';
  }
}

UnlabelledView load_view(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read " + path.string());
  std::string line;
  std::size_t n = 1;
  if (!std::getline(in, line) || text::trim(line) != kViewMagic) {
    throw ParseError("missing unlabelled-view header", 1);
  }
  std::vector<UnlabelledUtterance> items;
  while (std::getline(in, line)) {
    ++n;
    if (text::trim(line).empty()) continue;
    const auto f = text::split(line, '\t');
    if (f.size() != 6 || f[0] != "feat") throw ParseError("feature record needs 6 fields", n);
    try {
      items.push_back({std::string(f[1]), std::string(f[2]), parse_split(f[3]),
                       parse_matrix(f[4], f[5], n)});
    } catch (const ContractError& e) {
      throw ParseError(e.what(), n);
    }
  }
  return UnlabelledView(std::move(items));
}

}  // namespace ccperso
