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

#include "ccperso/settings.hpp"

#include <fstream>
#include <functional>
#include <istream>
#include <ostream>

#include "ccperso/error.hpp"
#include "ccperso/text_io.hpp"

namespace ccperso {
namespace {

struct Entry {
  std::string key;
  std::function<std::string(const Settings&)> get;
  std::function<void(Settings&, std::string_view)> set;
};

[[noreturn]] void bad_value(std::string_view key, std::string_view value, std::string_view want) {
  throw ConfigError("bad value '" + std::string(value) + "' for " + std::string(key) + " (expected " +
                    std::string(want) + ")");
}

std::size_t to_size(std::string_view key, std::string_view v) {
  const auto n = text::parse_int(v);
  if (!n || *n < 0) bad_value(key, v, "a non-negative integer");
  return static_cast<std::size_t>(*n);
}

std::uint64_t to_u64(std::string_view key, std::string_view v) {
  return static_cast<std::uint64_t>(to_size(key, v));
}

double to_double(std::string_view key, std::string_view v) {
  const auto d = text::parse_double(v);
  if (!d) bad_value(key, v, "a number");
  return *d;
}

bool to_bool(std::string_view key, std::string_view v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  bad_value(key, v, "true or false");
}

template <class T, class F>
std::vector<T> to_list(std::string_view key, std::string_view v, F parse) {
  std::vector<T> out;
  for (auto part : text::split(v, ',')) {
    part = text::trim(part);
    if (part.empty()) bad_value(key, v, "a comma-separated list");
    out.push_back(parse(key, part));
  }
  if (out.empty()) bad_value(key, v, "a non-empty list");
  return out;
}

template <class T>
std::string join(const std::vector<T>& xs) {
  std::string out;
  for (const auto& x : xs) {
    if (!out.empty()) out += ',';
    if constexpr (std::is_same_v<T, AdaptMethod>) {
      out += adapt_method_name(x);
    } else {
      out += std::to_string(x);
    }
  }
  return out;
}

DropoutScope parse_scope(std::string_view key, std::string_view v) {
  if (v == "encoder") return DropoutScope::encoder;
  if (v == "joint") return DropoutScope::joint;
  if (v == "all") return DropoutScope::all;
  bad_value(key, v, "encoder, joint or all");
}

std::string scope_name(DropoutScope s) {
  switch (s) {
    case DropoutScope::encoder: return "encoder";
    case DropoutScope::joint: return "joint";
    case DropoutScope::all: break;
  }
  return "all";
}

// Binds a member reached through `path` to a key.
template <class Path>
Entry size_entry(std::string key, Path path) {
  return {key, [path](const Settings& s) { return std::to_string(path(const_cast<Settings&>(s))); },
          [path, key](Settings& s, std::string_view v) { path(s) = to_size(key, v); }};
}

template <class Path>
Entry u64_entry(std::string key, Path path) {
  return {key, [path](const Settings& s) { return std::to_string(path(const_cast<Settings&>(s))); },
          [path, key](Settings& s, std::string_view v) { path(s) = to_u64(key, v); }};
}

template <class Path>
Entry double_entry(std::string key, Path path) {
  return {key, [path](const Settings& s) { return text::format_double(path(const_cast<Settings&>(s))); },
          [path, key](Settings& s, std::string_view v) { path(s) = to_double(key, v); }};
}

template <class Path>
Entry bool_entry(std::string key, Path path) {
  return {key, [path](const Settings& s) { return std::string(path(const_cast<Settings&>(s)) ? "true" : "false"); },
          [path, key](Settings& s, std::string_view v) { path(s) = to_bool(key, v); }};
}

template <class Path>
Entry filter_entry(std::string key, Path path) {
  return {key,
          [path](const Settings& s) { return std::string(filter_kind_name(path(const_cast<Settings&>(s)))); },
          [path](Settings& s, std::string_view v) { path(s) = parse_filter_kind(v); }};
}

void add_augment(std::vector<Entry>& e, const std::string& prefix,
                 AugmentPolicy& (*policy)(Settings&)) {
  e.push_back(size_entry(prefix + "n_freq_masks", [policy](Settings& s) -> auto& { return policy(s).n_freq_masks; }));
  e.push_back(size_entry(prefix + "max_freq_width", [policy](Settings& s) -> auto& { return policy(s).max_freq_width; }));
  e.push_back(size_entry(prefix + "n_time_masks", [policy](Settings& s) -> auto& { return policy(s).n_time_masks; }));
  e.push_back(size_entry(prefix + "max_time_width", [policy](Settings& s) -> auto& { return policy(s).max_time_width; }));
  e.push_back(bool_entry(prefix + "clamp_time_to_half", [policy](Settings& s) -> auto& { return policy(s).clamp_time_to_half; }));
  e.push_back(bool_entry(prefix + "fixed_width", [policy](Settings& s) -> auto& { return policy(s).fixed_width; }));
}

#define FIELD(expr) [](Settings& s) -> auto& { return s.expr; }

const std::vector<Entry>& entries() {
  static const std::vector<Entry> table = [] {
    std::vector<Entry> e;
    e.push_back(size_entry("corpus.feature_dim", FIELD(corpus.feature_dim)));
    e.push_back(size_entry("corpus.vocab_size", FIELD(corpus.vocab_size)));
    e.push_back(size_entry("corpus.n_pretrain_speakers", FIELD(corpus.n_pretrain_speakers)));
    e.push_back(size_entry("corpus.n_calib_speakers", FIELD(corpus.n_calib_speakers)));
    e.push_back(size_entry("corpus.n_perso_speakers", FIELD(corpus.n_perso_speakers)));
    e.push_back(size_entry("corpus.pretrain_utts_per_speaker", FIELD(corpus.pretrain_utts_per_speaker)));
    e.push_back(size_entry("corpus.calib_utts_per_speaker", FIELD(corpus.calib_utts_per_speaker)));
    e.push_back(size_entry("corpus.heldin_utts_per_speaker", FIELD(corpus.heldin_utts_per_speaker)));
    e.push_back(size_entry("corpus.heldout_utts_per_speaker", FIELD(corpus.heldout_utts_per_speaker)));
    e.push_back(size_entry("corpus.min_segment_frames", FIELD(corpus.min_segment_frames)));
    e.push_back(size_entry("corpus.max_segment_frames", FIELD(corpus.max_segment_frames)));
    e.push_back(double_entry("corpus.prototype_scale", FIELD(corpus.prototype_scale)));
    e.push_back(double_entry("corpus.frame_noise", FIELD(corpus.frame_noise)));
    e.push_back(double_entry("corpus.shift_magnitude", FIELD(corpus.shift_magnitude)));
    e.push_back(double_entry("corpus.perso_shift_min", FIELD(corpus.perso_shift_min)));
    e.push_back(double_entry("corpus.perso_shift_max", FIELD(corpus.perso_shift_max)));
    e.push_back(double_entry("corpus.pretrain_shift_max", FIELD(corpus.pretrain_shift_max)));
    e.push_back(double_entry("corpus.rotation_scale", FIELD(corpus.rotation_scale)));
    e.push_back(double_entry("corpus.bias_scale", FIELD(corpus.bias_scale)));
    e.push_back(double_entry("corpus.speaker_noise", FIELD(corpus.speaker_noise)));
    e.push_back(double_entry("corpus.sigma_max", FIELD(corpus.sigma_max)));
    e.push_back(u64_entry("corpus.seed", FIELD(corpus.seed)));

    e.push_back(size_entry("model.encoder_dim", FIELD(pretrain.model.encoder_dim)));
    e.push_back(size_entry("model.embed_dim", FIELD(pretrain.model.embed_dim)));
    e.push_back(size_entry("model.pred_dim", FIELD(pretrain.model.pred_dim)));
    e.push_back(size_entry("model.joint_dim", FIELD(pretrain.model.joint_dim)));
    e.push_back(bool_entry("model.lhuc", FIELD(pretrain.model.lhuc)));

    e.push_back(size_entry("pretrain.max_epochs", FIELD(pretrain.max_epochs)));
    e.push_back(double_entry("pretrain.learning_rate", FIELD(pretrain.learning_rate)));
    e.push_back(size_entry("pretrain.batch_size", FIELD(pretrain.batch_size)));
    add_augment(e, "pretrain.augment.", [](Settings& s) -> AugmentPolicy& { return s.pretrain.augment; });
    e.push_back(double_entry("pretrain.dropout", FIELD(pretrain.dropout)));
    e.push_back(size_entry("pretrain.validation_utts", FIELD(pretrain.validation_utts)));
    e.push_back(double_entry("pretrain.target_wer", FIELD(pretrain.target_wer)));
    e.push_back(double_entry("pretrain.clip_norm", FIELD(pretrain.clip_norm)));
    e.push_back(u64_entry("pretrain.seed", FIELD(pretrain.seed)));

    e.push_back(size_entry("calibration.beam_width", FIELD(calibration_beam_width)));
    e.push_back(size_entry("ncm.hidden", FIELD(ncm.hidden)));
    e.push_back(double_entry("ncm.learning_rate", FIELD(ncm.learning_rate)));
    e.push_back(double_entry("ncm.decay", FIELD(ncm.decay)));
    e.push_back(size_entry("ncm.decay_steps", FIELD(ncm.decay_steps)));
    e.push_back(size_entry("ncm.batch_size", FIELD(ncm.batch_size)));
    e.push_back(double_entry("ncm.validation_fraction", FIELD(ncm.validation_fraction)));
    e.push_back(size_entry("ncm.max_epochs", FIELD(ncm.max_epochs)));
    e.push_back(size_entry("ncm.patience", FIELD(ncm.patience)));
    e.push_back(u64_entry("ncm.seed", FIELD(ncm.seed)));

    e.push_back(size_entry("dust.n_hyps", FIELD(dust.n_hyps)));
    e.push_back(double_entry("dust.dropout_rate", FIELD(dust.dropout_rate)));
    e.push_back(double_entry("dust.threshold", FIELD(dust.threshold)));
    e.push_back(size_entry("dust.beam_width", FIELD(dust.beam_width)));
    e.push_back(u64_entry("dust.seed", FIELD(dust.seed)));
    e.push_back(filter_entry("filter", FIELD(filter)));

    e.push_back({"adapt.method", [](const Settings& s) { return std::string(adapt_method_name(s.adapt.method)); },
                 [](Settings& s, std::string_view v) { s.adapt.method = parse_adapt_method(v); }});
    e.push_back(size_entry("adapt.rounds", FIELD(adapt.rounds)));
    e.push_back(size_entry("adapt.epochs", FIELD(adapt.epochs_per_round)));
    e.push_back(double_entry("adapt.learning_rate", FIELD(adapt.learning_rate)));
    e.push_back({"adapt.lhuc_learning_rate",
                 [](const Settings& s) {
                   return s.adapt.lhuc_learning_rate ? text::format_double(*s.adapt.lhuc_learning_rate)
                                                     : std::string("auto");
                 },
                 [](Settings& s, std::string_view v) {
                   if (v == "auto") {
                     s.adapt.lhuc_learning_rate.reset();
                   } else {
                     s.adapt.lhuc_learning_rate = to_double("adapt.lhuc_learning_rate", v);
                   }
                 }});
    e.push_back(size_entry("adapt.batch_size", FIELD(adapt.batch_size)));
    add_augment(e, "adapt.augment.", [](Settings& s) -> AugmentPolicy& { return s.adapt.augment; });
    e.push_back(double_entry("adapt.dropout", FIELD(adapt.dropout.rate)));
    e.push_back({"adapt.dropout_scope", [](const Settings& s) { return scope_name(s.adapt.dropout.scope); },
                 [](Settings& s, std::string_view v) { s.adapt.dropout.scope = parse_scope("adapt.dropout_scope", v); }});
    e.push_back({"adapt.train_mode",
                 [](const Settings& s) {
                   return s.adapt.train_mode ? std::string(train_mode_name(*s.adapt.train_mode)) : std::string("auto");
                 },
                 [](Settings& s, std::string_view v) {
                   if (v == "auto") {
                     s.adapt.train_mode.reset();
                   } else {
                     s.adapt.train_mode = parse_train_mode(v);
                   }
                 }});
    e.push_back(size_entry("adapt.beam_width", FIELD(adapt.beam_width)));
    e.push_back(double_entry("adapt.clip_norm", FIELD(adapt.clip_norm)));
    e.push_back(u64_entry("adapt.seed", FIELD(adapt.seed)));

    e.push_back(size_entry("eval.beam_width", FIELD(eval.beam_width)));
    e.push_back(size_entry("eval.round_beam_width", FIELD(eval.round_beam_width)));

    e.push_back({"sweep.epochs", [](const Settings& s) { return join(s.sweep.epochs); },
                 [](Settings& s, std::string_view v) { s.sweep.epochs = to_list<std::size_t>("sweep.epochs", v, to_size); }});
    e.push_back(size_entry("sweep.rounds", FIELD(sweep.rounds)));
    e.push_back({"sweep.seeds", [](const Settings& s) { return join(s.sweep.seeds); },
                 [](Settings& s, std::string_view v) { s.sweep.seeds = to_list<std::uint64_t>("sweep.seeds", v, to_u64); }});
    e.push_back({"sweep.methods", [](const Settings& s) { return join(s.sweep.methods); },
                 [](Settings& s, std::string_view v) {
                   s.sweep.methods = to_list<AdaptMethod>("sweep.methods", v,
                                                          [](std::string_view, std::string_view p) { return parse_adapt_method(p); });
                 }});
    e.push_back(filter_entry("sweep.cc_filter", FIELD(sweep.cc_filter)));
    e.push_back(filter_entry("sweep.nst_filter", FIELD(sweep.nst_filter)));
    e.push_back(double_entry("sweep.ema_weight", FIELD(sweep.ema_weight)));
    return e;
  }();
  return table;
}

#undef FIELD

const Entry* find_entry(std::string_view key) {
  for (const auto& e : entries()) {
    if (e.key == key) return &e;
  }
  return nullptr;
}

}  // namespace

void Settings::set(std::string_view key, std::string_view value) {
  value = text::trim(value);
  if (key == "seed") {
    const std::uint64_t s = to_u64(key, value);
    corpus.seed = pretrain.seed = ncm.seed = dust.seed = adapt.seed = s;
    return;
  }
  const Entry* e = find_entry(key);
  if (!e) throw ConfigError("unknown config key: " + std::string(key));
  try {
    e->set(*this, value);
  } catch (const ConfigError& err) {
    const std::string what = err.what();
    if (what.find(key) != std::string::npos) throw;
    throw ConfigError(std::string(key) + ": " + what);
  }
}

std::string Settings::get(std::string_view key) const {
  const Entry* e = find_entry(key);
  if (!e) throw ConfigError("unknown config key: " + std::string(key));
  return e->get(*this);
}

std::vector<std::string> Settings::keys() {
  std::vector<std::string> out;
  for (const auto& e : entries()) out.push_back(e.key);
  return out;
}

std::vector<std::pair<std::string, std::string>> Settings::snapshot() const {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& e : entries()) out.emplace_back(e.key, e.get(*this));
  return out;
}

void Settings::validate() const {
  corpus.validate();
  PretrainConfig p = pretrain;
  p.model.feature_dim = corpus.feature_dim;
  p.model.vocab_size = corpus.vocab_size;
  p.validate();
  if (calibration_beam_width < 1) throw ConfigError("calibration.beam_width must be >= 1");
  if (ncm.hidden < 1 || ncm.batch_size < 1 || ncm.max_epochs < 1) {
    throw ConfigError("ncm sizes must be >= 1");
  }
  if (!(ncm.validation_fraction > 0.0 && ncm.validation_fraction < 1.0)) {
    throw ConfigError("ncm.validation_fraction must be in (0, 1)");
  }
  dust.validate();
  adapt.validate();
  if (eval.beam_width < 1) throw ConfigError("eval.beam_width must be >= 1");
  if (sweep.rounds < 1) throw ConfigError("sweep.rounds must be >= 1");
  for (auto e : sweep.epochs) {
    if (e < 1) throw ConfigError("sweep.epochs entries must be >= 1");
  }
  if (!(sweep.ema_weight >= 0.0 && sweep.ema_weight < 1.0)) {
    throw ConfigError("sweep.ema_weight must be in [0, 1)");
  }
}

void apply_settings(Settings& settings, std::istream& in) {
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    std::string_view s = text::trim(line);
    if (s.empty() || s.front() == '#') continue;
    const auto eq = s.find('=');
    if (eq == std::string_view::npos) throw ParseError("expected key = value", n);
    const auto key = text::trim(s.substr(0, eq));
    if (key.empty()) throw ParseError("missing key", n);
    settings.set(key, s.substr(eq + 1));
  }
}

void apply_settings_file(Settings& settings, const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  apply_settings(settings, in);
}

void write_settings(const Settings& settings, std::ostream& out) {
  for (const auto& [k, v] : settings.snapshot()) out << k << " = " << v << '\n';
}

}  // namespace ccperso
