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

#include "ccperso/pipeline.hpp"

#include <fstream>
#include <map>

#include "ccperso/error.hpp"
#include "ccperso/text_io.hpp"

namespace ccperso {

std::vector<SpeakerData> personalisation_data(const Corpus& corpus) {
  std::vector<SpeakerData> out;
  for (const auto& s : corpus.speakers(SpeakerRole::personalisation)) {
    SpeakerData d;
    d.speaker = s;
    d.heldin = select_utterances(corpus, s, {Split::heldin_A, Split::heldin_B});
    d.heldout = select_utterances(corpus, s, {Split::heldout});
    d.view = hide_references(d.heldin);
    out.push_back(std::move(d));
  }
  return out;
}

std::vector<const Utterance*> calibration_utterances(const Corpus& corpus) {
  std::vector<const Utterance*> out;
  for (const auto& s : corpus.speakers(SpeakerRole::calibration)) {
    for (const auto* u : select_utterances(corpus, s, {Split::pretrain})) out.push_back(u);
  }
  return out;
}

CalibrationSet collect_calibration(const Model& model, const std::vector<const Utterance*>& utts,
                                   std::size_t beam_width) {
  const auto records = decode_all(model, hide_references(utts), beam_width);
  CalibrationSet out;
  for (std::size_t i = 0; i < utts.size(); ++i) {
    const TokenSeq& ref = ReferenceAccess::read(*utts[i]);
    const Hypothesis& h = records[i].hyp;
    const double w = static_cast<double>(edit_distance(ref, h.tokens).distance) /
                     static_cast<double>(ref.size());
    const bool correct = w == 0.0;
    out.correct += correct ? 1 : 0;
    out.points.push_back({confidence_score(h), w});
    out.examples.push_back(ncm_example(h, correct));
  }
  return out;
}

Calibration calibrate(const Model& model, const Corpus& corpus, const Settings& settings) {
  const auto utts = calibration_utterances(corpus);
  if (utts.empty()) throw CalibrationError("the corpus has no calibration speakers");
  const CalibrationSet set = collect_calibration(model, utts, settings.calibration_beam_width);
  return {ct_calibrate(set.points), ncm_train(set.examples, settings.ncm)};
}

void save_calibration(const Calibration& c, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream out(dir / "ct.txt");
  if (!out) throw Error("cannot write " + (dir / "ct.txt").string());
  out << "threshold = " << text::format_double(c.ct.threshold) << '\n'
      << "gmean = " << text::format_double(c.ct.gmean) << '\n';
  if (!out) throw Error("cannot write " + (dir / "ct.txt").string());
  save_ncm(c.ncm, dir / "ncm.txt");
}

Calibration load_calibration(const std::filesystem::path& dir) {
  Calibration c;
  std::ifstream in(dir / "ct.txt");
  if (!in) throw Error("cannot read " + (dir / "ct.txt").string());
  std::map<std::string, double, std::less<>> values;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    const auto s = text::trim(line);
    if (s.empty()) continue;
    const auto eq = s.find('=');
    const auto v = eq == std::string_view::npos ? std::nullopt : text::parse_double(text::trim(s.substr(eq + 1)));
    if (!v) throw ParseError("expected key = number", n);
    values[std::string(text::trim(s.substr(0, eq)))] = *v;
  }
  if (!values.contains("threshold") || !values.contains("gmean")) {
    throw ParseError("ct.txt needs threshold and gmean", n);
  }
  c.ct = {values["threshold"], values["gmean"]};
  c.ncm = load_ncm(dir / "ncm.txt");
  return c;
}

FilterChoice speaker_filter(FilterKind kind, const Calibration* calibration, const Settings& settings,
                            const Model& model, const SpeakerData& data) {
  FilterChoice f;
  f.kind = kind;
  f.dust = settings.dust;
  f.beam_width = settings.adapt.beam_width;
  if (kind == FilterKind::ct || kind == FilterKind::ncm) {
    if (!calibration) throw ConfigError(std::string(filter_kind_name(kind)) + " filtering needs calibration");
    f.ct_threshold = calibration->ct.threshold;
    f.ncm = std::make_shared<const NcmModel>(calibration->ncm);
  }
  if (kind == FilterKind::oracle) f.precomputed = oracle_filter(model, data.heldin, settings.adapt.beam_width);
  return f;
}

SpeakerScores score_speaker(const Model& model, const SpeakerData& data, std::size_t width) {
  EvaluationScope scope;
  return {score_utterances(model, data.heldin, width), score_utterances(model, data.heldout, width)};
}

SpeakerRun run_speaker(const Model& model, const SpeakerData& data, const AdaptationConfig& config,
                       const FilterChoice& filter, const EvalConfig& eval) {
  SpeakerRun run;
  RoundObserver observer;
  if (eval.round_beam_width > 0) {
    observer = [&](const Model& m, RoundEntry& e) {
      const SpeakerScores s = score_speaker(m, data, eval.round_beam_width);
      e.wer_heldin = s.heldin.wer();
      e.wer_heldout = s.heldout.wer();
      run.rounds.push_back(s);
    };
  }
  run.result = personalise(model, data.view, config, filter, observer);
  run.after = score_speaker(run.result.model, data, eval.beam_width);
  return run;
}

std::string run_label(AdaptMethod method, FilterKind filter) {
  if (method == AdaptMethod::em_only) return "em";
  std::string m(adapt_method_name(method));
  if (method == AdaptMethod::cc_lhuc) m = "cc+lhuc";
  if (filter == FilterKind::none) return m;
  return std::string(filter_kind_name(filter)) + "+" + m;
}

std::vector<SweepRow> run_sweep(const Model& model, const Corpus& corpus, const Calibration* calibration,
                                const Settings& settings, const SweepProgress& progress) {
  settings.validate();
  if (settings.eval.round_beam_width < 1) throw ConfigError("a sweep needs eval.round_beam_width >= 1");
  const auto speakers = personalisation_data(corpus);
  if (speakers.empty()) throw ConfigError("the corpus has no personalisation speakers");
  // Only the round scores are needed; skip the final full-width pass.
  EvalConfig eval = settings.eval;
  eval.beam_width = eval.round_beam_width;

  SpeakerScores base;
  for (const auto& d : speakers) {
    const SpeakerScores s = score_speaker(model, d, eval.round_beam_width);
    base.heldin.merge(s.heldin);
    base.heldout.merge(s.heldout);
  }

  std::vector<SweepRow> rows;
  for (AdaptMethod method : settings.sweep.methods) {
    const FilterKind kind = settings.sweep.filter_for(method);
    std::vector<FilterChoice> filters;
    for (const auto& d : speakers) filters.push_back(speaker_filter(kind, calibration, settings, model, d));
    for (std::size_t epochs : settings.sweep.epochs) {
      for (std::uint64_t seed : settings.sweep.seeds) {
        AdaptationConfig config = settings.adapt;
        config.method = method;
        config.epochs_per_round = epochs;
        config.rounds = settings.sweep.rounds;
        config.seed = seed;
        std::vector<SpeakerScores> pooled(config.rounds);
        for (std::size_t i = 0; i < speakers.size(); ++i) {
          if (progress) {
            progress(run_label(method, kind) + " epochs=" + std::to_string(epochs) + " seed=" +
                     std::to_string(seed) + " " + speakers[i].speaker);
          }
          const SpeakerRun run = run_speaker(model, speakers[i], config, filters[i], eval);
          for (std::size_t r = 0; r < config.rounds; ++r) {
            pooled[r].heldin.merge(run.rounds[r].heldin);
            pooled[r].heldout.merge(run.rounds[r].heldout);
          }
        }
        for (const char* split : {"heldin", "heldout"}) {
          const bool in = std::string_view(split) == "heldin";
          const double b = (in ? base.heldin : base.heldout).wer();
          std::vector<double> wers, werrs;
          for (const auto& p : pooled) {
            wers.push_back((in ? p.heldin : p.heldout).wer());
            werrs.push_back(werr(b, wers.back()));
          }
          const auto smooth = ema_smooth(werrs, settings.sweep.ema_weight);
          for (std::size_t r = 0; r < wers.size(); ++r) {
            rows.push_back({std::string(adapt_method_name(method)), std::string(filter_kind_name(kind)), epochs,
                            seed, r + 1, split, wers[r], werrs[r], smooth[r]});
          }
        }
      }
    }
  }
  return rows;
}

void write_sweep_csv(const std::vector<SweepRow>& rows, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << "method,filter,epochs,seed,round,split,wer,werr,werr_ema\n";
  for (const auto& r : rows) {
    out << r.method << ',' << r.filter << ',' << r.epochs << ',' << r.seed << ',' << r.round << ',' << r.split
        << ',' << text::format_double(r.wer) << ',' << text::format_double(r.werr) << ','
        << text::format_double(r.werr_ema) << '\n';
  }
  if (!out) throw Error("cannot write " + path.string());
}

}  // namespace ccperso
