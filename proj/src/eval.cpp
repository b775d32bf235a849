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

#include "ccperso/eval.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "ccperso/decode.hpp"
#include "ccperso/error.hpp"
#include "ccperso/text_io.hpp"

namespace ccperso {

void ErrorTally::add(const TokenSeq& ref, const TokenSeq& hyp) {
  const EditCounts e = edit_distance(ref, hyp);
  substitutions += e.substitutions;
  deletions += e.deletions;
  insertions += e.insertions;
  ref_tokens += ref.size();
  ++utterances;
}

void ErrorTally::merge(const ErrorTally& o) {
  substitutions += o.substitutions;
  deletions += o.deletions;
  insertions += o.insertions;
  ref_tokens += o.ref_tokens;
  utterances += o.utterances;
}

double ErrorTally::wer() const {
  if (ref_tokens == 0) throw ContractError("WER needs at least one reference token");
  return 100.0 * static_cast<double>(errors()) / static_cast<double>(ref_tokens);
}

double wer(std::span<const std::pair<TokenSeq, TokenSeq>> pairs) {
  ErrorTally t;
  for (const auto& [ref, hyp] : pairs) t.add(ref, hyp);
  return t.wer();
}

double werr(double baseline, double updated) {
  if (!(baseline > 0.0)) throw ContractError("WERR needs a positive baseline WER");
  return 100.0 * (baseline - updated) / baseline;
}

std::vector<double> ema_smooth(std::span<const double> series, double weight) {
  if (!(weight >= 0.0 && weight < 1.0)) throw ContractError("EMA weight must be in [0, 1)");
  std::vector<double> out;
  out.reserve(series.size());
  for (double x : series) out.push_back(out.empty() ? x : weight * out.back() + (1.0 - weight) * x);
  return out;
}

ErrorTally score_utterances(const Model& model, const std::vector<const Utterance*>& utts,
                            std::size_t width) {
  ErrorTally t;
  for (const Utterance* u : utts) {
    const Hypothesis h = width == 1 ? greedy_decode(model, u->features())
                                    : beam_search(model, u->features(), width).front();
    t.add(ReferenceAccess::read(*u), h.tokens);
  }
  return t;
}

// ---------------------------------------------------------------- report

namespace {

template <class F>
std::vector<std::string> distinct(const std::vector<WerCell>& cells, F field) {
  std::vector<std::string> out;
  for (const auto& c : cells) {
    const std::string& v = field(c);
    if (std::find(out.begin(), out.end(), v) == out.end()) out.push_back(v);
  }
  return out;
}

std::string fmt(double v) { return text::fixed(v, 2); }

}  // namespace

std::vector<std::string> WerReport::methods() const {
  return distinct(cells, [](const WerCell& c) -> const std::string& { return c.method; });
}
std::vector<std::string> WerReport::speakers() const {
  return distinct(cells, [](const WerCell& c) -> const std::string& { return c.speaker; });
}
std::vector<std::string> WerReport::splits() const {
  return distinct(cells, [](const WerCell& c) -> const std::string& { return c.split; });
}

std::optional<ErrorTally> WerReport::pooled(std::string_view method, std::string_view split) const {
  std::optional<ErrorTally> out;
  for (const auto& c : cells) {
    if (c.method != method || c.split != split) continue;
    if (!out) out.emplace();
    out->merge(c.tally);
  }
  return out;
}

std::optional<ErrorTally> WerReport::cell(std::string_view method, std::string_view speaker,
                                          std::string_view split) const {
  for (const auto& c : cells) {
    if (c.method == method && c.speaker == speaker && c.split == split) return c.tally;
  }
  return std::nullopt;
}

void add_speaker_cells(WerReport& report, const std::string& method, const std::string& speaker,
                       const Model& model, const Corpus& corpus, std::size_t width) {
  ErrorTally heldin;
  bool any_heldin = false;
  for (Split s : {Split::heldin_A, Split::heldin_B, Split::heldout}) {
    const auto utts = select_utterances(corpus, speaker, {s});
    if (utts.empty()) {
      report.warnings.push_back("speaker " + speaker + " has no " + std::string(split_name(s)) +
                                " utterances; omitted");
      continue;
    }
    const ErrorTally t = score_utterances(model, utts, width);
    report.cells.push_back({method, speaker, std::string(split_name(s)), t});
    if (is_heldin(s)) {
      heldin.merge(t);
      any_heldin = true;
    }
  }
  if (any_heldin) report.cells.push_back({method, speaker, "heldin", heldin});
}

void write_aggregate_csv(const WerReport& report, const std::string& baseline,
                         const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << "method,split,substitutions,deletions,insertions,ref_tokens,wer,werr\n";
  for (const auto& m : report.methods()) {
    for (const auto& s : report.splits()) {
      const auto t = report.pooled(m, s);
      if (!t) continue;
      const auto base = report.pooled(baseline, s);
      out << m << ',' << s << ',' << t->substitutions << ',' << t->deletions << ','
          << t->insertions << ',' << t->ref_tokens << ',' << fmt(t->wer()) << ','
          << (base && base->wer() > 0 ? fmt(werr(base->wer(), t->wer())) : "") << '\n';
    }
  }
}

void write_speaker_csv(const WerReport& report, const std::string& baseline,
                       const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << "method,speaker,split,ref_tokens,wer,werr\n";
  for (const auto& c : report.cells) {
    const auto base = report.cell(baseline, c.speaker, c.split);
    out << c.method << ',' << c.speaker << ',' << c.split << ',' << c.tally.ref_tokens << ','
        << fmt(c.tally.wer()) << ','
        << (base && base->wer() > 0 ? fmt(werr(base->wer(), c.tally.wer())) : "") << '\n';
  }
}

std::string aggregate_markdown(const WerReport& report, const std::string& baseline) {
  const auto splits = report.splits();
  std::ostringstream out;
  out << "| method |";
  for (const auto& s : splits) out << ' ' << s << " WER | " << s << " WERR |";
  out << "\n|---|";
  for (std::size_t i = 0; i < splits.size(); ++i) out << "---:|---:|";
  out << '\n';
  for (const auto& m : report.methods()) {
    out << "| " << m << " |";
    for (const auto& s : splits) {
      const auto t = report.pooled(m, s);
      const auto base = report.pooled(baseline, s);
      if (!t) {
        out << " | |";
        continue;
      }
      out << ' ' << fmt(t->wer()) << " | "
          << (base && base->wer() > 0 ? fmt(werr(base->wer(), t->wer())) : "") << " |";
    }
    out << '\n';
  }
  return out.str();
}

}  // namespace ccperso
