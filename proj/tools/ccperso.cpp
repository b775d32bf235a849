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

// Command-line driver: corpus generation, pretraining, calibration,
// filtering, personalisation, sweeps and evaluation.

#include <openssl/evp.h>

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <unistd.h>
#include <vector>

#include "ccperso/error.hpp"
#include "ccperso/pipeline.hpp"
#include "ccperso/settings.hpp"
#include "ccperso/text_io.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace ccperso;

namespace {

constexpr int kRuntimeFailure = 1;
constexpr int kConfigFailure = 2;

std::string sha256_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read " + path.string());
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
  std::vector<char> buf(1 << 16);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    EVP_DigestUpdate(ctx, buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx, md, &len);
  EVP_MD_CTX_free(ctx);
  std::string hex;
  char b[3];
  for (unsigned int i = 0; i < len; ++i) {
    std::snprintf(b, sizeof b, "%02x", md[i]);
    hex += b;
  }
  return hex;
}

void note(const std::string& msg) { std::cerr << "ccperso: " << msg << std::endl; }

// Inputs shared by every subcommand.
struct Common {
  std::vector<std::string> config_files;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::string out;
  bool force = false;
  bool quiet = false;
};

struct Inputs {
  std::string corpus;
  std::string model;
  std::string calibration;
  std::vector<std::string> runs;
  std::vector<std::string> speakers;
};

// Output directory filled under a temporary name and renamed into place.
class Staging {
 public:
  Staging(const fs::path& out, bool force) : final_(out), force_(force) {
    if (fs::exists(final_) && !force_ && !fs::is_empty(final_)) {
      throw ConfigError("output directory " + final_.string() + " exists and is not empty (use --force)");
    }
    tmp_ = final_;
    tmp_ += ".partial-" + std::to_string(::getpid());
    fs::remove_all(tmp_);
    fs::create_directories(tmp_);
  }
  ~Staging() {
    std::error_code ec;
    if (!committed_) fs::remove_all(tmp_, ec);
  }
  const fs::path& dir() const { return tmp_; }
  void commit() {
    if (fs::exists(final_)) fs::remove_all(final_);
    if (final_.has_parent_path()) fs::create_directories(final_.parent_path());
    fs::rename(tmp_, final_);
    committed_ = true;
  }

 private:
  fs::path final_, tmp_;
  bool force_;
  bool committed_ = false;
};

Settings resolve_settings(const Common& c) {
  Settings s;
  for (const auto& f : c.config_files) apply_settings_file(s, f);
  if (c.seed) s.set("seed", std::to_string(*c.seed));
  for (const auto& kv : c.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    s.set(text::trim(std::string_view(kv).substr(0, eq)), std::string_view(kv).substr(eq + 1));
  }
  s.validate();
  return s;
}

void require(const std::string& value, const char* flag) {
  if (value.empty()) throw ConfigError(std::string(flag) + " is required");
}

Corpus read_corpus(const Inputs& in) {
  require(in.corpus, "--corpus");
  if (!fs::exists(in.corpus)) throw Error("corpus file not found: " + in.corpus);
  return load_corpus(in.corpus);
}

Model read_model(const Inputs& in) {
  require(in.model, "--model");
  if (!fs::exists(in.model)) throw Error("model file not found: " + in.model);
  return load_model(in.model);
}

std::optional<Calibration> read_calibration(const Inputs& in, FilterKind needed_for) {
  if (in.calibration.empty()) {
    if (needed_for == FilterKind::ct || needed_for == FilterKind::ncm) {
      throw ConfigError("--calibration is required for the " + std::string(filter_kind_name(needed_for)) +
                        " filter");
    }
    return std::nullopt;
  }
  return load_calibration(in.calibration);
}

std::vector<SpeakerData> chosen_speakers(const Corpus& corpus, const Inputs& in) {
  auto all = personalisation_data(corpus);
  if (in.speakers.empty()) return all;
  std::vector<SpeakerData> out;
  for (const auto& want : in.speakers) {
    auto it = std::find_if(all.begin(), all.end(), [&](const SpeakerData& d) { return d.speaker == want; });
    if (it == all.end()) throw ConfigError("unknown personalisation speaker: " + want);
    out.push_back(*it);
  }
  return out;
}

std::string pct(double v) { return text::fixed(v, 2); }

// Manifest: subcommand, inputs with hashes, full config, output hashes.
void write_manifest(const fs::path& dir, const std::string& cmd, const Settings& s, const Inputs& in,
                    const json& extra) {
  json m;
  m["tool"] = "ccperso";
  m["subcommand"] = cmd;
  json inputs = json::object();
  auto add_file = [&](const char* key, const std::string& p) {
    if (!p.empty()) inputs[key] = {{"path", fs::absolute(p).string()}, {"sha256", sha256_file(p)}};
  };
  add_file("corpus", in.corpus);
  add_file("model", in.model);
  if (!in.calibration.empty()) {
    inputs["calibration"] = {{"path", fs::absolute(in.calibration).string()},
                             {"ct_sha256", sha256_file(fs::path(in.calibration) / "ct.txt")},
                             {"ncm_sha256", sha256_file(fs::path(in.calibration) / "ncm.txt")}};
  }
  if (!in.runs.empty()) {
    json runs = json::array();
    for (const auto& r : in.runs) runs.push_back(fs::absolute(r).string());
    inputs["runs"] = runs;
  }
  if (!in.speakers.empty()) inputs["speakers"] = in.speakers;
  m["inputs"] = inputs;
  m["seeds"] = {{"corpus", s.corpus.seed}, {"pretrain", s.pretrain.seed}, {"ncm", s.ncm.seed},
                {"dust", s.dust.seed},     {"adapt", s.adapt.seed}};
  json config = json::object();
  for (const auto& [k, v] : s.snapshot()) config[k] = v;
  m["config"] = config;
  for (auto it = extra.begin(); it != extra.end(); ++it) m[it.key()] = it.value();
  json outputs = json::object();
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().filename() != "manifest.json") {
      outputs[fs::relative(e.path(), dir).generic_string()] = sha256_file(e.path());
    }
  }
  m["outputs"] = outputs;
  std::ofstream out(dir / "manifest.json");
  out << m.dump(2) << '\n';
  if (!out) throw Error("cannot write manifest");
}

void write_text(const fs::path& p, const std::string& body) {
  std::ofstream out(p);
  out << body;
  if (!out) throw Error("cannot write " + p.string());
}

// ------------------------------------------------------------ subcommands

json cmd_generate(const Settings& s, const Inputs&, const fs::path& dir, bool) {
  const Corpus corpus = generate_corpus(s.corpus);
  save_corpus(corpus, dir / "corpus.txt");
  note("generated " + std::to_string(corpus.utterances.size()) + " utterances");
  return {};
}

json cmd_pretrain(const Settings& s, const Inputs& in, const fs::path& dir, bool quiet) {
  const Corpus corpus = read_corpus(in);
  PretrainConfig pc = s.pretrain;
  pc.model.feature_dim = corpus.feature_dim;
  pc.model.vocab_size = corpus.vocabulary.size();
  const auto result = pretrain(corpus, pc, [&](const PretrainEpoch& e) {
    if (!quiet) {
      note("epoch " + std::to_string(e.epoch) + " loss " + text::fixed(e.train_loss, 4) + " validation WER " +
           pct(e.validation_wer));
    }
  });
  save_model(result.model, dir / "model.txt");
  std::ofstream curve(dir / "pretrain_curve.csv");
  write_pretrain_curve(result.curve, curve);
  note("best validation WER " + pct(result.best_validation_wer));
  return {{"best_validation_wer", result.best_validation_wer}};
}

json cmd_calibrate(const Settings& s, const Inputs& in, const fs::path& dir, bool) {
  const Corpus corpus = read_corpus(in);
  const Model model = read_model(in);
  const Calibration c = calibrate(model, corpus, s);
  save_calibration(c, dir);
  std::ofstream curve(dir / "ncm_curve.csv");
  curve << "epoch,train_loss,validation_loss,validation_accuracy\n";
  for (const auto& e : c.ncm.curve) {
    curve << e.epoch << ',' << text::format_double(e.train_loss) << ',' << text::format_double(e.validation_loss)
          << ',' << text::format_double(e.validation_accuracy) << '\n';
  }
  note("CT threshold " + text::fixed(c.ct.threshold, 4) + " (gmean " + text::fixed(c.ct.gmean, 3) +
       "), NCM validation accuracy " + text::fixed(c.ncm.validation_accuracy, 3));
  return {{"ct_threshold", c.ct.threshold}, {"ct_gmean", c.ct.gmean},
          {"ncm_validation_accuracy", c.ncm.validation_accuracy}};
}

json cmd_filter(const Settings& s, const Inputs& in, const fs::path& dir, bool) {
  const Corpus corpus = read_corpus(in);
  const Model model = read_model(in);
  const auto calibration = read_calibration(in, s.filter);
  std::ofstream summary(dir / "summary.csv");
  summary << "speaker,filter,kept,total,label_wer_all,label_wer_kept\n";
  for (const auto& d : chosen_speakers(corpus, in)) {
    const FilterChoice f = speaker_filter(s.filter, calibration ? &*calibration : nullptr, s, model, d);
    const FilteredSet set = apply_filter(f, model, d.view);
    save_filtered(set, dir / (d.speaker + ".filtered.jsonl"));
    const auto decodes = decode_all(model, d.view, s.adapt.beam_width);
    EvaluationScope scope;
    ErrorTally all, kept;
    for (std::size_t i = 0; i < d.heldin.size(); ++i) {
      const TokenSeq& ref = ReferenceAccess::read(*d.heldin[i]);
      all.add(ref, decodes[i].hyp.tokens);
      if (set.keeps(decodes[i].id)) kept.add(ref, decodes[i].hyp.tokens);
    }
    summary << d.speaker << ',' << filter_kind_name(s.filter) << ',' << set.kept_count() << ','
            << d.view.size() << ',' << text::format_double(all.wer()) << ','
            << (kept.ref_tokens ? text::format_double(kept.wer()) : std::string("nan")) << '\n';
    note(d.speaker + ": kept " + std::to_string(set.kept_count()) + "/" + std::to_string(d.view.size()));
  }
  return {};
}

json cmd_personalise(const Settings& s, const Inputs& in, const fs::path& dir, bool quiet) {
  const Corpus corpus = read_corpus(in);
  const Model model = read_model(in);
  const FilterKind kind = s.adapt.method == AdaptMethod::em_only ? FilterKind::none : s.filter;
  const auto calibration = read_calibration(in, kind);
  const std::string label = run_label(s.adapt.method, kind);
  std::ofstream summary(dir / "summary.csv");
  summary << "speaker,kept,heldin_before,heldin_after,heldout_before,heldout_after\n";
  ErrorTally b_in, b_out, a_in, a_out;
  for (const auto& d : chosen_speakers(corpus, in)) {
    const FilterChoice f = speaker_filter(kind, calibration ? &*calibration : nullptr, s, model, d);
    const SpeakerRun run = run_speaker(model, d, s.adapt, f, s.eval);
    const SpeakerScores before = score_speaker(model, d, s.eval.beam_width);
    const fs::path sd = dir / "speakers" / d.speaker;
    fs::create_directories(sd);
    save_model(run.result.model, sd / "model.txt");
    std::ofstream log(sd / "rounds.csv");
    write_round_log(run.result.log, log);
    save_filtered(run.result.filtered, sd / "filtered.jsonl");
    summary << d.speaker << ',' << run.result.filtered.kept_count() << ','
            << text::format_double(before.heldin.wer()) << ',' << text::format_double(run.after.heldin.wer()) << ','
            << text::format_double(before.heldout.wer()) << ',' << text::format_double(run.after.heldout.wer())
            << '\n';
    b_in.merge(before.heldin);
    b_out.merge(before.heldout);
    a_in.merge(run.after.heldin);
    a_out.merge(run.after.heldout);
    if (!quiet) {
      note(d.speaker + " " + label + ": heldin " + pct(before.heldin.wer()) + " -> " + pct(run.after.heldin.wer()) +
           ", heldout " + pct(before.heldout.wer()) + " -> " + pct(run.after.heldout.wer()));
    }
  }
  note(label + " pooled heldin WERR " + pct(werr(b_in.wer(), a_in.wer())) + "%, heldout WERR " +
       pct(werr(b_out.wer(), a_out.wer())) + "%");
  return {{"label", label},
          {"pooled",
           {{"heldin_before", b_in.wer()},
            {"heldin_after", a_in.wer()},
            {"heldout_before", b_out.wer()},
            {"heldout_after", a_out.wer()}}}};
}

json cmd_sweep(const Settings& s, const Inputs& in, const fs::path& dir, bool quiet) {
  const Corpus corpus = read_corpus(in);
  const Model model = read_model(in);
  bool needs_calibration = false;
  for (auto m : s.sweep.methods) {
    const FilterKind k = s.sweep.filter_for(m);
    needs_calibration = needs_calibration || k == FilterKind::ct || k == FilterKind::ncm;
  }
  const auto calibration = read_calibration(in, needs_calibration ? FilterKind::ncm : FilterKind::none);
  const auto rows = run_sweep(model, corpus, calibration ? &*calibration : nullptr, s, [&](const std::string& w) {
    if (!quiet) note("sweep " + w);
  });
  write_sweep_csv(rows, dir / "sweep.csv");
  return {{"rows", rows.size()}};
}

json cmd_evaluate(const Settings& s, const Inputs& in, const fs::path& dir, bool) {
  const Corpus corpus = read_corpus(in);
  const Model model = read_model(in);
  WerReport report;
  const auto speakers = chosen_speakers(corpus, in);
  for (const auto& d : speakers) add_speaker_cells(report, "pretrained", d.speaker, model, corpus, s.eval.beam_width);
  for (const auto& run : in.runs) {
    std::ifstream mf(fs::path(run) / "manifest.json");
    if (!mf) throw Error("no manifest in run directory " + run);
    const json m = json::parse(mf);
    if (m.value("subcommand", "") != "personalise") throw ConfigError(run + " is not a personalise run");
    const std::string label = m.at("label").get<std::string>();
    for (const auto& d : speakers) {
      const fs::path p = fs::path(run) / "speakers" / d.speaker / "model.txt";
      if (!fs::exists(p)) {
        report.warnings.push_back(label + ": no checkpoint for " + d.speaker);
        continue;
      }
      add_speaker_cells(report, label, d.speaker, load_model(p), corpus, s.eval.beam_width);
    }
  }
  write_aggregate_csv(report, "pretrained", dir / "aggregate.csv");
  write_speaker_csv(report, "pretrained", dir / "speakers.csv");
  const std::string table = aggregate_markdown(report, "pretrained");
  write_text(dir / "table.md", table);
  std::cout << table;
  for (const auto& w : report.warnings) note("warning: " + w);
  return {{"methods", report.methods()}};
}

using Handler = json (*)(const Settings&, const Inputs&, const fs::path&, bool);

Handler handler_for(const std::string& name) {
  if (name == "generate") return cmd_generate;
  if (name == "pretrain") return cmd_pretrain;
  if (name == "calibrate") return cmd_calibrate;
  if (name == "filter") return cmd_filter;
  if (name == "personalise") return cmd_personalise;
  if (name == "sweep") return cmd_sweep;
  if (name == "evaluate") return cmd_evaluate;
  throw ConfigError("unknown subcommand in manifest: " + name);
}

void execute(const std::string& name, const Settings& s, const Inputs& in, const Common& c) {
  const auto t0 = std::chrono::steady_clock::now();
  Staging staging(c.out, c.force);
  {
    std::ofstream cfg(staging.dir() / "config.txt");
    write_settings(s, cfg);
  }
  json extra = handler_for(name)(s, in, staging.dir(), c.quiet);
  extra["seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  write_manifest(staging.dir(), name, s, in, extra);
  staging.commit();
  note("wrote " + c.out);
}

// Re-executes a manifest's subcommand with its recorded configuration and
// inputs; inputs whose hashes changed are refused.
void rerun(const std::string& manifest_path, const Common& c) {
  std::ifstream mf(manifest_path);
  if (!mf) throw ConfigError("cannot read manifest " + manifest_path);
  json m;
  try {
    m = json::parse(mf);
  } catch (const json::exception& e) {
    throw ConfigError("malformed manifest: " + std::string(e.what()));
  }
  Settings s;
  for (auto it = m.at("config").begin(); it != m.at("config").end(); ++it) s.set(it.key(), it.value().get<std::string>());
  s.validate();
  Inputs in;
  const json& inputs = m.at("inputs");
  auto check = [](const json& entry, const char* hash_key, const fs::path& p) {
    if (sha256_file(p) != entry.at(hash_key).get<std::string>()) {
      throw Error("input changed since the manifest was written: " + p.string());
    }
  };
  if (inputs.contains("corpus")) {
    in.corpus = inputs["corpus"]["path"].get<std::string>();
    check(inputs["corpus"], "sha256", in.corpus);
  }
  if (inputs.contains("model")) {
    in.model = inputs["model"]["path"].get<std::string>();
    check(inputs["model"], "sha256", in.model);
  }
  if (inputs.contains("calibration")) {
    in.calibration = inputs["calibration"]["path"].get<std::string>();
    check(inputs["calibration"], "ct_sha256", fs::path(in.calibration) / "ct.txt");
    check(inputs["calibration"], "ncm_sha256", fs::path(in.calibration) / "ncm.txt");
  }
  if (inputs.contains("runs")) in.runs = inputs["runs"].get<std::vector<std::string>>();
  if (inputs.contains("speakers")) in.speakers = inputs["speakers"].get<std::vector<std::string>>();
  execute(m.at("subcommand").get<std::string>(), s, in, c);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Unsupervised personalisation of a small transducer on a synthetic corpus"};
  app.require_subcommand(1);

  Common common;
  Inputs inputs;
  std::optional<std::string> method, filter;
  std::optional<std::size_t> rounds, epochs;
  std::string manifest;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", common.config_files, "key = value config file (repeatable)");
    sub->add_option("--set", common.sets, "Override one key, key=value (repeatable)");
    sub->add_option("--seed", common.seed, "Root seed for every stage");
    sub->add_option("--out", common.out, "Output directory")->required();
    sub->add_flag("--force", common.force, "Replace an existing output directory");
    sub->add_flag("--quiet", common.quiet, "Less progress output");
  };
  auto add_corpus = [&](CLI::App* sub) { sub->add_option("--corpus", inputs.corpus, "Corpus file")->required(); };
  auto add_model = [&](CLI::App* sub) { sub->add_option("--model", inputs.model, "Model checkpoint")->required(); };
  auto add_calibration = [&](CLI::App* sub) {
    sub->add_option("--calibration", inputs.calibration, "Directory written by calibrate");
  };
  auto add_speakers = [&](CLI::App* sub) {
    sub->add_option("--speakers", inputs.speakers, "Restrict to these personalisation speakers");
  };

  auto* gen = app.add_subcommand("generate", "Generate the synthetic corpus");
  add_common(gen);
  auto* pre = app.add_subcommand("pretrain", "Supervised pretraining on the pretraining speakers");
  add_common(pre);
  add_corpus(pre);
  auto* cal = app.add_subcommand("calibrate", "Fit the confidence threshold and the NCM classifier");
  add_common(cal);
  add_corpus(cal);
  add_model(cal);
  auto* fil = app.add_subcommand("filter", "Filter each speaker's utterances and report label WER");
  add_common(fil);
  add_corpus(fil);
  add_model(fil);
  add_calibration(fil);
  add_speakers(fil);
  fil->add_option("--filter", filter, "none, ct, dust, ncm or oracle");
  auto* per = app.add_subcommand("personalise", "Personalise the model per speaker");
  add_common(per);
  add_corpus(per);
  add_model(per);
  add_calibration(per);
  add_speakers(per);
  per->add_option("--method", method, "cc, nst, em, em_only or cc_lhuc");
  per->add_option("--filter", filter, "none, ct, dust, ncm or oracle");
  per->add_option("--rounds", rounds, "Pseudo-labelling rounds");
  per->add_option("--epochs", epochs, "Epochs per round");
  auto* swp = app.add_subcommand("sweep", "Rounds x epochs grid for cc and nst");
  add_common(swp);
  add_corpus(swp);
  add_model(swp);
  add_calibration(swp);
  swp->add_option("--rounds", rounds, "Truncate the sweep to this many rounds");
  auto* evl = app.add_subcommand("evaluate", "WER tables for the pretrained model and personalise runs");
  add_common(evl);
  add_corpus(evl);
  add_model(evl);
  add_speakers(evl);
  evl->add_option("--runs", inputs.runs, "personalise output directories");
  auto* rer = app.add_subcommand("rerun", "Repeat a run from its manifest");
  rer->add_option("--manifest", manifest, "manifest.json of an earlier run")->required();
  rer->add_option("--out", common.out, "Output directory")->required();
  rer->add_flag("--force", common.force, "Replace an existing output directory");
  rer->add_flag("--quiet", common.quiet, "Less progress output");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kConfigFailure;
  }

  try {
    CLI::App* sub = app.get_subcommands().front();
    const std::string name = sub->get_name();
    if (name == "rerun") {
      rerun(manifest, common);
      return 0;
    }
    if (method) common.sets.insert(common.sets.begin(), "adapt.method=" + *method);
    if (filter) common.sets.insert(common.sets.begin(), "filter=" + *filter);
    if (rounds) common.sets.insert(common.sets.begin(), (name == "sweep" ? "sweep.rounds=" : "adapt.rounds=") + std::to_string(*rounds));
    if (epochs) common.sets.insert(common.sets.begin(), "adapt.epochs=" + std::to_string(*epochs));
    const Settings settings = resolve_settings(common);
    execute(name, settings, inputs, common);
    return 0;
  } catch (const ConfigError& e) {
    std::cerr << "ccperso: config error: " << e.what() << std::endl;
    return kConfigFailure;
  } catch (const std::exception& e) {
    std::cerr << "ccperso: error: " << e.what() << std::endl;
    return kRuntimeFailure;
  }
}
