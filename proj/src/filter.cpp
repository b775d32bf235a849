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

#include "ccperso/filter.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include "ccperso/autodiff.hpp"
#include "ccperso/error.hpp"
#include "ccperso/eval.hpp"
#include "ccperso/optim.hpp"
#include "ccperso/rng.hpp"
#include "ccperso/text_io.hpp"
#include "json.hpp"

namespace ccperso {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();
}  // namespace

// ---------------------------------------------------------------- FilteredSet

std::vector<std::string> FilteredSet::kept_ids() const {
  std::vector<std::string> out;
  for (const auto& d : decisions) {
    if (d.kept) out.push_back(d.id);
  }
  return out;
}

std::size_t FilteredSet::kept_count() const {
  return static_cast<std::size_t>(
      std::count_if(decisions.begin(), decisions.end(), [](const auto& d) { return d.kept; }));
}

bool FilteredSet::keeps(std::string_view id) const {
  for (const auto& d : decisions) {
    if (d.id == id) return d.kept;
  }
  return false;
}

namespace {

nlohmann::json number_json(double v) {
  if (std::isfinite(v)) return v;
  if (std::isnan(v)) return "nan";
  return v > 0 ? "inf" : "-inf";
}

double number_from_json(const nlohmann::json& j) {
  if (j.is_number()) return j.get<double>();
  const auto s = j.get<std::string>();
  if (s == "inf") return kInf;
  if (s == "-inf") return -kInf;
  if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  throw ParseError("bad score '" + s + "'", 0);
}

}  // namespace

void save_filtered(const FilteredSet& set, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  for (const auto& d : set.decisions) {
    nlohmann::json scores = nlohmann::json::array();
    for (double s : d.scores) scores.push_back(number_json(s));
    const nlohmann::json j{
        {"id", d.id}, {"method", d.method}, {"scores", scores}, {"kept", d.kept}, {"flag", d.flag}};
    out << j.dump() << '\n';
  }
  if (!out) throw Error("failed writing " + path.string());
}

FilteredSet load_filtered(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read " + path.string());
  FilteredSet set;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (text::trim(line).empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      FilterDecision d;
      d.id = j.at("id").get<std::string>();
      d.method = j.at("method").get<std::string>();
      for (const auto& s : j.at("scores")) d.scores.push_back(number_from_json(s));
      d.kept = j.at("kept").get<bool>();
      d.flag = j.at("flag").get<std::string>();
      set.decisions.push_back(std::move(d));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("bad decision record: ") + e.what(), n);
    } catch (const ParseError& e) {
      throw ParseError(e.what(), n);
    }
  }
  return set;
}

FilteredSet keep_all(const UnlabelledView& view) {
  FilteredSet set;
  for (const auto& u : view) set.decisions.push_back({u.id, "none", {}, true, ""});
  return set;
}

// ---------------------------------------------------------------- CT

CtCalibration ct_calibrate(std::span<const CalibrationPoint> points) {
  std::size_t pos = 0, neg = 0;
  std::vector<double> scores;
  for (const auto& p : points) {
    if (!std::isfinite(p.score)) throw CalibrationError("calibration score is not finite");
    (p.wer == 0.0 ? pos : neg) += 1;
    scores.push_back(p.score);
  }
  if (pos == 0 || neg == 0) {
    throw CalibrationError("calibration set needs both WER = 0 and WER > 0 examples");
  }
  std::sort(scores.begin(), scores.end());
  scores.erase(std::unique(scores.begin(), scores.end()), scores.end());
  std::vector<double> candidates;
  for (std::size_t i = 0; i + 1 < scores.size(); ++i) {
    candidates.push_back(0.5 * (scores[i] + scores[i + 1]));
  }
  if (candidates.empty()) candidates.push_back(scores.front());

  // pos and neg are fixed, so tp * tn orders candidates exactly.
  CtCalibration best{candidates.front(), -1.0};
  std::size_t best_product = 0;
  bool first = true;
  for (double th : candidates) {  // ascending, so strict improvement keeps the lower one
    std::size_t tp = 0, tn = 0;
    for (const auto& p : points) {
      const bool keep = p.score >= th;
      if (p.wer == 0.0 && keep) ++tp;
      if (p.wer != 0.0 && !keep) ++tn;
    }
    if (first || tp * tn > best_product) {
      first = false;
      best_product = tp * tn;
      best = {th, std::sqrt(static_cast<double>(tp) / static_cast<double>(pos) *
                            static_cast<double>(tn) / static_cast<double>(neg))};
    }
  }
  return best;
}

FilteredSet ct_filter(std::span<const DecodeRecord> hyps, double threshold) {
  if (std::isnan(threshold)) throw ContractError("CT threshold is NaN");
  FilteredSet set;
  for (const auto& r : hyps) {
    const double s = confidence_score(r.hyp);
    set.decisions.push_back({r.id, "ct", {s}, s >= threshold, ""});
  }
  return set;
}

// ---------------------------------------------------------------- DUST

void DustConfig::validate() const {
  if (n_hyps < 1) throw ConfigError("DUST needs at least one hypothesis");
  if (!(threshold >= 0.0)) throw ConfigError("DUST threshold must be >= 0");
  if (beam_width < 1) throw ConfigError("DUST beam width must be >= 1");
  DropoutPolicy{dropout_rate, DropoutScope::all}.validate();
}

namespace {

Hypothesis best_decode(const Model& model, const Tensor& features, std::size_t width,
                       const Perturbation* perturb) {
  return width == 1 ? greedy_decode(model, features, perturb)
                    : beam_search(model, features, width, perturb).front();
}

}  // namespace

FilterDecision dust_decide(std::string id, const TokenSeq& reference,
                           std::span<const TokenSeq> perturbed, double threshold) {
  if (reference.empty()) return {std::move(id), "dust", {}, false, "empty_reference"};
  FilterDecision d{std::move(id), "dust", {}, true, ""};
  for (const auto& hyp : perturbed) {
    const double dist = static_cast<double>(edit_distance(reference, hyp).distance) /
                        static_cast<double>(reference.size());
    d.scores.push_back(dist);
    if (dist > threshold) d.kept = false;
  }
  return d;
}

FilteredSet dust_filter(const Model& model, const UnlabelledView& view, const DustConfig& config) {
  config.validate();
  FilteredSet set;
  for (const auto& u : view) {
    const TokenSeq ref = best_decode(model, u.features, config.beam_width, nullptr).tokens;
    std::vector<TokenSeq> perturbed;
    if (!ref.empty()) {
      for (std::size_t i = 0; i < config.n_hyps; ++i) {
        const Perturbation p{{config.dropout_rate, DropoutScope::all},
                             derive_seed(config.seed, hash_string(u.id), i)};
        perturbed.push_back(best_decode(model, u.features, config.beam_width, &p).tokens);
      }
    }
    set.decisions.push_back(dust_decide(u.id, ref, perturbed, config.threshold));
  }
  return set;
}

// ---------------------------------------------------------------- NCM

NcmExample ncm_example(const Hypothesis& h, bool correct) {
  return {h.topk, h.beam_score, correct};
}

namespace {

Tensor init_weight(std::size_t in, std::size_t out, std::uint64_t seed) {
  Rng rng(seed);
  Tensor w({in, out});
  const double sd = 1.0 / std::sqrt(static_cast<double>(in));
  for (auto& v : w.data()) v = rng.normal(0.0, sd);
  return w;
}

// Standardised per-token features; padding slots sit well below the data.
Tensor token_features(const NcmModel& m, const NcmExample& x) {
  Tensor f({x.topk.size(), kTopK});
  for (std::size_t i = 0; i < x.topk.size(); ++i) {
    for (std::size_t k = 0; k < kTopK; ++k) {
      const double v = x.topk[i].logits[k];
      f.at(i, k) = std::isfinite(v) ? (v - m.logit_mean) / m.logit_scale : -5.0;
    }
  }
  return f;
}

Var ncm_forward(Graph& g, const NcmModel& m, const NcmExample& x) {
  auto p = [&](const char* name) { return g.parameter(name, m.params.at(name)); };
  auto dense = [&](Var in, const char* w, const char* b) {
    return g.tanh(g.add_row(g.matmul(in, p(w)), p(b)));
  };
  Var pooled;
  if (x.topk.empty()) {
    pooled = g.constant(Tensor({1, m.hidden}));
  } else {
    Var h = g.constant(token_features(m, x));
    h = dense(h, "l1.W", "l1.b");
    h = dense(h, "l2.W", "l2.b");
    const Var q = g.matmul(h, p("att.Wq"));
    const Var k = g.matmul(h, p("att.Wk"));
    const Var v = g.matmul(h, p("att.Wv"));
    const Var s = g.scale(g.matmul_nt(q, k), 1.0 / std::sqrt(static_cast<double>(m.hidden)));
    const Var a = g.exp(g.log_softmax(s));
    pooled = g.sum_rows(g.matmul(a, v));
  }
  const double score = (x.beam_score - m.score_mean) / m.score_scale;
  Var z = g.concat_cols(pooled, g.constant(Tensor({1, 1}, {score})));
  z = dense(z, "l3.W", "l3.b");
  z = dense(z, "l4.W", "l4.b");
  return g.log_softmax(g.add_row(g.matmul(z, p("out.W")), p("out.b")));
}

// Log posterior of the labelled class.
Var ncm_forward(Graph& g, const NcmExample& x, int label, const NcmModel& m) {
  const Tensor onehot({2, 1}, {label == 0 ? 1.0 : 0.0, label == 1 ? 1.0 : 0.0});
  return g.matmul(ncm_forward(g, m, x), g.constant(onehot));
}

double mean_nll(const NcmModel& m, std::span<const NcmExample* const> batch, Gradients* grads) {
  Graph g;
  Var total{};
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const Var lp = ncm_forward(g, *batch[i], batch[i]->correct ? 1 : 0, m);
    total = i == 0 ? lp : g.add(total, lp);
  }
  total = g.scale(total, -1.0 / static_cast<double>(batch.size()));
  const double loss = g.value(total)[0];
  if (grads) {
    g.backward(total);
    *grads = g.parameter_gradients();
  }
  return loss;
}

void fit_standardisation(NcmModel& m, std::span<const NcmExample* const> train) {
  double s = 0, s2 = 0, c = 0, b = 0, b2 = 0;
  for (const auto* x : train) {
    for (const auto& t : x->topk) {
      for (double v : t.logits) {
        if (!std::isfinite(v)) continue;
        s += v;
        s2 += v * v;
        c += 1;
      }
    }
    b += x->beam_score;
    b2 += x->beam_score * x->beam_score;
  }
  const double n = static_cast<double>(train.size());
  auto scale = [](double var) { return var > 1e-12 ? std::sqrt(var) : 1.0; };
  if (c > 0) {
    m.logit_mean = s / c;
    m.logit_scale = scale(s2 / c - m.logit_mean * m.logit_mean);
  }
  m.score_mean = b / n;
  m.score_scale = scale(b2 / n - m.score_mean * m.score_mean);
}

double accuracy(const NcmModel& m, std::span<const NcmExample* const> data) {
  std::size_t hit = 0;
  for (const auto* x : data) hit += m.predicts_correct(*x) == x->correct ? 1 : 0;
  return static_cast<double>(hit) / static_cast<double>(data.size());
}

}  // namespace

NcmModel ncm_init(std::size_t hidden, std::uint64_t seed) {
  if (hidden < 1) throw ConfigError("NCM hidden size must be >= 1");
  NcmModel m;
  m.hidden = hidden;
  const std::size_t h = hidden;
  const std::vector<std::tuple<const char*, std::size_t, std::size_t>> layers{
      {"l1", kTopK, h}, {"l2", h, h}, {"l3", h + 1, h}, {"l4", h, h}, {"out", h, 2}};
  for (const auto& [name, in, out] : layers) {
    const std::string base(name);
    m.params[base + ".W"] = init_weight(in, out, derive_seed(seed, hash_string(base + ".W")));
    m.params[base + ".b"] = Tensor({out});
  }
  for (const char* name : {"att.Wq", "att.Wk", "att.Wv"}) {
    m.params[name] = init_weight(h, h, derive_seed(seed, hash_string(name)));
  }
  return m;
}

std::array<double, 2> NcmModel::log_posterior(const NcmExample& x) const {
  Graph g;
  const Tensor& v = g.value(ncm_forward(g, *this, x));
  return {v[0], v[1]};
}

bool NcmModel::predicts_correct(const NcmExample& x) const {
  const auto lp = log_posterior(x);
  return lp[1] > lp[0];
}

double ncm_loss(const NcmModel& model, std::span<const NcmExample> data) {
  std::vector<const NcmExample*> ptrs;
  for (const auto& x : data) ptrs.push_back(&x);
  return mean_nll(model, ptrs, nullptr);
}

NcmModel ncm_train(std::span<const NcmExample> data, const NcmConfig& config) {
  if (config.batch_size < 1 || config.max_epochs < 1 || config.decay_steps < 1) {
    throw ConfigError("NCM batch size, epochs and decay steps must be >= 1");
  }
  if (!(config.validation_fraction > 0.0 && config.validation_fraction < 1.0)) {
    throw ConfigError("NCM validation fraction must be in (0, 1)");
  }
  std::vector<const NcmExample*> pos, neg;
  for (const auto& x : data) (x.correct ? pos : neg).push_back(&x);
  if (pos.empty() || neg.empty()) {
    throw TrainingError("NCM training data needs both WER = 0 and WER > 0 examples");
  }

  // Stratified split so both halves see both classes.
  Rng rng(derive_seed(config.seed, 0x5b117));
  auto shuffle = [](std::vector<const NcmExample*>& v, Rng& r) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[r.uniform_int(0, i - 1)]);
  };
  std::vector<const NcmExample*> train, valid;
  for (auto* cls : {&pos, &neg}) {
    shuffle(*cls, rng);
    std::size_t nv = static_cast<std::size_t>(
        std::llround(config.validation_fraction * static_cast<double>(cls->size())));
    if (cls->size() >= 2) nv = std::clamp<std::size_t>(nv, 1, cls->size() - 1);
    else nv = 0;
    valid.insert(valid.end(), cls->begin(), cls->begin() + static_cast<std::ptrdiff_t>(nv));
    train.insert(train.end(), cls->begin() + static_cast<std::ptrdiff_t>(nv), cls->end());
  }
  if (valid.empty()) valid = train;

  NcmModel m = ncm_init(config.hidden, config.seed);
  fit_standardisation(m, train);
  AdamState adam;
  adam.learning_rate = config.learning_rate;

  NcmModel best = m;
  double best_loss = mean_nll(m, valid, nullptr);
  best.validation_accuracy = accuracy(m, valid);
  std::size_t since_best = 0;
  std::vector<const NcmExample*> order = train;
  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    Rng erng(derive_seed(config.seed, 0xe90c, epoch));
    shuffle(order, erng);
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      Gradients grads;
      mean_nll(m, std::span(order).subspan(start, end - start), &grads);
      adam.learning_rate =
          config.learning_rate *
          std::pow(config.decay, static_cast<double>(static_cast<std::size_t>(adam.step) /
                                                     config.decay_steps));
      adam_step(m.params, grads, adam);
    }
    NcmEpoch e{epoch, mean_nll(m, train, nullptr), mean_nll(m, valid, nullptr), accuracy(m, valid)};
    if (!std::isfinite(e.train_loss)) throw TrainingError("NCM loss is not finite");
    m.curve.push_back(e);
    if (e.validation_loss < best_loss) {
      best_loss = e.validation_loss;
      best = m;
      best.validation_accuracy = e.validation_accuracy;
      since_best = 0;
    } else if (++since_best >= config.patience) {
      break;
    }
  }
  best.curve = m.curve;
  return best;
}

FilteredSet ncm_filter(const NcmModel& model, std::span<const DecodeRecord> hyps) {
  FilteredSet set;
  for (const auto& r : hyps) {
    const auto lp = model.log_posterior(ncm_example(r.hyp));
    set.decisions.push_back({r.id, "ncm", {std::exp(lp[1])}, lp[1] > lp[0], ""});
  }
  return set;
}

namespace {
constexpr std::string_view kNcmMagic = "#ccperso-ncm v1";
}  // namespace

void save_ncm(const NcmModel& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << kNcmMagic << '\n';
  out << "meta\thidden=" << model.hidden
      << "\tlogit_mean=" << text::format_double(model.logit_mean)
      << "\tlogit_scale=" << text::format_double(model.logit_scale)
      << "\tscore_mean=" << text::format_double(model.score_mean)
      << "\tscore_scale=" << text::format_double(model.score_scale)
      << "\tvalidation_accuracy=" << text::format_double(model.validation_accuracy) << '\n';
  for (const auto& [name, t] : model.params) {
    out << "tensor\t" << name << '\t' << t.rows() << 'x' << t.cols() << '\t'
        << text::join_doubles(t.data()) << '\n';
  }
  if (!out) throw Error("failed writing " + path.string());
}

NcmModel load_ncm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read " + path.string());
  std::string line;
  std::size_t n = 1;
  if (!std::getline(in, line) || text::trim(line) != kNcmMagic) {
    throw ParseError("missing NCM header", 1);
  }
  NcmModel m;
  bool have_meta = false;
  while (std::getline(in, line)) {
    ++n;
    if (text::trim(line).empty()) continue;
    const auto f = text::split(line, '\t');
    if (f[0] == "meta") {
      for (std::size_t i = 1; i < f.size(); ++i) {
        const auto eq = f[i].find('=');
        if (eq == std::string_view::npos) throw ParseError("bad meta entry", n);
        const auto key = f[i].substr(0, eq);
        const auto v = text::parse_double(f[i].substr(eq + 1));
        if (!v) throw ParseError("bad meta value for " + std::string(key), n);
        if (key == "hidden") m.hidden = static_cast<std::size_t>(*v);
        else if (key == "logit_mean") m.logit_mean = *v;
        else if (key == "logit_scale") m.logit_scale = *v;
        else if (key == "score_mean") m.score_mean = *v;
        else if (key == "score_scale") m.score_scale = *v;
        else if (key == "validation_accuracy") m.validation_accuracy = *v;
        else throw ParseError("unknown meta key " + std::string(key), n);
      }
      have_meta = true;
    } else if (f[0] == "tensor" && f.size() == 4) {
      const auto dims = text::split(f[2], 'x');
      const auto r = dims.size() == 2 ? text::parse_int(dims[0]) : std::nullopt;
      const auto c = dims.size() == 2 ? text::parse_int(dims[1]) : std::nullopt;
      if (!r || !c || *r < 1 || *c < 1) throw ParseError("bad shape", n);
      std::vector<double> values;
      for (auto v : text::split(f[3], ' ')) {
        auto d = text::parse_double(v);
        if (!d) throw ParseError("bad number '" + std::string(v) + "'", n);
        values.push_back(*d);
      }
      const auto rows = static_cast<std::size_t>(*r), cols = static_cast<std::size_t>(*c);
      if (values.size() != rows * cols) throw ParseError("value count does not match shape", n);
      Tensor t = rows == 1 ? Tensor({cols}, std::move(values)) : Tensor({rows, cols}, std::move(values));
      m.params[std::string(f[1])] = std::move(t);
    } else {
      throw ParseError("unknown record", n);
    }
  }
  if (!have_meta) throw ParseError("NCM file has no meta record", n);
  const NcmModel ref = ncm_init(m.hidden, 0);
  for (const auto& [name, t] : ref.params) {
    auto it = m.params.find(name);
    if (it == m.params.end()) throw ParseError("NCM file is missing " + name, n);
    if (it->second.size() != t.size()) throw ParseError(name + " has the wrong size", n);
    it->second.reshape(t.shape());
  }
  if (m.params.size() != ref.params.size()) throw ParseError("NCM file has unexpected tensors", n);
  return m;
}

// ---------------------------------------------------------------- oracle

FilteredSet oracle_filter(const Model& model, const std::vector<const Utterance*>& utts,
                          std::size_t width) {
  if (ReferenceAccess::current_context() == AccessContext::adaptation) {
    throw ContractError("oracle filtering reads references and cannot run during adaptation");
  }
  FilteredSet set;
  for (const auto* u : utts) {
    const auto hyp = best_decode(model, u->features(), width, nullptr);
    const auto& ref = ReferenceAccess::read(*u);
    const auto d = edit_distance(ref, hyp.tokens).distance;
    set.decisions.push_back({u->id(), "oracle", {static_cast<double>(d)}, d == 0, ""});
  }
  return set;
}

// ---------------------------------------------------------------- dispatch

FilterKind parse_filter_kind(std::string_view s) {
  if (s == "none") return FilterKind::none;
  if (s == "ct") return FilterKind::ct;
  if (s == "dust") return FilterKind::dust;
  if (s == "ncm") return FilterKind::ncm;
  if (s == "oracle") return FilterKind::oracle;
  throw ConfigError("unknown filter '" + std::string(s) + "'");
}

std::string_view filter_kind_name(FilterKind k) {
  switch (k) {
    case FilterKind::none: return "none";
    case FilterKind::ct: return "ct";
    case FilterKind::dust: return "dust";
    case FilterKind::ncm: return "ncm";
    case FilterKind::oracle: return "oracle";
  }
  return "?";
}

FilteredSet apply_filter(const FilterChoice& choice, const Model& model, const UnlabelledView& view) {
  switch (choice.kind) {
    case FilterKind::none:
      return keep_all(view);
    case FilterKind::ct:
      return ct_filter(decode_all(model, view, choice.beam_width), choice.ct_threshold);
    case FilterKind::dust:
      return dust_filter(model, view, choice.dust);
    case FilterKind::ncm:
      if (!choice.ncm) throw ConfigError("NCM filtering needs a trained NCM model");
      return ncm_filter(*choice.ncm, decode_all(model, view, choice.beam_width));
    case FilterKind::oracle: {
      if (!choice.precomputed) {
        throw ContractError("oracle decisions must be computed outside adaptation");
      }
      FilteredSet out;
      for (const auto& u : view) {
        auto it = std::find_if(choice.precomputed->decisions.begin(),
                               choice.precomputed->decisions.end(),
                               [&](const auto& d) { return d.id == u.id; });
        if (it == choice.precomputed->decisions.end()) {
          throw ContractError("no oracle decision for " + u.id);
        }
        out.decisions.push_back(*it);
      }
      return out;
    }
  }
  throw ContractError("unknown filter kind");
}

}  // namespace ccperso
