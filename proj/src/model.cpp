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

#include "ccperso/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>

#include "ccperso/error.hpp"
#include "ccperso/rng.hpp"
#include "ccperso/text_io.hpp"

namespace ccperso {

void ModelConfig::validate() const {
  if (feature_dim < 1 || vocab_size < 1 || encoder_dim < 1 || embed_dim < 1 || pred_dim < 1 ||
      joint_dim < 1) {
    throw ConfigError("model dimensions must be >= 1");
  }
}

const Tensor& Model::param(std::string_view name) const {
  auto it = params.find(name);
  if (it == params.end()) throw ContractError("model has no parameter " + std::string(name));
  return it->second;
}

std::vector<std::string> Model::lhuc_names() const {
  if (!config.lhuc) return {};
  return {"enc.lhuc0", "enc.lhuc1"};
}

std::size_t Model::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : params) n += t.size();
  return n;
}

namespace {

std::map<std::string, Shape> parameter_shapes(const ModelConfig& c) {
  const std::size_t f = c.feature_dim, h = c.encoder_dim, e = c.embed_dim, p = c.pred_dim,
                    j = c.joint_dim, o = c.output_size();
  std::map<std::string, Shape> s{
      {"enc.in.W", {f, h}},       {"enc.in.b", {h}},          {"enc.rec.Wz", {h, h}},
      {"enc.rec.Uz", {h, h}},     {"enc.rec.bz", {h}},        {"enc.rec.Wc", {h, h}},
      {"enc.rec.Uc", {h, h}},     {"enc.rec.bc", {h}},        {"pred.embed", {o, e}},
      {"pred.rec.Wz", {e, p}},    {"pred.rec.Uz", {p, p}},    {"pred.rec.bz", {p}},
      {"pred.rec.Wc", {e, p}},    {"pred.rec.Uc", {p, p}},    {"pred.rec.bc", {p}},
      {"joint.We", {h, j}},       {"joint.Wp", {p, j}},       {"joint.b", {j}},
      {"joint.Wo", {j, o}},       {"joint.bo", {o}},
  };
  if (c.lhuc) {
    s["enc.lhuc0"] = {h};
    s["enc.lhuc1"] = {h};
  }
  return s;
}

constexpr std::uint64_t kTagEnc0 = 0xe0c0;
constexpr std::uint64_t kTagEnc1 = 0xe0c1;
constexpr std::uint64_t kTagJoint = 0x701e7;

Tensor joint_mask(const Perturbation& p, std::size_t dim, std::size_t t, std::size_t u) {
  return dropout_mask({1, dim}, p.dropout, derive_seed(p.seed, kTagJoint, t, u));
}

bool joint_dropout(const Perturbation* p) { return p && p->dropout.covers_joint(); }
bool encoder_dropout(const Perturbation* p) { return p && p->dropout.covers_encoder(); }

using ParamFn = std::function<Var(const std::string&)>;

// One gated layer over the rows of x; returns the stacked states.
Var gated_layer(Graph& g, const ParamFn& p, const std::string& prefix, Var x, std::size_t dim) {
  const Var hz = g.add_row(g.matmul(x, p(prefix + "Wz")), p(prefix + "bz"));
  const Var hc = g.add_row(g.matmul(x, p(prefix + "Wc")), p(prefix + "bc"));
  const Var uz = p(prefix + "Uz");
  const Var uc = p(prefix + "Uc");
  Var s = g.constant(Tensor({1, dim}));
  std::vector<Var> states;
  const std::size_t steps = g.value(x).rows();
  states.reserve(steps);
  for (std::size_t t = 0; t < steps; ++t) {
    const Var z = g.sigmoid(g.add(g.row(hz, t), g.matmul(s, uz)));
    const Var c = g.tanh(g.add(g.row(hc, t), g.matmul(s, uc)));
    s = g.add(s, g.mul(z, g.sub(c, s)));
    states.push_back(s);
  }
  return g.stack_rows(states);
}

Var lhuc(Graph& g, Var x, Var amplitude) { return g.mul_row(x, g.scale(g.sigmoid(amplitude), 2.0)); }

// Encoder output projected into the joint space, T x J.
Var encode(Graph& g, const Model& m, const ParamFn& p, const Tensor& features,
           const Perturbation* perturb) {
  if (features.rank() != 2 || features.rows() < 1 || features.cols() != m.config.feature_dim) {
    throw ShapeError("features must be T x " + std::to_string(m.config.feature_dim) +
                     " with T >= 1, got " + shape_string(features.shape()));
  }
  const std::size_t t_len = features.rows(), h = m.config.encoder_dim;
  Var x = g.tanh(g.add_row(g.matmul(g.constant(features), p("enc.in.W")), p("enc.in.b")));
  if (m.config.lhuc) x = lhuc(g, x, p("enc.lhuc0"));
  if (encoder_dropout(perturb)) {
    x = g.mul(x, g.constant(dropout_mask({t_len, h}, perturb->dropout,
                                         derive_seed(perturb->seed, kTagEnc0))));
  }
  Var s = gated_layer(g, p, "enc.rec.", x, h);
  if (m.config.lhuc) s = lhuc(g, s, p("enc.lhuc1"));
  if (encoder_dropout(perturb)) {
    s = g.mul(s, g.constant(dropout_mask({t_len, h}, perturb->dropout,
                                         derive_seed(perturb->seed, kTagEnc1))));
  }
  return g.add_row(g.matmul(s, p("joint.We")), p("joint.b"));
}

void check_target(const Model& m, const TokenSeq& target) {
  for (int y : target) {
    if (y == m.config.blank_id()) throw ContractError("target contains the blank symbol");
    if (y < 0 || y > m.config.blank_id()) {
      throw ContractError("target token " + std::to_string(y) + " outside the vocabulary");
    }
  }
}

double log_add(double a, double b) {
  if (a == -std::numeric_limits<double>::infinity()) return b;
  if (b == -std::numeric_limits<double>::infinity()) return a;
  return a > b ? a + std::log1p(std::exp(b - a)) : b + std::log1p(std::exp(a - b));
}

}  // namespace

Model init_model(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  Model m;
  m.config = config;
  for (const auto& [name, shape] : parameter_shapes(config)) {
    Tensor t(shape);
    const bool bias = shape.size() == 1;
    if (!bias) {
      Rng rng(derive_seed(seed, hash_string(name)));
      const double sd = name == "pred.embed" ? 1.0 : 1.0 / std::sqrt(static_cast<double>(shape[0]));
      for (double& x : t.data()) x = sd * rng.normal();
    }
    m.params.emplace(name, std::move(t));
  }
  return m;
}

LatticeVars forward_lattice(Graph& g, const Model& m, const Tensor& features,
                            const TokenSeq& target, const Perturbation* perturb) {
  check_target(m, target);
  const ParamFn p = [&](const std::string& name) { return g.parameter(name, m.param(name)); };
  const Var enc = encode(g, m, p, features, perturb);

  std::vector<std::size_t> inputs{static_cast<std::size_t>(m.config.blank_id())};
  for (int y : target) inputs.push_back(static_cast<std::size_t>(y));
  const Var emb = g.gather_rows(p("pred.embed"), std::move(inputs));
  const Var pred = g.matmul(gated_layer(g, p, "pred.rec.", emb, m.config.pred_dim), p("joint.Wp"));

  const std::size_t t_len = features.rows(), u1 = target.size() + 1, j = m.config.joint_dim;
  Var hid = g.tanh(g.pair_add(enc, pred));
  if (joint_dropout(perturb)) {
    Tensor masks({t_len * u1, j});
    for (std::size_t t = 0; t < t_len; ++t) {
      for (std::size_t u = 0; u < u1; ++u) {
        const Tensor row = joint_mask(*perturb, j, t, u);
        std::copy(row.data().begin(), row.data().end(), masks.row(t * u1 + u).begin());
      }
    }
    hid = g.mul(hid, g.constant(std::move(masks)));
  }
  const Var logits = g.add_row(g.matmul(hid, p("joint.Wo")), p("joint.bo"));
  return {g.log_softmax(logits), logits, t_len, target.size()};
}

PosteriorLattice forward_lattice(const Model& model, const Tensor& features,
                                 const TokenSeq& target, const Perturbation* perturb) {
  Graph g;
  const LatticeVars v = forward_lattice(g, model, features, target, perturb);
  return {g.value(v.log_probs), g.value(v.logits), v.frames, v.target_length};
}

TransducerLoss transducer_loss(const Tensor& lp, std::size_t frames, const TokenSeq& target,
                               int blank) {
  if (frames < 1) throw ContractError("transducer loss needs at least one frame");
  const std::size_t u_len = target.size(), u1 = u_len + 1;
  if (lp.rank() != 2 || lp.rows() != frames * u1 || static_cast<int>(lp.cols()) <= blank) {
    throw ShapeError("lattice " + shape_string(lp.shape()) + " does not match T=" +
                     std::to_string(frames) + ", U=" + std::to_string(u_len));
  }
  const double ninf = -std::numeric_limits<double>::infinity();
  auto blank_lp = [&](std::size_t t, std::size_t u) {
    return lp.at(t * u1 + u, static_cast<std::size_t>(blank));
  };
  auto label_lp = [&](std::size_t t, std::size_t u) {
    return lp.at(t * u1 + u, static_cast<std::size_t>(target[u]));
  };
  std::vector<double> alpha(frames * u1, ninf), beta(frames * u1, ninf);
  auto A = [&](std::size_t t, std::size_t u) -> double& { return alpha[t * u1 + u]; };
  auto B = [&](std::size_t t, std::size_t u) -> double& { return beta[t * u1 + u]; };
  for (std::size_t t = 0; t < frames; ++t) {
    for (std::size_t u = 0; u < u1; ++u) {
      if (t == 0 && u == 0) {
        A(0, 0) = 0.0;
        continue;
      }
      double a = ninf;
      if (t > 0) a = A(t - 1, u) + blank_lp(t - 1, u);
      if (u > 0) a = log_add(a, A(t, u - 1) + label_lp(t, u - 1));
      A(t, u) = a;
    }
  }
  const double log_lik = A(frames - 1, u_len) + blank_lp(frames - 1, u_len);
  for (std::size_t t = frames; t-- > 0;) {
    for (std::size_t u = u1; u-- > 0;) {
      if (t == frames - 1 && u == u_len) {
        B(t, u) = blank_lp(t, u);
        continue;
      }
      double b = ninf;
      if (t + 1 < frames) b = B(t + 1, u) + blank_lp(t, u);
      if (u < u_len) b = log_add(b, B(t, u + 1) + label_lp(t, u));
      B(t, u) = b;
    }
  }
  TransducerLoss out;
  out.log_likelihood = log_lik;
  out.loss = -log_lik;
  if (!std::isfinite(out.loss)) throw NumericError("transducer loss is not finite");
  out.grad = Tensor(lp.shape());
  for (std::size_t t = 0; t < frames; ++t) {
    for (std::size_t u = 0; u < u1; ++u) {
      const std::size_t n = t * u1 + u;
      const double next_blank = t + 1 < frames ? B(t + 1, u) : (u == u_len ? 0.0 : ninf);
      out.grad.at(n, static_cast<std::size_t>(blank)) =
          -std::exp(A(t, u) + blank_lp(t, u) + next_blank - log_lik);
      if (u < u_len) {
        out.grad.at(n, static_cast<std::size_t>(target[u])) -=
            std::exp(A(t, u) + label_lp(t, u) + B(t, u + 1) - log_lik);
      }
    }
  }
  return out;
}

Var transducer_loss(Graph& g, const LatticeVars& lattice, const TokenSeq& target, int blank) {
  TransducerLoss l = transducer_loss(g.value(lattice.log_probs), lattice.frames, target, blank);
  return g.scalar_with_gradient(lattice.log_probs, l.loss, std::move(l.grad));
}

double entropy_loss(const Tensor& rows) {
  if (rows.size() == 0) return 0.0;
  double total = 0.0;
  for (std::size_t r = 0; r < rows.rows(); ++r) {
    for (double lp : rows.row(r)) total -= std::exp(lp) * lp;
  }
  return total / static_cast<double>(rows.rows());
}

Var entropy_loss(Graph& g, Var rows) {
  const double n = static_cast<double>(g.value(rows).rows());
  return g.scale(g.sum(g.mul(g.exp(rows), rows)), -1.0 / n);
}

TrainMode parse_train_mode(std::string_view s) {
  if (s == "full") return TrainMode::full;
  if (s == "lhuc_only") return TrainMode::lhuc_only;
  if (s == "encoder") return TrainMode::encoder;
  throw ConfigError("unknown training mode: " + std::string(s));
}

std::string_view train_mode_name(TrainMode m) {
  switch (m) {
    case TrainMode::full: return "full";
    case TrainMode::encoder: return "encoder";
    case TrainMode::lhuc_only: break;
  }
  return "lhuc_only";
}

ParamSelector trainable_subset(const Model& model, TrainMode mode) {
  ParamSelector out;
  if (mode == TrainMode::full) {
    for (const auto& [name, t] : model.params) out.insert(name);
  } else if (mode == TrainMode::encoder) {
    for (const auto& [name, t] : model.params) {
      if (name.starts_with("enc.")) out.insert(name);
    }
  } else {
    if (!model.config.lhuc) throw ConfigError("lhuc_only training needs a model with LHUC layers");
    for (const auto& name : model.lhuc_names()) out.insert(name);
  }
  return out;
}

// ---------------------------------------------------------------- inference

Inference::Inference(const Model& model, const Tensor& features, const Perturbation* perturb)
    : model_(model) {
  if (perturb) perturb_ = *perturb;
  Graph g;
  const ParamFn p = [&](const std::string& name) { return g.constant(model.param(name)); };
  enc_proj_ = g.value(encode(g, model, p, features, perturb));
  initial_ = step({Tensor({1, model.config.pred_dim}), {}}, model.config.blank_id());
}

Inference::PredState Inference::step(const PredState& prev, int token) const {
  const Tensor& embed = model_.param("pred.embed");
  const auto r = embed.row(static_cast<std::size_t>(token));
  const Tensor x({1, embed.cols()}, std::vector<double>(r.begin(), r.end()));
  const Tensor hz = ops::add_row(ops::matmul(x, model_.param("pred.rec.Wz")), model_.param("pred.rec.bz"));
  const Tensor hc = ops::add_row(ops::matmul(x, model_.param("pred.rec.Wc")), model_.param("pred.rec.bc"));
  const Tensor& s = prev.state;
  const Tensor z = ops::sigmoid(ops::add(hz, ops::matmul(s, model_.param("pred.rec.Uz"))));
  const Tensor c = ops::tanh(ops::add(hc, ops::matmul(s, model_.param("pred.rec.Uc"))));
  PredState next;
  next.state = ops::add(s, ops::mul(z, ops::sub(c, s)));
  next.projected = ops::matmul(next.state, model_.param("joint.Wp"));
  return next;
}

Tensor Inference::logits(std::size_t t, std::size_t u, const PredState& pred) const {
  const auto er = enc_proj_.row(t);
  const Tensor e({1, enc_proj_.cols()}, std::vector<double>(er.begin(), er.end()));
  Tensor hid = ops::tanh(ops::add(e, pred.projected));
  if (perturb_ && perturb_->dropout.covers_joint()) {
    hid = ops::mul(hid, joint_mask(*perturb_, model_.config.joint_dim, t, u));
  }
  return ops::add_row(ops::matmul(hid, model_.param("joint.Wo")), model_.param("joint.bo"));
}

// ---------------------------------------------------------------- checkpoint

namespace {

constexpr std::string_view kModelMagic = "#ccperso-model v1";

std::string shape_field(const Shape& s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += 'x';
    out += std::to_string(s[i]);
  }
  return out;
}

}  // namespace

void save_model(const Model& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  const auto& c = model.config;
  out << kModelMagic << '\n';
  out << "config\tfeature_dim=" << c.feature_dim << "\tvocab_size=" << c.vocab_size
      << "\tencoder_dim=" << c.encoder_dim << "\tembed_dim=" << c.embed_dim
      << "\tpred_dim=" << c.pred_dim << "\tjoint_dim=" << c.joint_dim
      << "\tlhuc=" << (c.lhuc ? 1 : 0) << '\n';
  for (const auto& [name, t] : model.params) {
    out << "tensor\t" << name << '\t' << shape_field(t.shape()) << '\t' << text::join_doubles(t.data())
        << '\n';
  }
  if (!out) throw Error("failed writing " + path.string());
}

Model load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read " + path.string());
  std::string line;
  std::size_t n = 1;
  if (!std::getline(in, line) || text::trim(line) != kModelMagic) {
    throw ParseError("missing model header", 1);
  }
  Model m;
  bool have_config = false;
  while (std::getline(in, line)) {
    ++n;
    if (text::trim(line).empty()) continue;
    const auto f = text::split(line, '\t');
    if (f[0] == "config") {
      std::map<std::string, long long, std::less<>> kv;
      for (std::size_t i = 1; i < f.size(); ++i) {
        const auto eq = f[i].find('=');
        auto v = eq == std::string_view::npos ? std::nullopt : text::parse_int(f[i].substr(eq + 1));
        if (!v || *v < 0) throw ParseError("bad config entry '" + std::string(f[i]) + "'", n);
        kv[std::string(f[i].substr(0, eq))] = *v;
      }
      auto get = [&](std::string_view key) -> std::size_t {
        auto it = kv.find(key);
        if (it == kv.end()) throw ParseError("config is missing " + std::string(key), n);
        return static_cast<std::size_t>(it->second);
      };
      m.config.feature_dim = get("feature_dim");
      m.config.vocab_size = get("vocab_size");
      m.config.encoder_dim = get("encoder_dim");
      m.config.embed_dim = get("embed_dim");
      m.config.pred_dim = get("pred_dim");
      m.config.joint_dim = get("joint_dim");
      m.config.lhuc = get("lhuc") != 0;
      have_config = true;
    } else if (f[0] == "tensor") {
      if (f.size() != 4) throw ParseError("tensor record needs 4 fields", n);
      Shape shape;
      for (auto d : text::split(f[2], 'x')) {
        auto v = text::parse_int(d);
        if (!v || *v < 1) throw ParseError("bad shape '" + std::string(f[2]) + "'", n);
        shape.push_back(static_cast<std::size_t>(*v));
      }
      std::vector<double> values;
      for (auto v : text::split(f[3], ' ')) {
        auto d = text::parse_double(v);
        if (!d) throw ParseError("bad number '" + std::string(v) + "'", n);
        values.push_back(*d);
      }
      if (values.size() != shape_size(shape)) throw ParseError("value count does not match shape", n);
      m.params[std::string(f[1])] = Tensor(std::move(shape), std::move(values));
    } else {
      throw ParseError("unknown record type '" + std::string(f[0]) + "'", n);
    }
  }
  if (!have_config) throw ParseError("model file has no config record", n);
  const auto expected = parameter_shapes(m.config);
  for (const auto& [name, shape] : expected) {
    auto it = m.params.find(name);
    if (it == m.params.end()) throw ParseError("model file is missing " + name, n);
    if (it->second.shape() != shape) {
      throw ParseError(name + " has shape " + shape_string(it->second.shape()) + ", expected " +
                           shape_string(shape),
                       n);
    }
  }
  if (m.params.size() != expected.size()) throw ParseError("model file has unexpected tensors", n);
  return m;
}

}  // namespace ccperso
