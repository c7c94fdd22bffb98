// Copyright 2026 The MPrompt Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "mprompt/trainer.h"

#include <spdlog/fmt/fmt.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <variant>

#include "json.hpp"
#include "mprompt/checkpoint.h"
#include "mprompt/errors.h"
#include "mprompt/parallel.h"
#include "mprompt/rng.h"

namespace mprompt {

// ---- config ----

namespace {

using FieldPtr = std::variant<int TrainConfig::*, double TrainConfig::*, bool TrainConfig::*,
                              std::uint64_t TrainConfig::*, std::string TrainConfig::*>;

struct Field {
  std::string_view name;
  FieldPtr ptr;
};

const std::vector<Field>& fields() {
  static const std::vector<Field> kFields = {
      {"t", &TrainConfig::t},
      {"rho", &TrainConfig::rho},
      {"kappa", &TrainConfig::kappa},
      {"n", &TrainConfig::n},
      {"m", &TrainConfig::m},
      {"lambda", &TrainConfig::lambda},
      {"lr", &TrainConfig::lr},
      {"beta1", &TrainConfig::beta1},
      {"beta2", &TrainConfig::beta2},
      {"weight_decay", &TrainConfig::weight_decay},
      {"warmup_ratio", &TrainConfig::warmup_ratio},
      {"clip_norm", &TrainConfig::clip_norm},
      {"epochs", &TrainConfig::epochs},
      {"batch_size", &TrainConfig::batch_size},
      {"patience", &TrainConfig::patience},
      {"seed", &TrainConfig::seed},
      {"dropout", &TrainConfig::dropout},
      {"max_input_length", &TrainConfig::max_input_length},
      {"max_ans_length", &TrainConfig::max_ans_length},
      {"beams", &TrainConfig::beams},
      {"length_penalty", &TrainConfig::length_penalty},
      {"vocab_size", &TrainConfig::vocab_size},
      {"d_model", &TrainConfig::d_model},
      {"heads", &TrainConfig::heads},
      {"layers", &TrainConfig::layers},
      {"d_ff", &TrainConfig::d_ff},
      {"relative_distance", &TrainConfig::relative_distance},
      {"d_prompt", &TrainConfig::d_prompt},
      {"gen_heads", &TrainConfig::gen_heads},
      {"gen_layers", &TrainConfig::gen_layers},
      {"gen_d_ff", &TrainConfig::gen_d_ff},
      {"gen_max_len", &TrainConfig::gen_max_len},
      {"mlp_hidden", &TrainConfig::mlp_hidden},
      {"kernel", &TrainConfig::kernel},
      {"no_task", &TrainConfig::no_task},
      {"no_domain", &TrainConfig::no_domain},
      {"no_context", &TrainConfig::no_context},
      {"no_idp", &TrainConfig::no_idp},
      {"no_generator", &TrainConfig::no_generator},
      {"random_domains", &TrainConfig::random_domains},
  };
  return kFields;
}

std::string_view trim(std::string_view s) {
  const auto* ws = " \t\r\n";
  auto b = s.find_first_not_of(ws);
  if (b == std::string_view::npos) return {};
  auto e = s.find_last_not_of(ws);
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(std::string_view key, std::string_view text) {
  T value{};
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw ConfigError("config key '" + std::string(key) + "': cannot parse '" + std::string(text) + "'");
  }
  return value;
}

bool parse_bool(std::string_view key, std::string_view text) {
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  throw ConfigError("config key '" + std::string(key) + "': expected true/false, got '" + std::string(text) + "'");
}

}  // namespace

void set_config_value(TrainConfig& cfg, std::string_view key, std::string_view value) {
  key = trim(key);
  value = trim(value);
  for (const Field& f : fields()) {
    if (f.name != key) continue;
    std::visit(
        [&](auto ptr) {
          using T = std::remove_reference_t<decltype(cfg.*ptr)>;
          if constexpr (std::is_same_v<T, bool>) {
            cfg.*ptr = parse_bool(key, value);
          } else if constexpr (std::is_same_v<T, std::string>) {
            cfg.*ptr = std::string(value);
          } else {
            cfg.*ptr = parse_number<T>(key, value);
          }
        },
        f.ptr);
    return;
  }
  throw ConfigError("unknown config key '" + std::string(key) + "'");
}

TrainConfig parse_config(std::string_view text) {
  TrainConfig cfg;
  std::istringstream in{std::string(text)};
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string_view view = line;
    if (auto hash = view.find('#'); hash != std::string_view::npos) view = view.substr(0, hash);
    view = trim(view);
    if (view.empty()) continue;
    auto eq = view.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError("config line " + std::to_string(lineno) + ": expected 'key = value'");
    }
    set_config_value(cfg, view.substr(0, eq), view.substr(eq + 1));
  }
  return cfg;
}

TrainConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string config_text(const TrainConfig& cfg) {
  std::string out;
  for (const Field& f : fields()) {
    std::visit(
        [&](auto ptr) {
          using T = std::remove_reference_t<decltype(cfg.*ptr)>;
          if constexpr (std::is_same_v<T, bool>) {
            out += fmt::format("{} = {}\n", f.name, cfg.*ptr ? "true" : "false");
          } else {
            out += fmt::format("{} = {}\n", f.name, cfg.*ptr);
          }
        },
        f.ptr);
  }
  return out;
}

void save_config(const TrainConfig& cfg, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write config " + path.string());
  out << config_text(cfg);
}

void TrainConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError(msg); };
  if (!(lambda >= 0.0)) fail("lambda must be >= 0");
  if (!(warmup_ratio >= 0.0 && warmup_ratio < 1.0)) fail("warmup_ratio must be in [0, 1)");
  if (!no_task && t < 1) fail("t must be >= 1 unless no_task is set");
  if (!no_domain && rho < 1) fail("rho must be >= 1 unless no_domain is set");
  if (!no_context && kappa < 1) fail("kappa must be >= 1 unless no_context is set");
  if (t < 0 || rho < 0 || kappa < 0) fail("prompt lengths must be >= 0");
  if (n < 1) fail("n must be >= 1");
  if (m < 1) fail("m must be >= 1");
  if (epochs < 1) fail("epochs must be >= 1");
  if (batch_size < 1) fail("batch_size must be >= 1");
  if (patience < 0) fail("patience must be >= 0");
  if (!(lr > 0.0)) fail("lr must be > 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) fail("betas must be in [0, 1)");
  if (!(weight_decay >= 0.0)) fail("weight_decay must be >= 0");
  if (!(dropout >= 0.0 && dropout < 1.0)) fail("dropout must be in [0, 1)");
  if (max_input_length < 1 || max_ans_length < 1) fail("sequence limits must be >= 1");
  if (beams < 1) fail("beams must be >= 1");
  if (vocab_size <= Vocabulary::kReserved) fail("vocab_size must exceed the reserved-token count");
  if (d_model < 1 || heads < 1 || d_model % heads != 0) fail("heads must divide d_model");
  if (d_prompt < 1 || gen_heads < 1 || d_prompt % gen_heads != 0) fail("gen_heads must divide d_prompt");
  if (layers < 1 || gen_layers < 1 || d_ff < 1 || gen_d_ff < 1 || mlp_hidden < 1) fail("model sizes must be >= 1");
  if (gen_max_len < 1) fail("gen_max_len must be >= 1");
  if (relative_distance < 0) fail("relative_distance must be >= 0");
  if (kernel != "linear" && kernel != "rbf") fail("kernel must be 'linear' or 'rbf'");
}

KernelKind TrainConfig::kernel_kind() const {
  return kernel == "rbf" ? KernelKind::kRbf : KernelKind::kLinear;
}

PromptConfig TrainConfig::prompt_config() const {
  PromptConfig p;
  p.task_len = t;
  p.domain_len = rho;
  p.context_len = kappa;
  p.n_domains = n;
  p.d_model = d_model;
  p.layers = layers;
  p.d_prompt = d_prompt;
  p.mlp_hidden = mlp_hidden;
  p.use_task = !no_task;
  p.use_domain = !no_domain;
  p.use_context = !no_context;
  p.use_generator = !no_generator;
  return p;
}

TransformerDims TrainConfig::backbone_dims(int vocab) const {
  return TransformerDims{vocab, d_model, heads, layers, d_ff, relative_distance};
}

TransformerDims TrainConfig::generator_dims(int vocab) const {
  return TransformerDims{vocab, d_prompt, gen_heads, gen_layers, gen_d_ff};
}

// ---- loss, schedule, optimizer ----

double total_loss(double nll, double l_idp, double lambda) { return nll + lambda * l_idp; }

double lr_at(std::int64_t step, std::int64_t total, double lr, double warmup_ratio) {
  if (total <= 0) throw ConfigError("lr schedule needs total_steps > 0");
  if (step < 0 || step > total) throw ConfigError("lr schedule step out of range");
  const auto warmup = static_cast<std::int64_t>(std::ceil(warmup_ratio * static_cast<double>(total)));
  if (step < warmup) return lr * static_cast<double>(step) / static_cast<double>(warmup);
  if (total == warmup) return 0.0;
  return lr * static_cast<double>(total - step) / static_cast<double>(total - warmup);
}

bool AdamW::has_state(const Parameter& p) const {
  return std::any_of(moments_.begin(), moments_.end(), [&](const auto& e) { return e.first == &p; });
}

void AdamW::step(std::span<Parameter* const> params, std::span<const Matrix> grads, double lr) {
  if (params.size() != grads.size()) throw ShapeError("AdamW: parameter/gradient count mismatch");
  ++steps_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(steps_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(steps_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter& p = *params[i];
    if (!p.trainable) continue;
    const Matrix& g = grads[i];
    if (g.rows() != p.value.rows() || g.cols() != p.value.cols()) {
      throw ShapeError("AdamW: gradient shape mismatch for " + p.name);
    }
    auto it = std::find_if(moments_.begin(), moments_.end(), [&](const auto& e) { return e.first == &p; });
    if (it == moments_.end()) {
      moments_.push_back({&p, Moments{Matrix::Zero(g.rows(), g.cols()), Matrix::Zero(g.rows(), g.cols())}});
      it = std::prev(moments_.end());
    }
    Moments& mo = it->second;
    mo.m = beta1_ * mo.m + (1.0 - beta1_) * g;
    mo.v = beta2_ * mo.v + (1.0 - beta2_) * g.cwiseProduct(g);
    auto mhat = mo.m.array() / bc1;
    auto vhat = mo.v.array() / bc2;
    p.value.array() -= lr * (mhat / (vhat.sqrt() + eps_) + wd_ * p.value.array());
  }
}

double clip_global_norm(std::span<Matrix> grads, double max_norm) {
  double sq = 0.0;
  for (const Matrix& g : grads) sq += g.squaredNorm();
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double s = max_norm / norm;
    for (Matrix& g : grads) g *= s;
  }
  return norm;
}

// ---- models ----

std::int64_t FrozenModels::parameter_count() const {
  return backbone.net().parameter_count() + generator.net().parameter_count();
}

std::vector<const Parameter*> FrozenModels::parameters() const {
  auto out = backbone.net().parameters();
  auto gen = generator.net().parameters();
  out.insert(out.end(), gen.begin(), gen.end());
  return out;
}

std::vector<Parameter*> FrozenModels::parameters() {
  auto out = backbone.net().parameters();
  auto gen = generator.net().parameters();
  out.insert(out.end(), gen.begin(), gen.end());
  return out;
}

FrozenModels build_models(std::span<const QAExample> train, const TrainConfig& cfg) {
  cfg.validate();
  std::vector<std::string> texts;
  for (const auto& ex : train) {
    texts.push_back(render_unified(ex));
    for (const auto& g : ex.gold_answers) texts.push_back(to_lower(g));
  }
  FrozenModels models;
  models.vocab = Vocabulary::build(texts, static_cast<std::size_t>(cfg.vocab_size));
  std::uint64_t state = cfg.seed;
  models.backbone = QAModel(cfg.backbone_dims(models.vocab.size()), splitmix64(state));
  models.generator = GeneratorModel(cfg.generator_dims(models.vocab.size()), cfg.gen_max_len, splitmix64(state));
  // Match what an archive round trip would give.
  auto params = models.parameters();
  round_to_f32(params);
  return models;
}

std::vector<EncodedExample> encode_all(std::span<const QAExample> examples, const Vocabulary& vocab,
                                       const TrainConfig& cfg) {
  std::vector<EncodedExample> out;
  out.reserve(examples.size());
  for (const auto& ex : examples) out.push_back(encode(ex, vocab, cfg.max_input_length, cfg.max_ans_length));
  return out;
}

// ---- gradients ----

namespace {

std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
  std::uint64_t s = a ^ (b * 0x9E3779B97F4A7C15ULL);
  return splitmix64(s);
}

bool idp_active(const TrainConfig& cfg, const PairSample& pairs) {
  return !cfg.no_idp && !cfg.no_domain && !pairs.empty();
}

bool all_finite(std::span<const Matrix> ms) {
  return std::all_of(ms.begin(), ms.end(), [](const Matrix& m) { return m.allFinite(); });
}

}  // namespace

std::vector<Matrix> prompt_gradients(const PromptBank& bank, const FrozenModels& models,
                                     std::span<const EncodedExample* const> batch,
                                     const PairSample& pairs, const TrainConfig& cfg,
                                     std::uint64_t step_seed, StepReport* report) {
  if (batch.empty()) throw ShapeError("train step on an empty batch");
  const auto params = bank.parameters();
  const std::size_t b = batch.size();
  std::vector<std::vector<Matrix>> per_example(b);
  std::vector<double> nll(b, 0.0);
  parallel_for(b, [&](std::size_t i) {
    const EncodedExample& ex = *batch[i];
    ag::Tape tape;
    Rng drop_rng(mix(step_seed, i));
    ForwardOptions opts;
    opts.dropout = cfg.dropout;
    opts.rng = &drop_rng;
    AttentionAugmentation aug = build_augmentation(tape, bank, models.generator, ex.context_ids, ex.domain_id, opts);
    ag::Var loss = forward_nll(tape, models.backbone, ex, aug, opts);
    nll[i] = loss.scalar();
    tape.backward(loss, 1.0 / static_cast<double>(b));
    auto& grads = per_example[i];
    grads.reserve(params.size());
    for (const Parameter* p : params) {
      const Matrix* g = tape.grad_of(*p);
      grads.push_back(g != nullptr ? *g : Matrix());
    }
  });

  std::vector<Matrix> grads;
  grads.reserve(params.size());
  for (const Parameter* p : params) grads.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t j = 0; j < params.size(); ++j) {
      if (per_example[i][j].size() != 0) grads[j] += per_example[i][j];
    }
  }

  double idp = 0.0;
  const double lambda = cfg.effective_lambda();
  if (idp_active(cfg, pairs)) {
    ag::Tape tape(lambda > 0.0);
    std::vector<ag::Var> prompts;
    for (const Parameter& d : bank.domain_prompts()) prompts.push_back(tape.param(d));
    ag::Var l = ag::l_idp(prompts, pairs, cfg.kernel_kind());
    idp = l.scalar();
    if (lambda > 0.0) {
      tape.backward(l, lambda);
      for (std::size_t j = 0; j < params.size(); ++j) {
        if (const Matrix* g = tape.grad_of(*params[j])) grads[j] += *g;
      }
    }
  }

  if (report != nullptr) {
    report->nll = std::accumulate(nll.begin(), nll.end(), 0.0) / static_cast<double>(b);
    report->idp = idp;
    report->total = total_loss(report->nll, idp, lambda);
    report->pairs = idp_active(cfg, pairs) ? pairs.size() : 0;
  }
  return grads;
}

double batch_objective(const PromptBank& bank, const FrozenModels& models,
                       std::span<const EncodedExample* const> batch, const PairSample& pairs,
                       const TrainConfig& cfg) {
  double nll = 0.0;
  for (const EncodedExample* ex : batch) {
    ag::Tape tape(false);
    AttentionAugmentation aug = build_augmentation(tape, bank, models.generator, ex->context_ids, ex->domain_id);
    nll += forward_nll(tape, models.backbone, *ex, aug).scalar();
  }
  nll /= static_cast<double>(batch.size());
  double idp = 0.0;
  if (idp_active(cfg, pairs)) {
    std::vector<Matrix> prompts = domain_prompt_values(bank);
    idp = l_idp(prompts, pairs, cfg.kernel_kind());
  }
  return total_loss(nll, idp, cfg.effective_lambda());
}

StepReport train_step(PromptBank& bank, const FrozenModels& models,
                      std::span<const EncodedExample* const> batch, const PairSample& pairs,
                      const TrainConfig& cfg, AdamW& opt, double lr, std::uint64_t step_seed) {
  StepReport report;
  std::vector<Matrix> grads = prompt_gradients(bank, models, batch, pairs, cfg, step_seed, &report);
  if (!std::isfinite(report.total) || !all_finite(grads)) {
    throw NumericError(fmt::format("non-finite loss or gradient (nll={}, idp={}, total={}); step aborted",
                                   report.nll, report.idp, report.total));
  }
  report.grad_norm = clip_global_norm(grads, cfg.clip_norm);
  auto params = bank.parameters();
  opt.step(params, grads, lr);
  return report;
}

// ---- evaluation ----

std::vector<ScoredPrediction> predict(const PromptBank* bank, const FrozenModels& models,
                                      std::span<const QAExample> examples, const TrainConfig& cfg) {
  std::vector<ScoredPrediction> out(examples.size());
  BeamOptions beam;
  beam.beams = cfg.beams;
  beam.min_len = 1;
  beam.max_len = cfg.max_ans_length;
  beam.length_penalty = cfg.length_penalty;
  parallel_for(examples.size(), [&](std::size_t i) {
    const QAExample& ex = examples[i];
    EncodedExample enc = encode(ex, models.vocab, cfg.max_input_length, cfg.max_ans_length);
    ag::Tape tape(false);
    AttentionAugmentation aug;
    if (bank != nullptr) aug = build_augmentation(tape, *bank, models.generator, enc.context_ids, enc.domain_id);
    std::vector<int> ids = generate(tape, models.backbone, enc.input_ids, aug, beam);
    out[i] = score_prediction(ex, detokenize(ids, models.vocab));
  });
  return out;
}

std::string metrics_json_line(const EpochMetrics& m) {
  nlohmann::ordered_json j;
  j["epoch"] = m.epoch;
  j["train_nll"] = m.train_nll;
  j["train_idp"] = m.train_idp;
  j["val_metric"] = m.val_metric;
  j["mean_cka"] = m.mean_cka ? nlohmann::ordered_json(*m.mean_cka) : nlohmann::ordered_json(nullptr);
  return j.dump();
}

// ---- training loops ----

namespace {

std::string format_breakdown(const MetricSummary& s) {
  std::string out;
  for (const auto& [tag, v] : s.primary_by_format) out += fmt::format(" {}={:.3f}", tag, v);
  return out;
}

std::vector<Matrix> snapshot(std::span<const Parameter* const> params) {
  std::vector<Matrix> out;
  for (const Parameter* p : params) out.push_back(p->value);
  return out;
}

void restore(std::span<Parameter* const> params, const std::vector<Matrix>& values) {
  for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = values[i];
}

std::ofstream open_log(const std::filesystem::path& path) {
  std::ofstream out;
  if (path.empty()) return out;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  out.open(path, std::ios::trunc);
  if (!out) throw DataError("cannot write metrics log " + path.string());
  return out;
}

}  // namespace

TrainResult train(std::span<const QAExample> train_set, std::span<const QAExample> val_set,
                  const FrozenModels& models, const TrainConfig& cfg, const TrainOutputs& outputs) {
  cfg.validate();
  if (train_set.empty()) throw ConfigError("training split is empty");
  if (val_set.empty()) throw ConfigError("validation split is missing or empty");
  for (const auto& ex : train_set) {
    if (!ex.domain_id) throw DataError("example '" + ex.id + "' has no domain id; run clustering first");
    validate(ex, cfg.n);
  }
  for (const auto& ex : val_set) {
    if (!ex.domain_id) throw DataError("example '" + ex.id + "' has no domain id; run clustering first");
    validate(ex, cfg.n);
  }

  const std::vector<EncodedExample> encoded = encode_all(train_set, models.vocab, cfg);
  std::uint64_t state = cfg.seed;
  TrainResult result;
  result.bank = init_prompts(cfg.prompt_config(), models.generator, splitmix64(state));
  PromptBank& bank = result.bank;
  result.trainable_count = bank.parameter_count();
  result.frozen_count = models.parameter_count();
  Rng data_rng(splitmix64(state));
  Rng pair_rng(splitmix64(state));
  const std::uint64_t step_base = splitmix64(state);

  AdamW opt(cfg.beta1, cfg.beta2, cfg.weight_decay);
  const auto b = static_cast<std::size_t>(cfg.batch_size);
  const std::int64_t steps_per_epoch = static_cast<std::int64_t>((encoded.size() + b - 1) / b);
  const std::int64_t total_steps = steps_per_epoch * cfg.epochs;
  const bool cka_tracked = !cfg.no_domain && cfg.n >= 2;

  std::ofstream log = open_log(outputs.metrics_log);
  auto params = bank.parameters();
  std::vector<Matrix> best = snapshot(std::vector<const Parameter*>(params.begin(), params.end()));
  int since_best = 0;
  std::int64_t step = 0;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::vector<std::size_t> order(encoded.size());
    std::iota(order.begin(), order.end(), 0);
    shuffle(order, data_rng);
    double nll_sum = 0.0, idp_sum = 0.0;
    for (std::int64_t s = 0; s < steps_per_epoch; ++s) {
      std::vector<const EncodedExample*> batch;
      for (std::size_t k = static_cast<std::size_t>(s) * b; k < std::min(order.size(), (static_cast<std::size_t>(s) + 1) * b); ++k) {
        batch.push_back(&encoded[order[k]]);
      }
      PairSample pairs;
      if (!cfg.no_domain && cfg.n >= 2) pairs = sample_pairs(cfg.n, cfg.m, pair_rng);
      const double lr = lr_at(step, total_steps, cfg.lr, cfg.warmup_ratio);
      StepReport rep = train_step(bank, models, batch, pairs, cfg, opt, lr, mix(step_base, static_cast<std::uint64_t>(step)));
      nll_sum += rep.nll;
      idp_sum += rep.idp;
      ++step;
    }

    EpochMetrics em;
    em.epoch = epoch;
    em.train_nll = nll_sum / static_cast<double>(steps_per_epoch);
    em.train_idp = idp_sum / static_cast<double>(steps_per_epoch);
    const auto scored = predict(&bank, models, val_set, cfg);
    const MetricSummary summary = summarize(scored);
    em.val_metric = summary.primary;
    em.val_em = summary.exact_match;
    if (cka_tracked) em.mean_cka = mean_pairwise_cka(domain_prompt_values(bank), cfg.kernel_kind());
    result.history.push_back(em);
    if (log.is_open()) log << metrics_json_line(em) << '\n' << std::flush;
    spdlog::info("epoch {}: nll {:.4f} idp {:.4f} val {:.4f} em {:.4f} ({})", epoch, em.train_nll, em.train_idp,
                 em.val_metric, em.val_em, format_breakdown(summary));

    if (em.val_metric > result.best_val_metric) {
      result.best_val_metric = em.val_metric;
      result.best_val_em = em.val_em;
      result.best_epoch = epoch;
      result.best_mean_cka = em.mean_cka;
      best = snapshot(std::vector<const Parameter*>(params.begin(), params.end()));
      since_best = 0;
      if (!outputs.checkpoint_dir.empty()) {
        save_checkpoint(outputs.checkpoint_dir, cfg, models, bank, outputs.domains);
      }
    } else if (cfg.patience > 0 && ++since_best >= cfg.patience) {
      spdlog::info("no improvement for {} epochs; stopping", since_best);
      break;
    }
    if (result.best_val_metric >= 1.0 && cfg.patience > 0) break;
  }
  restore(params, best);
  result.steps = step;
  return result;
}

PretrainResult pretrain_backbone(FrozenModels& models, std::span<const QAExample> train_set,
                                 std::span<const QAExample> val_set, const TrainConfig& cfg,
                                 const std::filesystem::path& metrics_log) {
  cfg.validate();
  if (train_set.empty() || val_set.empty()) throw ConfigError("pretraining needs train and validation splits");
  const std::vector<EncodedExample> encoded = encode_all(train_set, models.vocab, cfg);
  Seq2SeqTransformer& net = models.backbone.net();
  net.set_trainable(true);
  auto params = net.parameters();
  std::vector<const Parameter*> cparams(params.begin(), params.end());

  std::uint64_t state = cfg.seed;
  Rng data_rng(splitmix64(state));
  const std::uint64_t step_base = splitmix64(state);
  AdamW opt(cfg.beta1, cfg.beta2, cfg.weight_decay);
  const auto b = static_cast<std::size_t>(cfg.batch_size);
  const std::int64_t steps_per_epoch = static_cast<std::int64_t>((encoded.size() + b - 1) / b);
  const std::int64_t total_steps = steps_per_epoch * cfg.epochs;

  std::ofstream log = open_log(metrics_log);
  PretrainResult result;
  result.best_val_em = -1.0;
  std::vector<Matrix> best = snapshot(cparams);
  int since_best = 0;
  std::int64_t step = 0;
  const AttentionAugmentation none;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::vector<std::size_t> order(encoded.size());
    std::iota(order.begin(), order.end(), 0);
    shuffle(order, data_rng);
    double nll_sum = 0.0;
    for (std::int64_t s = 0; s < steps_per_epoch; ++s) {
      const std::size_t lo = static_cast<std::size_t>(s) * b;
      const std::size_t hi = std::min(order.size(), lo + b);
      const std::size_t count = hi - lo;
      std::vector<std::vector<Matrix>> per_example(count);
      std::vector<double> nll(count);
      const std::uint64_t step_seed = mix(step_base, static_cast<std::uint64_t>(step));
      parallel_for(count, [&](std::size_t i) {
        const EncodedExample& ex = encoded[order[lo + i]];
        ag::Tape tape;
        Rng drop_rng(mix(step_seed, i));
        ForwardOptions opts;
        opts.dropout = cfg.dropout;
        opts.rng = &drop_rng;
        ag::Var loss = forward_nll(tape, models.backbone, ex, none, opts);
        nll[i] = loss.scalar();
        tape.backward(loss, 1.0 / static_cast<double>(count));
        for (const Parameter* p : cparams) {
          const Matrix* g = tape.grad_of(*p);
          per_example[i].push_back(g != nullptr ? *g : Matrix());
        }
      });
      std::vector<Matrix> grads;
      for (const Parameter* p : cparams) grads.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
      for (std::size_t i = 0; i < count; ++i) {
        for (std::size_t j = 0; j < grads.size(); ++j) {
          if (per_example[i][j].size() != 0) grads[j] += per_example[i][j];
        }
      }
      const double mean_nll = std::accumulate(nll.begin(), nll.end(), 0.0) / static_cast<double>(count);
      if (!std::isfinite(mean_nll) || !all_finite(grads)) {
        throw NumericError(fmt::format("pretraining: non-finite loss {} at step {}", mean_nll, step));
      }
      clip_global_norm(grads, cfg.clip_norm);
      opt.step(params, grads, lr_at(step, total_steps, cfg.lr, cfg.warmup_ratio));
      nll_sum += mean_nll;
      ++step;
    }
    EpochMetrics em;
    em.epoch = epoch;
    em.train_nll = nll_sum / static_cast<double>(steps_per_epoch);
    const MetricSummary summary = summarize(predict(nullptr, models, val_set, cfg));
    em.val_metric = summary.primary;
    em.val_em = summary.exact_match;
    result.history.push_back(em);
    if (log.is_open()) log << metrics_json_line(em) << '\n' << std::flush;
    spdlog::info("pretrain epoch {}: nll {:.4f} val {:.4f} em {:.4f} ({})", epoch, em.train_nll, em.val_metric,
                 em.val_em, format_breakdown(summary));
    if (em.val_em > result.best_val_em) {
      result.best_val_em = em.val_em;
      result.best_epoch = epoch;
      best = snapshot(cparams);
      since_best = 0;
    } else if (cfg.patience > 0 && ++since_best >= cfg.patience) {
      break;
    }
    if (result.best_val_em >= 1.0 && cfg.patience > 0) break;
  }
  restore(params, best);
  round_to_f32(params);
  net.set_trainable(false);
  return result;
}

DomainModel prepare_domains(std::vector<QAExample>& train_set, std::vector<QAExample>& val_set,
                            const TrainConfig& cfg) {
  std::uint64_t state = cfg.seed ^ 0xD0D0D0D0ULL;
  const std::uint64_t seed = splitmix64(state);
  DomainModel dm = cfg.random_domains ? random_domains(train_set, cfg.n, seed) : cluster_contexts(train_set, cfg.n, seed);
  apply_domains(train_set, dm);
  apply_domains(val_set, dm);
  return dm;
}

// ---- artifacts ----

namespace {

void write_params(const std::filesystem::path& path, const std::vector<const Parameter*>& params) {
  write_archive(path, params);
}

}  // namespace

void save_frozen(const std::filesystem::path& dir, const FrozenModels& models, const TrainConfig& cfg) {
  std::filesystem::create_directories(dir);
  write_params(dir / "model.bin", models.parameters());
  models.vocab.save(dir / "vocab.json");
  save_config(cfg, dir / "config.cfg");
}

namespace {

FrozenModels frozen_from(const TrainConfig& cfg, Vocabulary vocab, std::span<const NamedTensor> tensors) {
  FrozenModels models;
  models.vocab = std::move(vocab);
  models.backbone = QAModel(cfg.backbone_dims(models.vocab.size()), 0);
  models.generator = GeneratorModel(cfg.generator_dims(models.vocab.size()), cfg.gen_max_len, 0);
  auto params = models.parameters();
  assign_tensors(tensors, params);
  return models;
}

}  // namespace

FrozenModels load_frozen(const std::filesystem::path& dir) {
  const TrainConfig cfg = load_config(dir / "config.cfg");
  const auto tensors = read_archive(dir / "model.bin");
  return frozen_from(cfg, Vocabulary::load(dir / "vocab.json"), tensors);
}

void save_checkpoint(const std::filesystem::path& dir, const TrainConfig& cfg, const FrozenModels& models,
                     const PromptBank& bank, const DomainModel* domains) {
  std::filesystem::create_directories(dir);
  std::vector<const Parameter*> params = bank.parameters();
  auto frozen = models.parameters();
  params.insert(params.end(), frozen.begin(), frozen.end());
  write_params(dir / "model.bin", params);
  save_config(cfg, dir / "config.cfg");
  models.vocab.save(dir / "vocab.json");
  if (domains != nullptr) domains->save(dir / "domains.json");
}

Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  Checkpoint ck;
  ck.cfg = load_config(dir / "config.cfg");
  ck.cfg.validate();
  const auto tensors = read_archive(dir / "model.bin");
  ck.models = frozen_from(ck.cfg, Vocabulary::load(dir / "vocab.json"), tensors);
  std::uint64_t state = ck.cfg.seed;
  ck.bank = init_prompts(ck.cfg.prompt_config(), ck.models.generator, splitmix64(state));
  auto params = ck.bank.parameters();
  assign_tensors(tensors, params);
  if (std::filesystem::exists(dir / "domains.json")) ck.domains = DomainModel::load(dir / "domains.json");
  return ck;
}

// ---- ablations and sweeps ----

std::vector<TrainConfig> ablation_configs(const TrainConfig& base, std::vector<std::string>* names) {
  std::vector<TrainConfig> out(5, base);
  out[1].no_domain = true;
  out[2].no_context = true;
  out[3].no_idp = true;
  out[4].no_generator = true;
  if (names != nullptr) *names = {"full", "w/o d", "w/o c", "w/o idp", "w/o PG"};
  return out;
}

std::vector<ResultRow> run_configs(std::span<const TrainConfig> configs, std::span<const std::string> names,
                                   std::span<const QAExample> train_set, std::span<const QAExample> val_set,
                                   const FrozenModels& models) {
  if (configs.size() != names.size()) throw ConfigError("run_configs: names and configs differ in count");
  std::vector<ResultRow> rows;
  for (std::size_t i = 0; i < configs.size(); ++i) {
    std::vector<QAExample> tr(train_set.begin(), train_set.end());
    std::vector<QAExample> va(val_set.begin(), val_set.end());
    prepare_domains(tr, va, configs[i]);
    spdlog::info("run '{}'", names[i]);
    TrainResult r = train(tr, va, models, configs[i]);
    rows.push_back(ResultRow{names[i], configs[i], r.best_val_metric, r.best_val_em, r.best_mean_cka, r.best_epoch});
  }
  return rows;
}

std::vector<double> default_sweep_grid(std::string_view field) {
  if (field == "lambda") return {1.0, 1e-1, 1e-2, 1e-3, 1e-4, 1e-5};
  if (field == "m") return {1, 3, 5, 10, 15};
  if (field == "n") return {3, 6, 9};
  if (field == "rho") return {5, 10, 20, 30};
  if (field == "kappa") return {20, 40, 60, 80};
  throw ConfigError("no sweep over '" + std::string(field) + "'; use lambda, m, n, rho or kappa");
}

std::vector<TrainConfig> sweep_configs(const TrainConfig& base, std::string_view field,
                                       std::span<const double> values, std::vector<std::string>* names) {
  std::vector<TrainConfig> out;
  if (names != nullptr) names->clear();
  for (double v : values) {
    TrainConfig c = base;
    if (field == "lambda") {
      c.lambda = v;
    } else if (field == "m" || field == "n" || field == "rho" || field == "kappa") {
      const int iv = static_cast<int>(std::lround(v));
      if (field == "m") c.m = iv;
      if (field == "n") c.n = iv;
      if (field == "rho") c.rho = iv;
      if (field == "kappa") c.kappa = iv;
    } else {
      throw ConfigError("no sweep over '" + std::string(field) + "'; use lambda, m, n, rho or kappa");
    }
    c.validate();
    out.push_back(c);
    if (names != nullptr) names->push_back(fmt::format("{}={}", field, v));
  }
  return out;
}

std::string results_table(std::span<const ResultRow> rows) {
  std::string out = "| config | val_metric | val_em | mean_cka | best_epoch |\n|---|---|---|---|---|\n";
  for (const auto& r : rows) {
    out += fmt::format("| {} | {:.4f} | {:.4f} | {} | {} |\n", r.name, r.val_metric, r.val_em,
                       r.mean_cka ? fmt::format("{:.6f}", *r.mean_cka) : std::string("-"), r.best_epoch);
  }
  return out;
}

}  // namespace mprompt
