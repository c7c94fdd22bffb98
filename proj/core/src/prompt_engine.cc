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

#include "mprompt/prompt_engine.h"

#include <algorithm>
#include <stdexcept>

#include "mprompt/errors.h"
#include "mprompt/qa_data.h"
#include "mprompt/rng.h"

namespace mprompt {

std::string_view attn_class_name(AttnClass c) {
  switch (c) {
    case AttnClass::kEncoderSelf:
      return "enc_self";
    case AttnClass::kDecoderSelf:
      return "dec_self";
    case AttnClass::kDecoderCross:
      return "dec_cross";
  }
  return "enc_self";
}

// ---- ReparamMLP ----

namespace {

constexpr double kInitRange = 0.08;

Matrix uniform_matrix(Rng& rng, int rows, int cols) {
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = uniform(rng, -kInitRange, kInitRange);
  return m;
}

}  // namespace

ReparamMLP::ReparamMLP(const std::string& name, int in, int hidden, int out, Rng& rng)
    : w1_(name + ".w1", uniform_matrix(rng, in, hidden), true),
      b1_(name + ".b1", Matrix::Zero(1, hidden), true),
      w2_(name + ".w2", uniform_matrix(rng, hidden, out), true),
      b2_(name + ".b2", Matrix::Zero(1, out), true) {}

ag::Var ReparamMLP::forward(ag::Tape& tape, ag::Var x) const {
  ag::Var h = ag::tanh(ag::add_row(ag::matmul(x, tape.param(w1_)), tape.param(b1_)));
  return ag::add_row(ag::matmul(h, tape.param(w2_)), tape.param(b2_));
}

std::int64_t ReparamMLP::parameter_count() const {
  return w1_.size() + b1_.size() + w2_.size() + b2_.size();
}

PromptKVStack split_kv(ag::Var flat, int layers, int d_model) {
  if (flat.cols() != 2L * d_model * layers) {
    throw ShapeError("split_kv: expected width 2dL = " + std::to_string(2 * d_model * layers) +
                     ", got " + std::to_string(flat.cols()));
  }
  PromptKVStack stack;
  for (int l = 0; l < layers; ++l) {
    stack.push_back(LayerKV{ag::slice_cols(flat, 2L * d_model * l, d_model),
                            ag::slice_cols(flat, 2L * d_model * l + d_model, d_model)});
  }
  return stack;
}

// ---- census ----

std::int64_t trainable_census(const PromptConfig& cfg) {
  const std::int64_t kv_width = 2L * cfg.d_model * cfg.layers;
  std::int64_t total = 0;
  if (cfg.use_task) {
    total += 3 * (static_cast<std::int64_t>(cfg.task_len) * cfg.d_model +
                  ReparamMLP::count(cfg.d_model, cfg.mlp_hidden, static_cast<int>(kv_width)));
  }
  total += static_cast<std::int64_t>(cfg.n_domains) * cfg.effective_domain_len() * cfg.d_prompt;
  total += static_cast<std::int64_t>(cfg.effective_context_len()) * cfg.d_prompt;
  if (cfg.has_prompt_path()) {
    total += ReparamMLP::count(cfg.d_prompt, cfg.mlp_hidden, static_cast<int>(kv_width));
  }
  return total;
}

// ---- PromptBank ----

std::vector<Parameter*> PromptBank::parameters() {
  std::vector<Parameter*> out;
  if (cfg_.use_task) {
    for (int c = 0; c < 3; ++c) {
      out.push_back(&task_prompt_[c]);
      for (Parameter* p : task_mlp_[c].parameters()) out.push_back(p);
    }
  }
  if (cfg_.use_domain) {
    for (Parameter& d : domain_) out.push_back(&d);
  }
  if (cfg_.use_context) out.push_back(&context_);
  if (cfg_.has_prompt_path()) {
    for (Parameter* p : out_mlp_.parameters()) out.push_back(p);
  }
  return out;
}

std::vector<const Parameter*> PromptBank::parameters() const {
  auto mut = const_cast<PromptBank*>(this)->parameters();
  return {mut.begin(), mut.end()};
}

std::int64_t PromptBank::parameter_count() const {
  std::int64_t n = 0;
  for (const Parameter* p : parameters()) n += p->size();
  return n;
}

PromptBank init_prompts(const PromptConfig& cfg, const GeneratorModel& generator,
                        std::uint64_t seed) {
  if (cfg.n_domains < 1) throw ConfigError("n_domains must be >= 1");
  if (cfg.use_task && cfg.task_len < 1) throw ConfigError("task prompt length t must be >= 1");
  if (cfg.use_domain && cfg.domain_len < 1) throw ConfigError("domain prompt length rho must be >= 1");
  if (cfg.use_context && cfg.context_len < 1) {
    throw ConfigError("context prompt length kappa must be >= 1");
  }
  if (cfg.d_prompt != generator.d_model()) {
    throw ConfigError("d_prompt must equal the generator width");
  }
  if (cfg.effective_domain_len() + cfg.effective_context_len() > generator.max_len()) {
    throw ConfigError("rho + kappa exceeds the generator's maximum decoder length");
  }
  const int vocab = generator.net().dims().vocab_size;
  if (vocab <= Vocabulary::kReserved) throw ConfigError("generator vocabulary has no ordinary tokens");

  Rng rng(seed);
  auto sample_row = [&]() {
    int id = Vocabulary::kReserved +
             static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(vocab - Vocabulary::kReserved)));
    return generator.embedded_token(id);
  };
  auto sampled_matrix = [&](int rows, int width) {
    Matrix m(rows, width);
    for (int r = 0; r < rows; ++r) {
      int filled = 0;
      while (filled < width) {
        Eigen::RowVectorXd e = sample_row();
        int take = std::min<int>(static_cast<int>(e.size()), width - filled);
        m.row(r).segment(filled, take) = e.head(take);
        filled += take;
      }
    }
    return m;
  };

  PromptBank bank;
  bank.cfg_ = cfg;
  const int kv_width = 2 * cfg.d_model * cfg.layers;
  for (AttnClass c : kAttnClasses) {
    const auto i = static_cast<std::size_t>(c);
    const std::string base = "task_prefix." + std::string(attn_class_name(c));
    const int rows = cfg.use_task ? cfg.task_len : 0;
    bank.task_prompt_[i] = Parameter(base + ".prompt", sampled_matrix(rows, cfg.d_model), true);
    bank.task_mlp_[i] = ReparamMLP(base + ".mlp", cfg.d_model, cfg.mlp_hidden, kv_width, rng);
  }
  for (int j = 0; j < cfg.n_domains; ++j) {
    bank.domain_.emplace_back("domain_prompt." + std::to_string(j),
                              sampled_matrix(cfg.effective_domain_len(), cfg.d_prompt), true);
  }
  bank.context_ = Parameter("context_prompt", sampled_matrix(cfg.effective_context_len(), cfg.d_prompt), true);
  bank.out_mlp_ = ReparamMLP("gen_mlp", cfg.d_prompt, cfg.mlp_hidden, kv_width, rng);
  return bank;
}

PromptKVStack task_prefix_kv(ag::Tape& tape, const PromptBank& bank, AttnClass cls) {
  const PromptConfig& cfg = bank.config();
  if (!cfg.use_task) return {};
  ag::Var flat = bank.task_mlp(cls).forward(tape, tape.param(bank.task_prompt(cls)));
  return split_kv(flat, cfg.layers, cfg.d_model);
}

ag::Var compose_decoder_input(ag::Tape& tape, const PromptBank& bank, int domain_id) {
  const PromptConfig& cfg = bank.config();
  if (domain_id < 0 || domain_id >= cfg.n_domains) {
    throw std::out_of_range("domain id " + std::to_string(domain_id) + " not in [0, " +
                            std::to_string(cfg.n_domains) + ")");
  }
  std::vector<ag::Var> parts;
  if (cfg.use_domain) parts.push_back(tape.param(bank.domain_prompts()[static_cast<std::size_t>(domain_id)]));
  if (cfg.use_context) parts.push_back(tape.param(bank.context_prompt()));
  if (parts.empty()) throw ConfigError("compose_decoder_input: domain and context prompts both disabled");
  if (parts.size() == 1) return parts.front();
  return ag::concat_rows(parts);
}

PromptKVStack generate_prompt_kv(ag::Tape& tape, const PromptBank& bank,
                                 const GeneratorModel& generator,
                                 std::span<const int> context_ids, ag::Var x,
                                 const ForwardOptions& opts) {
  const PromptConfig& cfg = bank.config();
  ag::Var rows = cfg.use_generator ? generator.prompt_states(tape, context_ids, x, opts) : x;
  return split_kv(bank.output_mlp().forward(tape, rows), cfg.layers, cfg.d_model);
}

AttentionAugmentation build_augmentation(ag::Tape& tape, const PromptBank& bank,
                                         const GeneratorModel& generator,
                                         std::span<const int> context_ids, int domain_id,
                                         const ForwardOptions& opts) {
  const PromptConfig& cfg = bank.config();
  AttentionAugmentation aug;
  if (cfg.use_task) {
    aug.encoder_self.push_back(task_prefix_kv(tape, bank, AttnClass::kEncoderSelf));
    aug.decoder_self.push_back(task_prefix_kv(tape, bank, AttnClass::kDecoderSelf));
    aug.decoder_cross.push_back(task_prefix_kv(tape, bank, AttnClass::kDecoderCross));
  }
  if (cfg.has_prompt_path()) {
    ag::Var x = compose_decoder_input(tape, bank, domain_id);
    aug.encoder_self.push_back(generate_prompt_kv(tape, bank, generator, context_ids, x, opts));
  }
  return aug;
}

std::vector<Matrix> domain_prompt_values(const PromptBank& bank) {
  std::vector<Matrix> out;
  if (!bank.config().use_domain) return out;
  for (const Parameter& p : bank.domain_prompts()) out.push_back(p.value);
  return out;
}

}  // namespace mprompt
