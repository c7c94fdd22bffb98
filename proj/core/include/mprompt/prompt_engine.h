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

// All trainable prompt state and the two paths that turn it into per-layer
// key/value prefixes for the backbone:
//
//   task path       P_cls --MLP_cls--> T_cls        (one per attention class)
//   generator path  X = [D_j ; C] --generator(context)--> MLP --> P
//
// With the generator switched off, X goes straight through the output MLP.

#ifndef MPROMPT_PROMPT_ENGINE_H_
#define MPROMPT_PROMPT_ENGINE_H_

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mprompt/autograd.h"
#include "mprompt/generator.h"
#include "mprompt/transformer.h"

namespace mprompt {

enum class AttnClass { kEncoderSelf = 0, kDecoderSelf = 1, kDecoderCross = 2 };
inline constexpr std::array<AttnClass, 3> kAttnClasses = {
    AttnClass::kEncoderSelf, AttnClass::kDecoderSelf, AttnClass::kDecoderCross};
std::string_view attn_class_name(AttnClass c);

/// Two affine maps with tanh between them.
class ReparamMLP {
 public:
  ReparamMLP() = default;
  /// Weights uniform in [-0.08, 0.08], biases zero.
  ReparamMLP(const std::string& name, int in, int hidden, int out, Rng& rng);

  ag::Var forward(ag::Tape& tape, ag::Var x) const;
  int in() const { return static_cast<int>(w1_.value.rows()); }
  int out() const { return static_cast<int>(w2_.value.cols()); }

  std::vector<Parameter*> parameters() { return {&w1_, &b1_, &w2_, &b2_}; }
  std::vector<const Parameter*> parameters() const { return {&w1_, &b1_, &w2_, &b2_}; }
  std::int64_t parameter_count() const;

  static std::int64_t count(int in, int hidden, int out) {
    return static_cast<std::int64_t>(in) * hidden + hidden + static_cast<std::int64_t>(hidden) * out + out;
  }

 private:
  Parameter w1_, b1_, w2_, b2_;
};

/// Splits a rows x 2dL matrix into L (key, value) pairs of rows x d. Column
/// layout per layer l: [K_l | V_l] at offset 2dl.
PromptKVStack split_kv(ag::Var flat, int layers, int d_model);

struct PromptConfig {
  int task_len = 10;      // t
  int domain_len = 10;    // rho
  int context_len = 60;   // kappa
  int n_domains = 3;      // n
  int d_model = 64;       // backbone width d
  int layers = 2;         // backbone depth L
  int d_prompt = 32;      // generator width d_p
  int mlp_hidden = 64;
  bool use_task = true;
  bool use_domain = true;
  bool use_context = true;
  bool use_generator = true;

  int effective_domain_len() const { return use_domain ? domain_len : 0; }
  int effective_context_len() const { return use_context ? context_len : 0; }
  bool has_prompt_path() const { return effective_domain_len() + effective_context_len() > 0; }
};

/// Closed-form trainable-parameter census:
/// 3 (|P_cls| + |MLP_cls|) + n rho d_p + kappa d_p + |output MLP|.
std::int64_t trainable_census(const PromptConfig& cfg);

class PromptBank {
 public:
  PromptBank() = default;
  PromptBank(const PromptBank&) = delete;
  PromptBank& operator=(const PromptBank&) = delete;
  PromptBank(PromptBank&&) = default;
  PromptBank& operator=(PromptBank&&) = default;

  const PromptConfig& config() const { return cfg_; }

  const Parameter& task_prompt(AttnClass c) const { return task_prompt_[static_cast<int>(c)]; }
  const ReparamMLP& task_mlp(AttnClass c) const { return task_mlp_[static_cast<int>(c)]; }
  const std::vector<Parameter>& domain_prompts() const { return domain_; }
  const Parameter& context_prompt() const { return context_; }
  const ReparamMLP& output_mlp() const { return out_mlp_; }

  /// Every trainable tensor, in a fixed order.
  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;
  std::int64_t parameter_count() const;

  friend PromptBank init_prompts(const PromptConfig& cfg, const GeneratorModel& generator,
                                 std::uint64_t seed);

 private:
  PromptConfig cfg_;
  std::array<Parameter, 3> task_prompt_;
  std::array<ReparamMLP, 3> task_mlp_;
  std::vector<Parameter> domain_;
  Parameter context_;
  ReparamMLP out_mlp_;
};

/// Seeds every domain/context prompt row with a sampled generator token
/// embedding; task prompt rows are built from concatenated samples cut to
/// width d. Throws ConfigError for lengths the generator cannot take.
PromptBank init_prompts(const PromptConfig& cfg, const GeneratorModel& generator,
                        std::uint64_t seed);

/// MLP_cls(P_cls) as L pairs of t x d. Empty stack when task prompts are off.
PromptKVStack task_prefix_kv(ag::Tape& tape, const PromptBank& bank, AttnClass cls);

/// [D_domain ; C] with ablated parts left out. Throws std::out_of_range for
/// a bad domain id.
ag::Var compose_decoder_input(ag::Tape& tape, const PromptBank& bank, int domain_id);

/// P = MLP(generator(context, X)) as L pairs of (rho + kappa) x d. With the
/// generator switched off, P = MLP(X).
PromptKVStack generate_prompt_kv(ag::Tape& tape, const PromptBank& bank,
                                 const GeneratorModel& generator,
                                 std::span<const int> context_ids, ag::Var x,
                                 const ForwardOptions& opts = {});

/// Full augmentation for one example: encoder self gets [T_E ; P], decoder
/// self T_Dm, decoder cross T_Dc.
AttentionAugmentation build_augmentation(ag::Tape& tape, const PromptBank& bank,
                                         const GeneratorModel& generator,
                                         std::span<const int> context_ids, int domain_id,
                                         const ForwardOptions& opts = {});

/// Domain prompt values, for independence diagnostics.
std::vector<Matrix> domain_prompt_values(const PromptBank& bank);

}  // namespace mprompt

#endif  // MPROMPT_PROMPT_ENGINE_H_
