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

#ifndef MPROMPT_GENERATOR_H_
#define MPROMPT_GENERATOR_H_

#include <span>

#include "mprompt/transformer.h"

namespace mprompt {

/// Small frozen encoder-decoder that turns a context plus a prompt matrix
/// into prompt hidden states. In prompt mode its decoder skips the token
/// embedding layer and reads the prompt rows directly with full
/// (non-causal) self-attention. Parameters are named "generator.*".
class GeneratorModel {
 public:
  GeneratorModel() = default;
  GeneratorModel(TransformerDims dims, int max_len, std::uint64_t seed)
      : net_("generator", dims, seed), max_len_(max_len) {}

  Seq2SeqTransformer& net() { return net_; }
  const Seq2SeqTransformer& net() const { return net_; }
  int d_model() const { return net_.dims().d_model; }
  /// Longest context the encoder reads and longest prompt the decoder takes.
  int max_len() const { return max_len_; }

  /// Row `id` of the token embedding table.
  Eigen::RowVectorXd embedded_token(int id) const;

  /// Encoder over `context_ids` (truncated to max_len with a warning),
  /// decoder over `prompt_rows` (rows x d_model). Returns rows x d_model.
  ag::Var prompt_states(ag::Tape& tape, std::span<const int> context_ids, ag::Var prompt_rows,
                        const ForwardOptions& opts = {}) const;

 private:
  Seq2SeqTransformer net_;
  int max_len_ = 64;
};

}  // namespace mprompt

#endif  // MPROMPT_GENERATOR_H_
