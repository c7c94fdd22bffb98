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

// The frozen generative QA model: teacher-forced NLL and beam decoding, both
// with key/value prompt prefixes in every attention.

#ifndef MPROMPT_BACKBONE_H_
#define MPROMPT_BACKBONE_H_

#include <functional>
#include <span>
#include <vector>

#include "mprompt/qa_data.h"
#include "mprompt/transformer.h"

namespace mprompt {

/// Backbone QA model. Parameters are named "backbone.*".
class QAModel {
 public:
  QAModel() = default;
  QAModel(TransformerDims dims, std::uint64_t seed) : net_("backbone", dims, seed) {}

  Seq2SeqTransformer& net() { return net_; }
  const Seq2SeqTransformer& net() const { return net_; }
  int layers() const { return net_.dims().layers; }
  int d_model() const { return net_.dims().d_model; }

 private:
  Seq2SeqTransformer net_;
};

/// Decoder inputs for teacher forcing: [pad, y_1, ..., y_{N-1}].
std::vector<int> shift_right(std::span<const int> target_ids);

/// Sum over target positions of -log p(y_t | x, y_<t). Differentiable
/// through `aug` into whatever produced the prefixes.
ag::Var forward_nll(ag::Tape& tape, const QAModel& model, const EncodedExample& ex,
                    const AttentionAugmentation& aug, const ForwardOptions& opts = {});

/// Log-probabilities over the vocabulary for the token after `prefix`.
using StepScorer = std::function<Eigen::VectorXd(std::span<const int> prefix)>;

struct BeamOptions {
  int beams = 2;
  int min_len = 1;  // answer tokens required before EOS is allowed
  int max_len = 16;  // decoding steps, EOS included
  double length_penalty = 1.0;  // score = sum log p / length^length_penalty
};

/// Argmax decoding; stops at EOS (masked until min_len) or max_len.
std::vector<int> greedy_search(const StepScorer& scorer, int eos, const BeamOptions& opts);

/// Length-normalized beam search. Every live hypothesis offers its EOS
/// extension to a finished pool; the live beam keeps the top non-EOS
/// prefixes. Search ends once no live beam can still overtake the best
/// finished hypothesis, or at max_len. beams == 1 is greedy_search.
/// Returned ids exclude EOS.
std::vector<int> beam_search(const StepScorer& scorer, int eos, const BeamOptions& opts);

/// Length-normalized score of a complete generated sequence (EOS included
/// in the length when present).
double sequence_score(const StepScorer& scorer, std::span<const int> tokens, double length_penalty);

/// Decodes an answer. The augmentation must live on `tape`.
std::vector<int> generate(ag::Tape& tape, const QAModel& model, std::span<const int> input_ids,
                          const AttentionAugmentation& aug, const BeamOptions& opts);

}  // namespace mprompt

#endif  // MPROMPT_BACKBONE_H_
