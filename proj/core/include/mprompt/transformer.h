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

// Pre-LN encoder-decoder transformer whose attention layers accept per-layer
// key/value prefixes. Prefix rows are prepended to the projected keys and
// values only; they carry no positional encoding, are never masked, and do
// not lengthen any layer's output sequence.

#ifndef MPROMPT_TRANSFORMER_H_
#define MPROMPT_TRANSFORMER_H_

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mprompt/autograd.h"
#include "mprompt/rng.h"

namespace mprompt {

/// Key and value prefix rows for one layer, both len x d. An invalid key
/// means "no prefix" for that layer.
struct LayerKV {
  ag::Var key;
  ag::Var value;

  bool present() const { return key.valid(); }
  Eigen::Index length() const { return present() ? key.rows() : 0; }
};

/// One LayerKV per transformer layer.
using PromptKVStack = std::vector<LayerKV>;

/// Prefixes for every attention class. Each class takes a list of stacks that
/// are concatenated in order, e.g. {T_E, P} for encoder self-attention.
struct AttentionAugmentation {
  std::vector<PromptKVStack> encoder_self;
  std::vector<PromptKVStack> decoder_self;
  std::vector<PromptKVStack> decoder_cross;
};

/// [prefixes...; K] and [prefixes...; V] for layer `layer`.
std::pair<ag::Var, ag::Var> augment_kv(ag::Var k, ag::Var v, std::span<const PromptKVStack> stacks,
                                       int layer);
/// [T_E,K ; P_K ; K] (and likewise for V). Throws ShapeError on width mismatch.
std::pair<ag::Var, ag::Var> encoder_attention_augment(ag::Var k, ag::Var v, const LayerKV& task,
                                                      const LayerKV& prompt);
/// [T_K ; K] for decoder masked-self or cross attention.
std::pair<ag::Var, ag::Var> decoder_attention_augment(ag::Var k, ag::Var v, const LayerKV& task);

enum class AttentionKind { kEncoderSelf, kDecoderSelf, kDecoderCross };

/// Per-call record of attention geometry, for shape-law checks.
struct AttentionRecord {
  AttentionKind kind;
  int layer = 0;
  int query_len = 0;
  int key_len = 0;
  int prefix_len = 0;
  std::vector<Matrix> probs;  // per head, filled if ForwardTrace::keep_probs
};

struct ForwardTrace {
  bool keep_probs = false;
  std::vector<AttentionRecord> records;
};

struct ForwardOptions {
  double dropout = 0.0;
  Rng* rng = nullptr;  // required when dropout > 0
  ForwardTrace* trace = nullptr;
};

struct TransformerDims {
  int vocab_size = 0;
  int d_model = 64;
  int heads = 4;
  int layers = 2;  // applies to both encoder and decoder
  int d_ff = 256;
  // 0: sinusoidal absolute positions. D > 0: no absolute positions; every
  // self-attention adds a learned per-head bias indexed by the key-query
  // offset clamped to [-D, D].
  int relative_distance = 0;
};

/// Encoder-decoder transformer with tied input/output embeddings and either
/// sinusoidal positions or relative self-attention biases. All parameters
/// are named "<prefix>.<path>".
class Seq2SeqTransformer {
 public:
  Seq2SeqTransformer() = default;
  Seq2SeqTransformer(std::string name, TransformerDims dims, std::uint64_t seed);

  const TransformerDims& dims() const { return dims_; }
  const std::string& name() const { return name_; }

  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;
  std::int64_t parameter_count() const;
  void set_trainable(bool trainable);

  const Parameter& embedding() const { return embedding_; }

  /// Token embeddings scaled by sqrt(d), plus sinusoidal positions unless
  /// relative biases are on.
  ag::Var embed(ag::Tape& tape, std::span<const int> ids) const;

  /// Encoder over token ids; returns M x d final hidden states.
  ag::Var encode(ag::Tape& tape, std::span<const int> ids,
                 std::span<const PromptKVStack> self_prefixes, const ForwardOptions& opts) const;

  /// Decoder over already-embedded inputs (N x d). `causal` selects masked
  /// self-attention. Returns N x d final hidden states.
  ag::Var decode(ag::Tape& tape, ag::Var inputs, ag::Var memory, bool causal,
                 std::span<const PromptKVStack> self_prefixes,
                 std::span<const PromptKVStack> cross_prefixes, const ForwardOptions& opts) const;

  /// hidden * E^T.
  ag::Var logits(ag::Tape& tape, ag::Var hidden) const;

 private:
  struct Norm {
    Parameter gain, bias;
  };
  struct Attention {
    Parameter wq, wk, wv, wo;
    Parameter rel;  // heads x (2D + 1); empty when unused
  };
  struct FeedForward {
    Parameter w1, b1, w2, b2;
  };
  struct EncoderLayer {
    Norm ln_self;
    Attention self;
    Norm ln_ff;
    FeedForward ff;
  };
  struct DecoderLayer {
    Norm ln_self;
    Attention self;
    Norm ln_cross;
    Attention cross;
    Norm ln_ff;
    FeedForward ff;
  };

  ag::Var attend(ag::Tape& tape, const Attention& w, ag::Var x_q, ag::Var x_kv,
                 std::span<const PromptKVStack> prefixes, int layer, bool causal,
                 AttentionKind kind, const ForwardOptions& opts) const;
  ag::Var feed_forward(ag::Tape& tape, const FeedForward& w, ag::Var x) const;
  ag::Var norm(ag::Tape& tape, const Norm& n, ag::Var x) const;

  std::string name_;
  TransformerDims dims_;
  Parameter embedding_;
  std::vector<EncoderLayer> encoder_;
  std::vector<DecoderLayer> decoder_;
  Norm enc_final_;
  Norm dec_final_;
};

Matrix sinusoidal_positions(int length, int d_model);

}  // namespace mprompt

#endif  // MPROMPT_TRANSFORMER_H_
