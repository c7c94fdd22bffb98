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

#include "mprompt/transformer.h"

#include <algorithm>
#include <cmath>

#include "mprompt/errors.h"

namespace mprompt {

namespace {

Matrix random_matrix(Rng& rng, Eigen::Index rows, Eigen::Index cols, double stddev) {
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = normal01(rng) * stddev;
  return m;
}

}  // namespace

Matrix sinusoidal_positions(int length, int d_model) {
  Matrix pe(length, d_model);
  for (int pos = 0; pos < length; ++pos) {
    for (int i = 0; i < d_model; ++i) {
      double rate = std::pow(10000.0, -2.0 * (i / 2) / static_cast<double>(d_model));
      pe(pos, i) = i % 2 == 0 ? std::sin(pos * rate) : std::cos(pos * rate);
    }
  }
  return pe;
}

std::pair<ag::Var, ag::Var> augment_kv(ag::Var k, ag::Var v, std::span<const PromptKVStack> stacks,
                                       int layer) {
  std::vector<ag::Var> ks;
  std::vector<ag::Var> vs;
  for (const auto& stack : stacks) {
    if (stack.empty()) continue;
    if (static_cast<int>(stack.size()) <= layer) {
      throw ShapeError("prompt stack has fewer layers than the model");
    }
    const LayerKV& kv = stack[static_cast<std::size_t>(layer)];
    if (!kv.present()) continue;
    if (kv.key.cols() != k.cols() || kv.value.cols() != v.cols()) {
      throw ShapeError("prefix width " + std::to_string(kv.key.cols()) + " != model width " +
                       std::to_string(k.cols()));
    }
    if (kv.key.rows() != kv.value.rows()) throw ShapeError("prefix key/value lengths differ");
    ks.push_back(kv.key);
    vs.push_back(kv.value);
  }
  if (ks.empty()) return {k, v};
  ks.push_back(k);
  vs.push_back(v);
  return {ag::concat_rows(ks), ag::concat_rows(vs)};
}

std::pair<ag::Var, ag::Var> encoder_attention_augment(ag::Var k, ag::Var v, const LayerKV& task,
                                                      const LayerKV& prompt) {
  std::vector<PromptKVStack> stacks = {{task}, {prompt}};
  return augment_kv(k, v, stacks, 0);
}

std::pair<ag::Var, ag::Var> decoder_attention_augment(ag::Var k, ag::Var v, const LayerKV& task) {
  std::vector<PromptKVStack> stacks = {{task}};
  return augment_kv(k, v, stacks, 0);
}

Seq2SeqTransformer::Seq2SeqTransformer(std::string name, TransformerDims dims, std::uint64_t seed)
    : name_(std::move(name)), dims_(dims) {
  if (dims.vocab_size < 1 || dims.d_model < 1 || dims.layers < 1 || dims.d_ff < 1) {
    throw ConfigError("transformer dimensions must be positive");
  }
  if (dims.heads < 1 || dims.d_model % dims.heads != 0) {
    throw ConfigError("heads must divide d_model");
  }
  if (dims.relative_distance < 0) throw ConfigError("relative_distance must be >= 0");
  Rng rng(seed);
  const int d = dims.d_model;
  const double s_in = 1.0 / std::sqrt(static_cast<double>(d));
  const double s_ff = 1.0 / std::sqrt(static_cast<double>(dims.d_ff));
  const double s_out = s_in / std::sqrt(2.0 * dims.layers);
  auto p = [&](const std::string& path, Matrix m) { return Parameter(name_ + "." + path, std::move(m)); };
  auto make_norm = [&](const std::string& path) {
    return Norm{p(path + ".gain", Matrix::Ones(1, d)), p(path + ".bias", Matrix::Zero(1, d))};
  };
  auto make_attn = [&](const std::string& path, bool relative) {
    Attention a{p(path + ".wq", random_matrix(rng, d, d, s_in)),
                p(path + ".wk", random_matrix(rng, d, d, s_in)),
                p(path + ".wv", random_matrix(rng, d, d, s_in)),
                p(path + ".wo", random_matrix(rng, d, d, s_out)),
                {}};
    if (relative && dims.relative_distance > 0) {
      a.rel = p(path + ".rel_bias", Matrix::Zero(dims.heads, 2 * dims.relative_distance + 1));
    }
    return a;
  };
  auto make_ff = [&](const std::string& path) {
    return FeedForward{p(path + ".w1", random_matrix(rng, d, dims.d_ff, s_in)),
                       p(path + ".b1", Matrix::Zero(1, dims.d_ff)),
                       p(path + ".w2", random_matrix(rng, dims.d_ff, d, s_ff / std::sqrt(2.0 * dims.layers))),
                       p(path + ".b2", Matrix::Zero(1, d))};
  };
  embedding_ = p("embedding", random_matrix(rng, dims.vocab_size, d, s_in));
  for (int l = 0; l < dims.layers; ++l) {
    const std::string e = "encoder." + std::to_string(l);
    encoder_.push_back(EncoderLayer{make_norm(e + ".ln_self"), make_attn(e + ".self", true),
                                    make_norm(e + ".ln_ff"), make_ff(e + ".ff")});
  }
  for (int l = 0; l < dims.layers; ++l) {
    const std::string dname = "decoder." + std::to_string(l);
    decoder_.push_back(DecoderLayer{make_norm(dname + ".ln_self"), make_attn(dname + ".self", true),
                                    make_norm(dname + ".ln_cross"), make_attn(dname + ".cross", false),
                                    make_norm(dname + ".ln_ff"), make_ff(dname + ".ff")});
  }
  enc_final_ = make_norm("encoder.ln_final");
  dec_final_ = make_norm("decoder.ln_final");
}

std::vector<Parameter*> Seq2SeqTransformer::parameters() {
  std::vector<Parameter*> out = {&embedding_};
  auto norm = [&](Norm& n) {
    out.push_back(&n.gain);
    out.push_back(&n.bias);
  };
  auto attn = [&](Attention& a) {
    for (Parameter* q : {&a.wq, &a.wk, &a.wv, &a.wo}) out.push_back(q);
    if (a.rel.size() > 0) out.push_back(&a.rel);
  };
  auto ff = [&](FeedForward& f) {
    for (Parameter* q : {&f.w1, &f.b1, &f.w2, &f.b2}) out.push_back(q);
  };
  for (auto& l : encoder_) {
    norm(l.ln_self);
    attn(l.self);
    norm(l.ln_ff);
    ff(l.ff);
  }
  for (auto& l : decoder_) {
    norm(l.ln_self);
    attn(l.self);
    norm(l.ln_cross);
    attn(l.cross);
    norm(l.ln_ff);
    ff(l.ff);
  }
  norm(enc_final_);
  norm(dec_final_);
  return out;
}

std::vector<const Parameter*> Seq2SeqTransformer::parameters() const {
  auto mut = const_cast<Seq2SeqTransformer*>(this)->parameters();
  return {mut.begin(), mut.end()};
}

std::int64_t Seq2SeqTransformer::parameter_count() const {
  std::int64_t n = 0;
  for (const Parameter* p : parameters()) n += p->size();
  return n;
}

void Seq2SeqTransformer::set_trainable(bool trainable) {
  for (Parameter* p : parameters()) p->trainable = trainable;
}

ag::Var Seq2SeqTransformer::embed(ag::Tape& tape, std::span<const int> ids) const {
  ag::Var tok = ag::scale(ag::gather_rows(tape.param(embedding_), ids),
                          std::sqrt(static_cast<double>(dims_.d_model)));
  if (dims_.relative_distance > 0) return tok;
  ag::Var pos = tape.constant(sinusoidal_positions(static_cast<int>(ids.size()), dims_.d_model));
  return ag::add(tok, pos);
}

ag::Var Seq2SeqTransformer::norm(ag::Tape& tape, const Norm& n, ag::Var x) const {
  return ag::layer_norm(x, tape.param(n.gain), tape.param(n.bias));
}

ag::Var Seq2SeqTransformer::feed_forward(ag::Tape& tape, const FeedForward& w, ag::Var x) const {
  ag::Var h = ag::relu(ag::add_row(ag::matmul(x, tape.param(w.w1)), tape.param(w.b1)));
  return ag::add_row(ag::matmul(h, tape.param(w.w2)), tape.param(w.b2));
}

ag::Var Seq2SeqTransformer::attend(ag::Tape& tape, const Attention& w, ag::Var x_q, ag::Var x_kv,
                                   std::span<const PromptKVStack> prefixes, int layer, bool causal,
                                   AttentionKind kind, const ForwardOptions& opts) const {
  ag::Var q = ag::matmul(x_q, tape.param(w.wq));
  ag::Var k = ag::matmul(x_kv, tape.param(w.wk));
  ag::Var v = ag::matmul(x_kv, tape.param(w.wv));
  auto [k_aug, v_aug] = augment_kv(k, v, prefixes, layer);
  const int prefix_len = static_cast<int>(k_aug.rows() - k.rows());
  ag::AttentionMask mask{prefix_len, causal};
  std::vector<Matrix> probs;
  const bool keep = opts.trace != nullptr && opts.trace->keep_probs;
  ag::AttentionBias bias;
  if (w.rel.size() > 0) {
    const int dist = dims_.relative_distance;
    bias.table = tape.param(w.rel);
    bias.keys = static_cast<int>(k.rows());
    bias.bucket.resize(static_cast<std::size_t>(q.rows() * k.rows()));
    for (int i = 0; i < q.rows(); ++i) {
      for (int j = 0; j < bias.keys; ++j) {
        bias.bucket[static_cast<std::size_t>(i * bias.keys + j)] = std::clamp(j - i, -dist, dist) + dist;
      }
    }
  }
  ag::Var ctx = ag::attention(q, k_aug, v_aug, dims_.heads, mask, keep ? &probs : nullptr,
                              bias.table.valid() ? &bias : nullptr);
  if (opts.trace != nullptr) {
    opts.trace->records.push_back(AttentionRecord{kind, layer, static_cast<int>(q.rows()),
                                                  static_cast<int>(k_aug.rows()), prefix_len,
                                                  std::move(probs)});
  }
  return ag::matmul(ctx, tape.param(w.wo));
}

ag::Var Seq2SeqTransformer::encode(ag::Tape& tape, std::span<const int> ids,
                                   std::span<const PromptKVStack> self_prefixes,
                                   const ForwardOptions& opts) const {
  if (ids.empty()) throw ShapeError("encode: empty input");
  ag::Var x = embed(tape, ids);
  auto drop = [&](ag::Var h) { return opts.dropout > 0.0 ? ag::dropout(h, opts.dropout, *opts.rng) : h; };
  for (int l = 0; l < dims_.layers; ++l) {
    const EncoderLayer& L = encoder_[static_cast<std::size_t>(l)];
    ag::Var h = norm(tape, L.ln_self, x);
    x = ag::add(x, drop(attend(tape, L.self, h, h, self_prefixes, l, false,
                               AttentionKind::kEncoderSelf, opts)));
    x = ag::add(x, drop(feed_forward(tape, L.ff, norm(tape, L.ln_ff, x))));
  }
  return norm(tape, enc_final_, x);
}

ag::Var Seq2SeqTransformer::decode(ag::Tape& tape, ag::Var inputs, ag::Var memory, bool causal,
                                   std::span<const PromptKVStack> self_prefixes,
                                   std::span<const PromptKVStack> cross_prefixes,
                                   const ForwardOptions& opts) const {
  if (inputs.cols() != dims_.d_model || memory.cols() != dims_.d_model) {
    throw ShapeError("decode: input width != d_model");
  }
  ag::Var x = inputs;
  auto drop = [&](ag::Var h) { return opts.dropout > 0.0 ? ag::dropout(h, opts.dropout, *opts.rng) : h; };
  for (int l = 0; l < dims_.layers; ++l) {
    const DecoderLayer& L = decoder_[static_cast<std::size_t>(l)];
    ag::Var h = norm(tape, L.ln_self, x);
    x = ag::add(x, drop(attend(tape, L.self, h, h, self_prefixes, l, causal,
                               AttentionKind::kDecoderSelf, opts)));
    h = norm(tape, L.ln_cross, x);
    x = ag::add(x, drop(attend(tape, L.cross, h, memory, cross_prefixes, l, false,
                               AttentionKind::kDecoderCross, opts)));
    x = ag::add(x, drop(feed_forward(tape, L.ff, norm(tape, L.ln_ff, x))));
  }
  return norm(tape, dec_final_, x);
}

ag::Var Seq2SeqTransformer::logits(ag::Tape& tape, ag::Var hidden) const {
  return ag::matmul_nt(hidden, tape.param(embedding_));
}

}  // namespace mprompt
