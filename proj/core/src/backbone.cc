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

#include "mprompt/backbone.h"

#include <algorithm>
#include <cmath>
#include <limits>

#include "mprompt/errors.h"

namespace mprompt {

std::vector<int> shift_right(std::span<const int> target_ids) {
  std::vector<int> out;
  out.reserve(target_ids.size());
  out.push_back(Vocabulary::kPad);
  for (std::size_t i = 0; i + 1 < target_ids.size(); ++i) out.push_back(target_ids[i]);
  return out;
}

ag::Var forward_nll(ag::Tape& tape, const QAModel& model, const EncodedExample& ex,
                    const AttentionAugmentation& aug, const ForwardOptions& opts) {
  if (ex.target_ids.empty()) throw ShapeError("forward_nll: empty target");
  const Seq2SeqTransformer& net = model.net();
  ag::Var memory = net.encode(tape, ex.input_ids, aug.encoder_self, opts);
  std::vector<int> dec_ids = shift_right(ex.target_ids);
  ag::Var hidden = net.decode(tape, net.embed(tape, dec_ids), memory, true, aug.decoder_self,
                              aug.decoder_cross, opts);
  return ag::nll_sum(net.logits(tape, hidden), ex.target_ids);
}

namespace {

void check_options(const BeamOptions& opts) {
  if (opts.beams < 1) throw ConfigError("beam width must be >= 1");
  if (opts.min_len < 1 || opts.max_len < opts.min_len) {
    throw ConfigError("need max_len >= min_len >= 1");
  }
}

double normalized(double sum, std::size_t length, double penalty) {
  return sum / std::pow(static_cast<double>(length), penalty);
}

struct Hypothesis {
  std::vector<int> tokens;  // excludes EOS
  double sum = 0.0;
  std::size_t length = 0;  // scored length, EOS included when present
  double score = 0.0;
};

}  // namespace

std::vector<int> greedy_search(const StepScorer& scorer, int eos, const BeamOptions& opts) {
  check_options(opts);
  std::vector<int> out;
  for (int step = 0; step < opts.max_len; ++step) {
    Eigen::VectorXd lp = scorer(out);
    if (static_cast<int>(out.size()) < opts.min_len) lp(eos) = -std::numeric_limits<double>::infinity();
    Eigen::Index best = 0;
    lp.maxCoeff(&best);
    if (best == eos) break;
    out.push_back(static_cast<int>(best));
  }
  return out;
}

std::vector<int> beam_search(const StepScorer& scorer, int eos, const BeamOptions& opts) {
  check_options(opts);
  if (opts.beams == 1) return greedy_search(scorer, eos, opts);
  const auto width = static_cast<std::size_t>(opts.beams);
  const double max_norm = std::pow(static_cast<double>(opts.max_len), opts.length_penalty);

  std::vector<Hypothesis> alive = {Hypothesis{}};
  std::vector<Hypothesis> pool;
  auto by_score = [](const Hypothesis& a, const Hypothesis& b) { return a.score > b.score; };

  for (int step = 0; step < opts.max_len; ++step) {
    std::vector<Hypothesis> cands;
    for (const Hypothesis& h : alive) {
      Eigen::VectorXd lp = scorer(h.tokens);
      if (static_cast<int>(h.tokens.size()) >= opts.min_len) {
        Hypothesis done{h.tokens, h.sum + lp(eos), h.tokens.size() + 1, 0.0};
        done.score = normalized(done.sum, done.length, opts.length_penalty);
        pool.push_back(std::move(done));
      }
      for (Eigen::Index v = 0; v < lp.size(); ++v) {
        if (v == eos) continue;
        Hypothesis next{h.tokens, h.sum + lp(v), h.tokens.size() + 1, 0.0};
        next.tokens.push_back(static_cast<int>(v));
        cands.push_back(std::move(next));
      }
    }
    std::stable_sort(cands.begin(), cands.end(),
                     [](const Hypothesis& a, const Hypothesis& b) { return a.sum > b.sum; });
    if (cands.size() > width) cands.resize(width);
    alive = std::move(cands);

    std::stable_sort(pool.begin(), pool.end(), by_score);
    if (pool.size() > width) pool.resize(width);

    if (static_cast<int>(alive.front().tokens.size()) == opts.max_len) {
      // Out of steps: live beams finish as truncated answers.
      for (Hypothesis& h : alive) {
        h.score = normalized(h.sum, h.length, opts.length_penalty);
        pool.push_back(std::move(h));
      }
      break;
    }
    // Log-probs are <= 0, so a live beam can at best reach sum / max_len^p.
    const double bound = alive.front().sum / max_norm;
    if (!pool.empty() && pool.front().score >= bound) break;
  }
  std::stable_sort(pool.begin(), pool.end(), by_score);
  return pool.front().tokens;
}

double sequence_score(const StepScorer& scorer, std::span<const int> tokens, double length_penalty) {
  double sum = 0.0;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    Eigen::VectorXd lp = scorer(tokens.first(i));
    sum += lp(tokens[i]);
  }
  return normalized(sum, tokens.size(), length_penalty);
}

std::vector<int> generate(ag::Tape& tape, const QAModel& model, std::span<const int> input_ids,
                          const AttentionAugmentation& aug, const BeamOptions& opts) {
  const Seq2SeqTransformer& net = model.net();
  ForwardOptions fwd;
  ag::Var memory = net.encode(tape, input_ids, aug.encoder_self, fwd);
  StepScorer scorer = [&](std::span<const int> prefix) {
    std::vector<int> ids;
    ids.reserve(prefix.size() + 1);
    ids.push_back(Vocabulary::kPad);
    ids.insert(ids.end(), prefix.begin(), prefix.end());
    ag::Var hidden = net.decode(tape, net.embed(tape, ids), memory, true, aug.decoder_self,
                                aug.decoder_cross, fwd);
    ag::Var last = ag::slice_rows(hidden, hidden.rows() - 1, 1);
    Eigen::VectorXd z = net.logits(tape, last).value().row(0).transpose();
    double mx = z.maxCoeff();
    double lse = mx + std::log((z.array() - mx).exp().sum());
    return Eigen::VectorXd(z.array() - lse);
  };
  return beam_search(scorer, Vocabulary::kEos, opts);
}

}  // namespace mprompt
