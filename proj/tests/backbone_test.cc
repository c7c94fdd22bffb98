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

#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "mprompt/errors.h"
#include "mprompt/prompt_engine.h"
#include "test_util.h"

namespace mprompt {
namespace {

constexpr int kVocab = 20;

PromptConfig prompt_config(int t, int rho, int kappa) {
  PromptConfig c;
  c.task_len = t;
  c.domain_len = rho;
  c.context_len = kappa;
  c.n_domains = 2;
  c.d_model = 16;
  c.layers = 2;
  c.d_prompt = 8;
  c.mlp_hidden = 8;
  return c;
}

EncodedExample random_example(Rng& rng, int m, int n) {
  EncodedExample ex;
  for (int i = 0; i < m; ++i) ex.input_ids.push_back(Vocabulary::kReserved + static_cast<int>(uniform_index(rng, kVocab - 4)));
  for (int i = 0; i + 1 < n; ++i) ex.target_ids.push_back(Vocabulary::kReserved + static_cast<int>(uniform_index(rng, kVocab - 4)));
  ex.target_ids.push_back(Vocabulary::kEos);
  ex.context_ids = ex.input_ids;
  return ex;
}

TEST(ShiftRight, PadThenTargets) {
  EXPECT_EQ(shift_right(std::vector<int>{7, 8, 1}), (std::vector<int>{0, 7, 8}));
  EXPECT_EQ(shift_right(std::vector<int>{1}), (std::vector<int>{0}));
}

TEST(Augmentation, KeyLengthsAtEveryLayer) {
  const QAModel model(TransformerDims{kVocab, 16, 2, 2, 32}, 1);
  const GeneratorModel gen(TransformerDims{kVocab, 8, 2, 1, 16}, 40, 2);
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const int t = 1 + static_cast<int>(uniform_index(rng, 5));
    const int rho = 1 + static_cast<int>(uniform_index(rng, 6));
    const int kappa = 1 + static_cast<int>(uniform_index(rng, 6));
    const int m = 1 + static_cast<int>(uniform_index(rng, 10));
    const int n = 1 + static_cast<int>(uniform_index(rng, 5));
    const PromptBank bank = init_prompts(prompt_config(t, rho, kappa), gen, 4);
    const EncodedExample ex = random_example(rng, m, n);
    ag::Tape tape;
    AttentionAugmentation aug = build_augmentation(tape, bank, gen, ex.context_ids, 1);
    ForwardTrace trace;
    forward_nll(tape, model, ex, aug, ForwardOptions{0.0, nullptr, &trace});
    ASSERT_EQ(trace.records.size(), 6u);
    for (const AttentionRecord& r : trace.records) {
      switch (r.kind) {
        case AttentionKind::kEncoderSelf:
          EXPECT_EQ(r.query_len, m);
          EXPECT_EQ(r.key_len, t + rho + kappa + m);
          EXPECT_EQ(r.prefix_len, t + rho + kappa);
          break;
        case AttentionKind::kDecoderSelf:
          EXPECT_EQ(r.query_len, n);
          EXPECT_EQ(r.key_len, t + n);
          break;
        case AttentionKind::kDecoderCross:
          EXPECT_EQ(r.query_len, n);
          EXPECT_EQ(r.key_len, t + m);
          break;
      }
    }
  }
}

TEST(Augmentation, FirstDecoderQuerySeesPrefixAndItself) {
  const QAModel model(TransformerDims{kVocab, 16, 2, 2, 32}, 1);
  const GeneratorModel gen(TransformerDims{kVocab, 8, 2, 1, 16}, 40, 2);
  const PromptBank bank = init_prompts(prompt_config(3, 2, 2), gen, 4);
  Rng rng(5);
  const EncodedExample ex = random_example(rng, 6, 4);
  ag::Tape tape(false);
  AttentionAugmentation aug = build_augmentation(tape, bank, gen, ex.context_ids, 0);
  ForwardTrace trace{true, {}};
  forward_nll(tape, model, ex, aug, ForwardOptions{0.0, nullptr, &trace});
  for (const AttentionRecord& r : trace.records) {
    if (r.kind != AttentionKind::kDecoderSelf) continue;
    for (const Matrix& p : r.probs) {
      for (int q = 0; q < r.query_len; ++q) {
        int visible = 0;
        for (int k = 0; k < r.key_len; ++k) visible += p(q, k) > 0.0 ? 1 : 0;
        EXPECT_EQ(visible, 3 + q + 1);
        EXPECT_NEAR(p.row(q).sum(), 1.0, 1e-12);
      }
    }
  }
}

TEST(Augmentation, EmptyAugmentationEqualsPlainForward) {
  const QAModel model(TransformerDims{kVocab, 16, 2, 2, 32}, 1);
  Rng rng(6);
  const EncodedExample ex = random_example(rng, 5, 3);
  ag::Tape a(false), b(false);
  AttentionAugmentation empty;
  empty.encoder_self.emplace_back();
  const double plain = forward_nll(a, model, ex, {}).scalar();
  EXPECT_EQ(forward_nll(b, model, ex, empty).scalar(), plain);
  EXPECT_GT(plain, 0.0);
}

TEST(RelativePositions, TablesOnSelfAttentionOnly) {
  const TransformerDims plain{kVocab, 16, 2, 2, 32};
  TransformerDims rel = plain;
  rel.relative_distance = 3;
  const QAModel a(plain, 1), b(rel, 1);
  EXPECT_EQ(b.net().parameter_count() - a.net().parameter_count(), 2 * 2 * 2 * 7);
  int tables = 0;
  for (const Parameter* p : b.net().parameters()) {
    if (p->name.find("rel_bias") == std::string::npos) continue;
    ++tables;
    EXPECT_EQ(p->name.find("cross"), std::string::npos) << p->name;
  }
  EXPECT_EQ(tables, 4);
  TransformerDims bad = plain;
  bad.relative_distance = -1;
  EXPECT_THROW(QAModel(bad, 1), ConfigError);
}

TEST(RelativePositions, ZeroTablesCarryNoPosition) {
  TransformerDims dims{kVocab, 16, 2, 2, 32};
  dims.relative_distance = 4;
  QAModel model(dims, 2);
  ag::Tape tape(false);
  // Rows 0, 2 and 4 hold the same token and see the same set of keys.
  const std::vector<int> ids = {9, 10, 9, 10, 9};
  const Matrix flat = model.net().encode(tape, ids, {}, {}).value();
  EXPECT_LT((flat.row(2) - flat.row(0)).norm(), 1e-12);
  EXPECT_LT((flat.row(4) - flat.row(0)).norm(), 1e-12);

  Rng rng(3);
  for (Parameter* p : model.net().parameters()) {
    if (p->name.find("rel_bias") != std::string::npos) p->value = testing::random_matrix(rng, 2, 9);
  }
  ag::Tape t2(false);
  const Matrix biased = model.net().encode(t2, ids, {}, {}).value();
  EXPECT_GT((biased.row(0) - biased.row(2)).norm(), 1e-6);
}

TEST(RelativePositions, TableGradientMatchesFiniteDifference) {
  TransformerDims dims{kVocab, 16, 2, 2, 32};
  dims.relative_distance = 2;
  QAModel model(dims, 4);
  Rng rng(8);
  model.net().set_trainable(true);
  for (Parameter* p : model.net().parameters()) {
    if (p->name.find("rel_bias") != std::string::npos) p->value = testing::random_matrix(rng, 2, 5, 0.5);
  }
  const EncodedExample ex = random_example(rng, 6, 4);
  ag::Tape tape;
  tape.backward(forward_nll(tape, model, ex, {}));
  auto f = [&] {
    ag::Tape t(false);
    return forward_nll(t, model, ex, {}).scalar();
  };
  testing::GradCheck gc;
  for (Parameter* p : model.net().parameters()) {
    if (p->name.find("rel_bias") == std::string::npos) continue;
    ASSERT_NE(tape.grad_of(*p), nullptr) << p->name;
    testing::check_entries(*p, *tape.grad_of(*p), f, 10, rng, gc);
  }
  EXPECT_LE(gc.worst, 1e-6) << gc.worst_where;
}

// Log-softmax of a random step x vocab table; the forced-logit toy model
// returns row len(prefix) whatever the prefix is.
Matrix random_table(Rng& rng, int steps, int vocab) {
  Matrix t = testing::random_matrix(rng, steps, vocab, 2.0);
  for (int r = 0; r < steps; ++r) {
    const double mx = t.row(r).maxCoeff();
    const double lse = mx + std::log((t.row(r).array() - mx).exp().sum());
    t.row(r).array() -= lse;
  }
  return t;
}

StepScorer table_scorer(const Matrix& table) {
  return [table](std::span<const int> prefix) {
    return Eigen::VectorXd(table.row(static_cast<Eigen::Index>(prefix.size())).transpose());
  };
}

// Best length-normalized sequence over every candidate the decoder can
// finish: k answer tokens plus EOS for min_len <= k < max_len, or max_len
// answer tokens cut off without EOS.
std::vector<int> exhaustive(const Matrix& table, int eos, int min_len, int max_len) {
  const int vocab = static_cast<int>(table.cols());
  std::vector<int> best;
  double best_score = -std::numeric_limits<double>::infinity();
  for (int k = min_len; k <= max_len; ++k) {
    const bool with_eos = k < max_len;
    int total = 1;
    for (int i = 0; i < k; ++i) total *= vocab;
    for (int code = 0; code < total; ++code) {
      std::vector<int> seq;
      int c = code;
      double sum = 0.0;
      bool ok = true;
      for (int i = 0; i < k; ++i) {
        const int tok = c % vocab;
        c /= vocab;
        if (tok == eos) ok = false;
        seq.push_back(tok);
        sum += table(i, tok);
      }
      if (!ok) continue;
      double length = k;
      if (with_eos) {
        sum += table(k, eos);
        length += 1;
      }
      const double score = sum / length;
      if (score > best_score) {
        best_score = score;
        best = seq;
      }
    }
  }
  return best;
}

std::vector<int> naive_greedy(const Matrix& table, int eos, int min_len, int max_len) {
  std::vector<int> out;
  for (int step = 0; step < max_len; ++step) {
    int arg = -1;
    for (int v = 0; v < table.cols(); ++v) {
      if (v == eos && step < min_len) continue;
      if (arg < 0 || table(step, v) > table(step, arg)) arg = v;
    }
    if (arg == eos) break;
    out.push_back(arg);
  }
  return out;
}

TEST(BeamSearch, MatchesExhaustiveOnForcedLogits) {
  Rng rng(7);
  const int eos = 1;
  for (int trial = 0; trial < 50; ++trial) {
    const Matrix table = random_table(rng, 3, 4);
    BeamOptions opts{2, 1, 3, 1.0};
    EXPECT_EQ(beam_search(table_scorer(table), eos, opts), exhaustive(table, eos, 1, 3)) << "trial " << trial;
    opts.beams = 1;
    EXPECT_EQ(beam_search(table_scorer(table), eos, opts), naive_greedy(table, eos, 1, 3)) << "trial " << trial;
  }
}

TEST(BeamSearch, MinLengthBlocksEarlyEos) {
  Matrix table = Matrix::Constant(4, 4, -5.0);
  table(0, 1) = -0.01;  // EOS first would win without min_len
  table(1, 1) = -0.01;
  table(0, 2) = -1.0;
  table(1, 3) = -1.0;
  table(2, 1) = -0.01;
  for (int beams : {1, 2}) {
    BeamOptions opts{beams, 2, 4, 1.0};
    EXPECT_EQ(beam_search(table_scorer(table), 1, opts), (std::vector<int>{2, 3}));
  }
  EXPECT_THROW(beam_search(table_scorer(table), 1, BeamOptions{0, 1, 4, 1.0}), ConfigError);
  EXPECT_THROW(beam_search(table_scorer(table), 1, BeamOptions{2, 3, 2, 1.0}), ConfigError);
}

TEST(BeamSearch, SequenceScoreIsLengthNormalized) {
  Rng rng(8);
  const Matrix table = random_table(rng, 3, 4);
  const std::vector<int> seq = {2, 3, 1};
  EXPECT_NEAR(sequence_score(table_scorer(table), seq, 1.0), (table(0, 2) + table(1, 3) + table(2, 1)) / 3.0,
              1e-12);
}

TEST(Generate, BeamOneIsGreedyOnRealModel) {
  const QAModel model(TransformerDims{kVocab, 16, 2, 2, 32}, 9);
  Rng rng(10);
  for (int trial = 0; trial < 5; ++trial) {
    const EncodedExample ex = random_example(rng, 6, 2);
    ag::Tape tape(false);
    const auto beam1 = generate(tape, model, ex.input_ids, {}, BeamOptions{1, 1, 5, 1.0});
    // Greedy by re-running full teacher-forced forwards on the growing prefix.
    std::vector<int> greedy;
    for (int step = 0; step < 5; ++step) {
      ag::Tape t(false);
      std::vector<int> dec = {Vocabulary::kPad};
      dec.insert(dec.end(), greedy.begin(), greedy.end());
      ag::Var memory = model.net().encode(t, ex.input_ids, {}, {});
      ag::Var h = model.net().decode(t, model.net().embed(t, dec), memory, true, {}, {}, {});
      Eigen::VectorXd z = model.net().logits(t, h).value().row(h.rows() - 1).transpose();
      if (step == 0) z(Vocabulary::kEos) = -std::numeric_limits<double>::infinity();
      Eigen::Index arg = 0;
      z.maxCoeff(&arg);
      if (arg == Vocabulary::kEos) break;
      greedy.push_back(static_cast<int>(arg));
    }
    EXPECT_EQ(beam1, greedy);
  }
}

}  // namespace
}  // namespace mprompt
