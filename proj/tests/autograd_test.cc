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

#include "mprompt/autograd.h"

#include <gtest/gtest.h>

#include <cmath>

#include "mprompt/errors.h"
#include "test_util.h"

namespace mprompt {
namespace {

using testing::check_entries;
using testing::GradCheck;
using testing::random_matrix;

// Builds a scalar from parameters a and b through `op`, then checks both
// gradients by central differences.
void expect_grad(const std::function<ag::Var(ag::Tape&, ag::Var, ag::Var)>& op, Matrix a0, Matrix b0,
                 double tol = 1e-6) {
  Parameter a("a", std::move(a0), true);
  Parameter b("b", std::move(b0), true);
  Rng rng(7);
  Matrix w = random_matrix(rng, 1, 1);
  auto scalarize = [&](ag::Tape& tape) {
    ag::Var out = op(tape, tape.param(a), tape.param(b));
    Rng wr(99);
    Matrix weights = random_matrix(wr, static_cast<int>(out.rows()), static_cast<int>(out.cols()));
    return ag::frob_inner(out, tape.constant(weights));
  };
  ag::Tape tape;
  ag::Var loss = scalarize(tape);
  tape.backward(loss);
  auto f = [&] {
    ag::Tape t(false);
    return scalarize(t).scalar();
  };
  GradCheck gc;
  Matrix ga = tape.grad_of(a) ? *tape.grad_of(a) : Matrix::Zero(a.value.rows(), a.value.cols());
  Matrix gb = tape.grad_of(b) ? *tape.grad_of(b) : Matrix::Zero(b.value.rows(), b.value.cols());
  check_entries(a, ga, f, 40, rng, gc);
  check_entries(b, gb, f, 40, rng, gc);
  EXPECT_LE(gc.worst, tol) << gc.worst_where;
}

TEST(Autograd, MatmulAndVariants) {
  Rng rng(1);
  expect_grad([](ag::Tape&, ag::Var a, ag::Var b) { return ag::matmul(a, b); }, random_matrix(rng, 3, 4),
              random_matrix(rng, 4, 5));
  expect_grad([](ag::Tape&, ag::Var a, ag::Var b) { return ag::matmul_nt(a, b); }, random_matrix(rng, 3, 4),
              random_matrix(rng, 5, 4));
}

TEST(Autograd, Elementwise) {
  Rng rng(2);
  expect_grad([](ag::Tape&, ag::Var a, ag::Var b) { return ag::mul(ag::tanh(a), ag::sub(a, b)); },
              random_matrix(rng, 3, 4), random_matrix(rng, 3, 4));
  expect_grad([](ag::Tape&, ag::Var a, ag::Var b) { return ag::add_row(ag::relu(a), b); },
              random_matrix(rng, 3, 4), random_matrix(rng, 1, 4));
  expect_grad([](ag::Tape&, ag::Var a, ag::Var b) { return ag::scale(ag::add(a, b), -1.5); },
              random_matrix(rng, 2, 2), random_matrix(rng, 2, 2));
}

TEST(Autograd, LayerNorm) {
  Rng rng(3);
  Parameter bias("bias", random_matrix(rng, 1, 6), true);
  expect_grad([&](ag::Tape& t, ag::Var x, ag::Var g) { return ag::layer_norm(x, g, t.param(bias)); },
              random_matrix(rng, 4, 6), random_matrix(rng, 1, 6));
}

TEST(Autograd, Structural) {
  Rng rng(4);
  expect_grad(
      [](ag::Tape&, ag::Var a, ag::Var b) {
        std::vector<ag::Var> parts = {a, b, a};
        return ag::slice_cols(ag::slice_rows(ag::concat_rows(parts), 1, 5), 1, 2);
      },
      random_matrix(rng, 2, 3), random_matrix(rng, 3, 3));
  expect_grad(
      [](ag::Tape&, ag::Var table, ag::Var b) {
        const std::vector<int> ids = {2, 0, 2, 1};
        return ag::mul(ag::gather_rows(table, ids), b);
      },
      random_matrix(rng, 3, 4), random_matrix(rng, 4, 4));
}

TEST(Autograd, Scalars) {
  Rng rng(5);
  expect_grad(
      [](ag::Tape&, ag::Var a, ag::Var b) {
        ag::Var s = ag::frob_inner(a, b);
        ag::Var q = ag::scalar_sqrt(ag::frob_inner(a, a));
        return ag::scalar_div(ag::scalar_mul(s, ag::sum(b)), q);
      },
      random_matrix(rng, 3, 3), random_matrix(rng, 3, 3));
}

TEST(Autograd, AttentionWithPrefixAndCausalMask) {
  Rng rng(6);
  Parameter v("v", random_matrix(rng, 7, 8), true);
  for (bool causal : {false, true}) {
    expect_grad(
        [&](ag::Tape& t, ag::Var q, ag::Var k) {
          return ag::attention(q, k, t.param(v), 2, ag::AttentionMask{3, causal});
        },
        random_matrix(rng, 4, 8), random_matrix(rng, 7, 8));
  }
}

TEST(Autograd, AttentionBiasGradient) {
  Rng rng(16);
  Parameter k("k", random_matrix(rng, 6, 8), true);
  Parameter v("v", random_matrix(rng, 6, 8), true);
  // 4 queries, 2 prefix keys, 4 real keys; buckets cycle through 3 columns.
  for (bool causal : {false, true}) {
    expect_grad(
        [&](ag::Tape& t, ag::Var q, ag::Var table) {
          ag::AttentionBias bias{table, {}, 4};
          for (int i = 0; i < 16; ++i) bias.bucket.push_back((i * 7) % 3);
          return ag::attention(q, t.param(k), t.param(v), 2, ag::AttentionMask{2, causal}, nullptr, &bias);
        },
        random_matrix(rng, 4, 8), random_matrix(rng, 2, 3));
  }
}

TEST(Autograd, AttentionBiasSkipsPrefixKeys) {
  // Zero queries make every raw score zero, so probabilities are the
  // softmax of the bias alone, with prefix keys at score 0.
  ag::Tape tape(false);
  Matrix table(1, 2);
  table << 1.0, -2.0;
  ag::AttentionBias bias{tape.constant(table), {0, 1}, 2};
  std::vector<Matrix> probs;
  ag::attention(tape.constant(Matrix::Zero(1, 4)), tape.constant(Matrix::Ones(3, 4)),
                tape.constant(Matrix::Ones(3, 4)), 1, ag::AttentionMask{1, false}, &probs, &bias);
  const double z = 1.0 + std::exp(1.0) + std::exp(-2.0);
  EXPECT_NEAR(probs[0](0, 0), 1.0 / z, 1e-12);
  EXPECT_NEAR(probs[0](0, 1), std::exp(1.0) / z, 1e-12);
  EXPECT_NEAR(probs[0](0, 2), std::exp(-2.0) / z, 1e-12);
}

TEST(Autograd, AttentionBiasShapeChecked) {
  ag::Tape tape(false);
  ag::AttentionBias bias{tape.constant(Matrix::Zero(2, 3)), {0, 1}, 2};
  EXPECT_THROW(ag::attention(tape.constant(Matrix::Zero(2, 4)), tape.constant(Matrix::Zero(2, 4)),
                             tape.constant(Matrix::Zero(2, 4)), 2, ag::AttentionMask{}, nullptr, &bias),
               std::exception);
}

TEST(Autograd, AttentionRowsSumToOne) {
  Rng rng(7);
  ag::Tape tape(false);
  std::vector<Matrix> probs;
  ag::attention(tape.constant(random_matrix(rng, 5, 8)), tape.constant(random_matrix(rng, 8, 8)),
                tape.constant(random_matrix(rng, 8, 8)), 2, ag::AttentionMask{3, true}, &probs);
  ASSERT_EQ(probs.size(), 2u);
  for (const Matrix& p : probs) {
    for (Eigen::Index r = 0; r < p.rows(); ++r) EXPECT_NEAR(p.row(r).sum(), 1.0, 1e-12);
    // Query 0 sees the 3 prefix keys and real key 0 only.
    EXPECT_EQ((p.row(0).array() > 0.0).count(), 4);
  }
}

TEST(Autograd, NllAndGrams) {
  Rng rng(8);
  const std::vector<int> targets = {1, 0, 3};
  expect_grad([&](ag::Tape&, ag::Var a, ag::Var b) { return ag::nll_sum(ag::add(a, b), targets); },
              random_matrix(rng, 3, 5), random_matrix(rng, 3, 5));
  expect_grad([](ag::Tape&, ag::Var a, ag::Var b) { return ag::center_gram(ag::matmul_nt(a, b)); },
              random_matrix(rng, 4, 3), random_matrix(rng, 4, 3));
  expect_grad([](ag::Tape&, ag::Var a, ag::Var b) { return ag::mul(ag::rbf_gram(a, 1.3), ag::matmul_nt(b, b)); },
              random_matrix(rng, 4, 3), random_matrix(rng, 4, 2));
}

TEST(Autograd, UniformLogitsGiveLogVocab) {
  ag::Tape tape(false);
  const std::vector<int> targets = {0, 3, 2, 2};
  ag::Var loss = ag::nll_sum(tape.constant(Matrix::Constant(4, 6, 0.25)), targets);
  EXPECT_NEAR(loss.scalar(), 4.0 * std::log(6.0), 1e-12);
}

TEST(Autograd, FrozenParameterGetsNoGradient) {
  Parameter frozen("w", Matrix::Ones(2, 2), false);
  Parameter live("p", Matrix::Ones(2, 2), true);
  ag::Tape tape;
  ag::Var loss = ag::sum(ag::matmul(tape.param(live), tape.param(frozen)));
  tape.backward(loss);
  EXPECT_EQ(tape.grad_of(frozen), nullptr);
  ASSERT_NE(tape.grad_of(live), nullptr);
  EXPECT_DOUBLE_EQ((*tape.grad_of(live))(0, 0), 2.0);
}

TEST(Autograd, ShapeMismatchThrows) {
  ag::Tape tape;
  EXPECT_THROW(ag::matmul(tape.constant(Matrix::Ones(2, 3)), tape.constant(Matrix::Ones(2, 3))), ShapeError);
  EXPECT_THROW(ag::add(tape.constant(Matrix::Ones(2, 3)), tape.constant(Matrix::Ones(3, 2))), ShapeError);
}

}  // namespace
}  // namespace mprompt
