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

// Reverse-mode automatic differentiation over dense row-major matrices.
//
// A Tape records every operation of one forward pass. Values are owned by the
// tape (or referenced, for parameters that outlive it). Calling backward() on
// a 1x1 node walks the tape in reverse and accumulates gradients into every
// node that requires them. Nodes that do not depend on a trainable leaf never
// allocate a gradient buffer, which is how frozen weights stay gradient-free.

#ifndef MPROMPT_AUTOGRAD_H_
#define MPROMPT_AUTOGRAD_H_

#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

namespace mprompt {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// A named, persistent weight. `trainable` decides whether a tape will
/// track gradients for it.
struct Parameter {
  std::string name;
  Matrix value;
  bool trainable = false;

  Parameter() = default;
  Parameter(std::string n, Matrix v, bool t = false)
      : name(std::move(n)), value(std::move(v)), trainable(t) {}

  std::int64_t size() const { return value.size(); }
};

namespace ag {

class Tape;

/// Handle to a node on a tape. Cheap to copy.
struct Var {
  Tape* tape = nullptr;
  int id = -1;

  bool valid() const { return tape != nullptr && id >= 0; }
  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  double scalar() const { return value()(0, 0); }
};

/// Visibility rule for attention keys. The first `prefix` keys are always
/// visible; with `causal`, query i additionally sees real keys 0..i only.
struct AttentionMask {
  int prefix = 0;
  bool causal = false;

  bool visible(int query, int key) const {
    if (key < prefix) return true;
    return !causal || key - prefix <= query;
  }
};

class Tape {
 public:
  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool grad_enabled() const { return grad_enabled_; }

  /// Constant node; never receives a gradient.
  Var constant(Matrix value);
  /// Owned leaf that may receive a gradient.
  Var leaf(Matrix value, bool requires_grad);
  /// Leaf referencing `p.value`. Repeated calls return the same node.
  Var param(const Parameter& p);

  const Matrix& value(Var v) const;
  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }

  /// Gradient accumulated in `v` by the last backward(); empty if none.
  const Matrix& grad(Var v) const { return nodes_[v.id].grad; }
  /// Gradient for a parameter leaf, or nullptr if it never reached one.
  const Matrix* grad_of(const Parameter& p) const;

  /// Seeds d(root)/d(root) = seed (root must be 1x1) and back-propagates.
  void backward(Var root, double seed = 1.0);

  std::size_t size() const { return nodes_.size(); }

  // Used by operation implementations.
  using BackwardFn = std::function<void(Tape&, int self)>;
  Var push(Matrix value, bool requires_grad, BackwardFn fn);
  void accumulate(int id, const Matrix& g);
  template <typename Expr>
  void accumulate_expr(int id, const Expr& g) {
    Node& n = nodes_[id];
    if (!n.requires_grad) return;
    if (n.grad.size() == 0) {
      n.grad = g;
    } else {
      n.grad += g;
    }
  }
  Matrix& mutable_grad(int id);
  bool needs(int id) const { return nodes_[id].requires_grad; }
  bool any_needs(std::initializer_list<Var> vars) const;

 private:
  struct Node {
    Matrix owned;
    const Matrix* ref = nullptr;
    Matrix grad;
    bool requires_grad = false;
    BackwardFn backward;
  };

  bool grad_enabled_;
  std::vector<Node> nodes_;
  std::unordered_map<const Parameter*, int> param_nodes_;
};

// ---- elementwise / linear algebra ----
Var matmul(Var a, Var b);
/// a * b^T
Var matmul_nt(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
/// Adds a 1 x cols row to every row of `a`.
Var add_row(Var a, Var row);
Var tanh(Var a);
Var relu(Var a);
Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5);
/// Inverted dropout; identity when rate == 0.
Var dropout(Var x, double rate, std::mt19937_64& rng);

// ---- structural ----
Var concat_rows(std::span<const Var> parts);
Var slice_rows(Var a, Eigen::Index start, Eigen::Index count);
Var slice_cols(Var a, Eigen::Index start, Eigen::Index count);
Var gather_rows(Var table, std::span<const int> ids);

// ---- reductions and 1x1 scalars ----
Var sum(Var a);
/// sum(a .* b) as 1x1.
Var frob_inner(Var a, Var b);
Var scalar_mul(Var a, Var b);
Var scalar_div(Var a, Var b);
Var scalar_sqrt(Var a);

// ---- fused ----
/// Multi-head scaled dot-product attention. q is Mq x d, k and v are Mk x d.
/// If `probs` is non-null it receives the per-head probability matrices.
/// Learned additive score bias. `table` is heads x buckets; `bucket` holds
/// one table column per (query, non-prefix key) pair, row-major with
/// `keys` columns. Prefix keys get no bias.
struct AttentionBias {
  Var table;
  std::vector<int> bucket;
  int keys = 0;
};

Var attention(Var q, Var k, Var v, int heads, AttentionMask mask,
              std::vector<Matrix>* probs = nullptr, const AttentionBias* bias = nullptr);
/// Sum over rows of -log softmax(logits)[row, target[row]], as 1x1.
Var nll_sum(Var logits, std::span<const int> targets);
/// H K H with H = I - 11^T / n (double centering of a square Gram matrix).
Var center_gram(Var k);
/// exp(-||x_i - x_j||^2 / (2 sigma^2)) over rows of x; sigma is held fixed.
Var rbf_gram(Var x, double sigma);

}  // namespace ag
}  // namespace mprompt

#endif  // MPROMPT_AUTOGRAD_H_
