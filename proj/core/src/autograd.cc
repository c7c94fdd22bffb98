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

#include <cmath>
#include <limits>

#include "mprompt/errors.h"

namespace mprompt::ag {

namespace {

void require(bool cond, const char* what) {
  if (!cond) throw ShapeError(what);
}

Tape& tape_of(Var a) {
  require(a.valid(), "autograd: invalid Var");
  return *a.tape;
}

Tape& tape_of(Var a, Var b) {
  require(a.tape == b.tape, "autograd: operands live on different tapes");
  return tape_of(a);
}

}  // namespace

const Matrix& Var::value() const { return tape->value(*this); }

Var Tape::push(Matrix value, bool requires_grad, BackwardFn fn) {
  Node n;
  n.owned = std::move(value);
  n.requires_grad = grad_enabled_ && requires_grad;
  if (n.requires_grad) n.backward = std::move(fn);
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::constant(Matrix value) { return push(std::move(value), false, nullptr); }

Var Tape::leaf(Matrix value, bool requires_grad) {
  return push(std::move(value), requires_grad, nullptr);
}

Var Tape::param(const Parameter& p) {
  if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) {
    return Var{this, it->second};
  }
  Node n;
  n.ref = &p.value;
  n.requires_grad = grad_enabled_ && p.trainable;
  nodes_.push_back(std::move(n));
  int id = static_cast<int>(nodes_.size()) - 1;
  param_nodes_.emplace(&p, id);
  return Var{this, id};
}

const Matrix& Tape::value(Var v) const {
  const Node& n = nodes_[v.id];
  return n.ref != nullptr ? *n.ref : n.owned;
}

const Matrix* Tape::grad_of(const Parameter& p) const {
  auto it = param_nodes_.find(&p);
  if (it == param_nodes_.end()) return nullptr;
  const Node& n = nodes_[it->second];
  if (n.grad.size() == 0) return nullptr;
  return &n.grad;
}

void Tape::accumulate(int id, const Matrix& g) { accumulate_expr(id, g); }

Matrix& Tape::mutable_grad(int id) {
  Node& n = nodes_[id];
  if (n.grad.size() == 0) {
    const Matrix& v = value(Var{this, id});
    n.grad = Matrix::Zero(v.rows(), v.cols());
  }
  return n.grad;
}

bool Tape::any_needs(std::initializer_list<Var> vars) const {
  for (Var v : vars) {
    if (nodes_[v.id].requires_grad) return true;
  }
  return false;
}

void Tape::backward(Var root, double seed) {
  require(root.tape == this, "backward: root on a different tape");
  const Matrix& rv = value(root);
  require(rv.rows() == 1 && rv.cols() == 1, "backward: root must be 1x1");
  if (!nodes_[root.id].requires_grad) return;
  for (Node& n : nodes_) n.grad.resize(0, 0);
  nodes_[root.id].grad = Matrix::Constant(1, 1, seed);
  for (int id = root.id; id >= 0; --id) {
    Node& n = nodes_[id];
    if (!n.requires_grad || !n.backward || n.grad.size() == 0) continue;
    n.backward(*this, id);
  }
}

// ---- elementwise / linear algebra ----

Var matmul(Var a, Var b) {
  Tape& t = tape_of(a, b);
  require(a.cols() == b.rows(), "matmul: inner dimension mismatch");
  Matrix out = a.value() * b.value();
  return t.push(std::move(out), t.any_needs({a, b}), [a, b](Tape& t, int self) {
    const Matrix& g = t.grad(Var{&t, self});
    if (t.needs(a.id)) t.accumulate_expr(a.id, g * b.value().transpose());
    if (t.needs(b.id)) t.accumulate_expr(b.id, a.value().transpose() * g);
  });
}

Var matmul_nt(Var a, Var b) {
  Tape& t = tape_of(a, b);
  require(a.cols() == b.cols(), "matmul_nt: inner dimension mismatch");
  Matrix out = a.value() * b.value().transpose();
  return t.push(std::move(out), t.any_needs({a, b}), [a, b](Tape& t, int self) {
    const Matrix& g = t.grad(Var{&t, self});
    if (t.needs(a.id)) t.accumulate_expr(a.id, g * b.value());
    if (t.needs(b.id)) t.accumulate_expr(b.id, g.transpose() * a.value());
  });
}

Var add(Var a, Var b) {
  Tape& t = tape_of(a, b);
  require(a.rows() == b.rows() && a.cols() == b.cols(), "add: shape mismatch");
  Matrix out = a.value() + b.value();
  return t.push(std::move(out), t.any_needs({a, b}), [a, b](Tape& t, int self) {
    const Matrix& g = t.grad(Var{&t, self});
    t.accumulate_expr(a.id, g);
    t.accumulate_expr(b.id, g);
  });
}

Var sub(Var a, Var b) {
  Tape& t = tape_of(a, b);
  require(a.rows() == b.rows() && a.cols() == b.cols(), "sub: shape mismatch");
  Matrix out = a.value() - b.value();
  return t.push(std::move(out), t.any_needs({a, b}), [a, b](Tape& t, int self) {
    const Matrix& g = t.grad(Var{&t, self});
    t.accumulate_expr(a.id, g);
    t.accumulate_expr(b.id, -g);
  });
}

Var mul(Var a, Var b) {
  Tape& t = tape_of(a, b);
  require(a.rows() == b.rows() && a.cols() == b.cols(), "mul: shape mismatch");
  Matrix out = a.value().cwiseProduct(b.value());
  return t.push(std::move(out), t.any_needs({a, b}), [a, b](Tape& t, int self) {
    const Matrix& g = t.grad(Var{&t, self});
    if (t.needs(a.id)) t.accumulate_expr(a.id, g.cwiseProduct(b.value()));
    if (t.needs(b.id)) t.accumulate_expr(b.id, g.cwiseProduct(a.value()));
  });
}

Var scale(Var a, double s) {
  Tape& t = tape_of(a);
  Matrix out = a.value() * s;
  return t.push(std::move(out), t.needs(a.id), [a, s](Tape& t, int self) {
    t.accumulate_expr(a.id, t.grad(Var{&t, self}) * s);
  });
}

Var add_row(Var a, Var row) {
  Tape& t = tape_of(a, row);
  require(row.rows() == 1 && row.cols() == a.cols(), "add_row: shape mismatch");
  Matrix out = a.value().rowwise() + row.value().row(0);
  return t.push(std::move(out), t.any_needs({a, row}), [a, row](Tape& t, int self) {
    const Matrix& g = t.grad(Var{&t, self});
    t.accumulate_expr(a.id, g);
    if (t.needs(row.id)) t.accumulate_expr(row.id, g.colwise().sum());
  });
}

Var tanh(Var a) {
  Tape& t = tape_of(a);
  Matrix out = a.value().array().tanh().matrix();
  return t.push(std::move(out), t.needs(a.id), [a](Tape& t, int self) {
    const Matrix& y = t.value(Var{&t, self});
    const Matrix& g = t.grad(Var{&t, self});
    t.accumulate_expr(a.id, (g.array() * (1.0 - y.array().square())).matrix());
  });
}

Var relu(Var a) {
  Tape& t = tape_of(a);
  Matrix out = a.value().cwiseMax(0.0);
  return t.push(std::move(out), t.needs(a.id), [a](Tape& t, int self) {
    const Matrix& g = t.grad(Var{&t, self});
    const Matrix& x = a.value();
    t.accumulate_expr(a.id, (g.array() * (x.array() > 0.0).cast<double>()).matrix());
  });
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
  Tape& t = tape_of(x, gain);
  require(gain.rows() == 1 && gain.cols() == x.cols(), "layer_norm: gain shape");
  require(bias.rows() == 1 && bias.cols() == x.cols(), "layer_norm: bias shape");
  const Matrix& xv = x.value();
  const Eigen::Index n = xv.rows();
  const Eigen::Index d = xv.cols();
  Matrix xhat(n, d);
  Eigen::VectorXd inv_std(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    double mean = xv.row(i).mean();
    double var = (xv.row(i).array() - mean).square().mean();
    inv_std(i) = 1.0 / std::sqrt(var + eps);
    xhat.row(i) = (xv.row(i).array() - mean) * inv_std(i);
  }
  Matrix out = (xhat.array().rowwise() * gain.value().row(0).array()).matrix();
  out.rowwise() += bias.value().row(0);
  return t.push(std::move(out), t.any_needs({x, gain, bias}),
                [x, gain, bias, xhat = std::move(xhat), inv_std = std::move(inv_std)](
                    Tape& t, int self) {
                  const Matrix& g = t.grad(Var{&t, self});
                  if (t.needs(gain.id)) {
                    t.accumulate_expr(gain.id, g.cwiseProduct(xhat).colwise().sum());
                  }
                  if (t.needs(bias.id)) t.accumulate_expr(bias.id, g.colwise().sum());
                  if (t.needs(x.id)) {
                    const double d = static_cast<double>(xhat.cols());
                    Matrix dxhat = (g.array().rowwise() * gain.value().row(0).array()).matrix();
                    Matrix dx(xhat.rows(), xhat.cols());
                    for (Eigen::Index i = 0; i < xhat.rows(); ++i) {
                      double m1 = dxhat.row(i).sum() / d;
                      double m2 = dxhat.row(i).dot(xhat.row(i)) / d;
                      dx.row(i) =
                          (dxhat.row(i).array() - m1 - xhat.row(i).array() * m2) * inv_std(i);
                    }
                    t.accumulate_expr(x.id, dx);
                  }
                });
}

Var dropout(Var x, double rate, std::mt19937_64& rng) {
  if (rate <= 0.0) return x;
  Tape& t = tape_of(x);
  require(rate < 1.0, "dropout: rate must be < 1");
  const double keep = 1.0 - rate;
  Matrix mask(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < mask.size(); ++i) {
    // Top 53 bits -> uniform [0, 1), identical on every platform.
    double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    mask.data()[i] = u < keep ? 1.0 / keep : 0.0;
  }
  Matrix out = x.value().cwiseProduct(mask);
  return t.push(std::move(out), t.needs(x.id), [x, mask = std::move(mask)](Tape& t, int self) {
    t.accumulate_expr(x.id, t.grad(Var{&t, self}).cwiseProduct(mask));
  });
}

// ---- structural ----

Var concat_rows(std::span<const Var> parts) {
  require(!parts.empty(), "concat_rows: no parts");
  Tape& t = tape_of(parts[0]);
  Eigen::Index rows = 0;
  const Eigen::Index cols = parts[0].cols();
  bool needs = false;
  for (Var p : parts) {
    require(p.tape == &t, "concat_rows: operands live on different tapes");
    require(p.cols() == cols, "concat_rows: column mismatch");
    rows += p.rows();
    needs = needs || t.needs(p.id);
  }
  Matrix out(rows, cols);
  std::vector<std::pair<int, Eigen::Index>> spans;
  Eigen::Index r = 0;
  for (Var p : parts) {
    out.middleRows(r, p.rows()) = p.value();
    spans.emplace_back(p.id, r);
    r += p.rows();
  }
  return t.push(std::move(out), needs, [spans = std::move(spans)](Tape& t, int self) {
    const Matrix& g = t.grad(Var{&t, self});
    for (auto [id, start] : spans) {
      if (!t.needs(id)) continue;
      t.accumulate_expr(id, g.middleRows(start, t.value(Var{&t, id}).rows()));
    }
  });
}

Var slice_rows(Var a, Eigen::Index start, Eigen::Index count) {
  Tape& t = tape_of(a);
  require(start >= 0 && count >= 0 && start + count <= a.rows(), "slice_rows: out of range");
  Matrix out = a.value().middleRows(start, count);
  return t.push(std::move(out), t.needs(a.id), [a, start, count](Tape& t, int self) {
    Matrix& ga = t.mutable_grad(a.id);
    ga.middleRows(start, count) += t.grad(Var{&t, self});
  });
}

Var slice_cols(Var a, Eigen::Index start, Eigen::Index count) {
  Tape& t = tape_of(a);
  require(start >= 0 && count >= 0 && start + count <= a.cols(), "slice_cols: out of range");
  Matrix out = a.value().middleCols(start, count);
  return t.push(std::move(out), t.needs(a.id), [a, start, count](Tape& t, int self) {
    Matrix& ga = t.mutable_grad(a.id);
    ga.middleCols(start, count) += t.grad(Var{&t, self});
  });
}

Var gather_rows(Var table, std::span<const int> ids) {
  Tape& t = tape_of(table);
  const Matrix& tv = table.value();
  Matrix out(static_cast<Eigen::Index>(ids.size()), tv.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    require(ids[i] >= 0 && ids[i] < tv.rows(), "gather_rows: id out of range");
    out.row(static_cast<Eigen::Index>(i)) = tv.row(ids[i]);
  }
  std::vector<int> idx(ids.begin(), ids.end());
  return t.push(std::move(out), t.needs(table.id), [table, idx = std::move(idx)](Tape& t, int self) {
    const Matrix& g = t.grad(Var{&t, self});
    Matrix& gt = t.mutable_grad(table.id);
    for (std::size_t i = 0; i < idx.size(); ++i) gt.row(idx[i]) += g.row(static_cast<Eigen::Index>(i));
  });
}

// ---- reductions and scalars ----

Var sum(Var a) {
  Tape& t = tape_of(a);
  Matrix out = Matrix::Constant(1, 1, a.value().sum());
  return t.push(std::move(out), t.needs(a.id), [a](Tape& t, int self) {
    double g = t.grad(Var{&t, self})(0, 0);
    t.accumulate_expr(a.id, Matrix::Constant(a.rows(), a.cols(), g));
  });
}

Var frob_inner(Var a, Var b) {
  Tape& t = tape_of(a, b);
  require(a.rows() == b.rows() && a.cols() == b.cols(), "frob_inner: shape mismatch");
  Matrix out = Matrix::Constant(1, 1, a.value().cwiseProduct(b.value()).sum());
  return t.push(std::move(out), t.any_needs({a, b}), [a, b](Tape& t, int self) {
    double g = t.grad(Var{&t, self})(0, 0);
    if (t.needs(a.id)) t.accumulate_expr(a.id, b.value() * g);
    if (t.needs(b.id)) t.accumulate_expr(b.id, a.value() * g);
  });
}

Var scalar_mul(Var a, Var b) {
  Tape& t = tape_of(a, b);
  require(a.value().size() == 1 && b.value().size() == 1, "scalar_mul: operands must be 1x1");
  Matrix out = Matrix::Constant(1, 1, a.scalar() * b.scalar());
  return t.push(std::move(out), t.any_needs({a, b}), [a, b](Tape& t, int self) {
    double g = t.grad(Var{&t, self})(0, 0);
    t.accumulate_expr(a.id, Matrix::Constant(1, 1, g * b.scalar()));
    t.accumulate_expr(b.id, Matrix::Constant(1, 1, g * a.scalar()));
  });
}

Var scalar_div(Var a, Var b) {
  Tape& t = tape_of(a, b);
  require(a.value().size() == 1 && b.value().size() == 1, "scalar_div: operands must be 1x1");
  Matrix out = Matrix::Constant(1, 1, a.scalar() / b.scalar());
  return t.push(std::move(out), t.any_needs({a, b}), [a, b](Tape& t, int self) {
    double g = t.grad(Var{&t, self})(0, 0);
    double bv = b.scalar();
    t.accumulate_expr(a.id, Matrix::Constant(1, 1, g / bv));
    t.accumulate_expr(b.id, Matrix::Constant(1, 1, -g * a.scalar() / (bv * bv)));
  });
}

Var scalar_sqrt(Var a) {
  Tape& t = tape_of(a);
  require(a.value().size() == 1, "scalar_sqrt: operand must be 1x1");
  double y = std::sqrt(a.scalar());
  return t.push(Matrix::Constant(1, 1, y), t.needs(a.id), [a, y](Tape& t, int self) {
    double g = t.grad(Var{&t, self})(0, 0);
    t.accumulate_expr(a.id, Matrix::Constant(1, 1, g * 0.5 / y));
  });
}

// ---- fused ----

Var attention(Var q, Var k, Var v, int heads, AttentionMask mask, std::vector<Matrix>* probs,
              const AttentionBias* bias) {
  Tape& t = tape_of(q, k);
  require(v.tape == &t, "attention: operands live on different tapes");
  if (bias != nullptr) {
    require(bias->table.tape == &t, "attention: bias lives on a different tape");
    require(bias->table.rows() == heads, "attention: bias table needs one row per head");
    require(bias->keys == k.rows() - mask.prefix &&
                static_cast<Eigen::Index>(bias->bucket.size()) == q.rows() * bias->keys,
            "attention: bias bucket shape mismatch");
    for (int b : bias->bucket) require(b >= 0 && b < bias->table.cols(), "attention: bias bucket out of range");
  }
  require(q.cols() == k.cols() && k.cols() == v.cols(), "attention: width mismatch");
  require(k.rows() == v.rows(), "attention: key/value length mismatch");
  require(heads >= 1 && q.cols() % heads == 0, "attention: heads must divide width");
  const Eigen::Index mq = q.rows();
  const Eigen::Index mk = k.rows();
  const Eigen::Index dh = q.cols() / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  const Matrix& qv = q.value();
  const Matrix& kv = k.value();
  const Matrix& vv = v.value();

  std::vector<Matrix> p(static_cast<std::size_t>(heads));
  Matrix out(mq, q.cols());
  for (int h = 0; h < heads; ++h) {
    Matrix s = qv.middleCols(h * dh, dh) * kv.middleCols(h * dh, dh).transpose() * inv_sqrt;
    if (bias != nullptr) {
      const Matrix& tb = bias->table.value();
      for (Eigen::Index i = 0; i < mq; ++i) {
        for (int j = 0; j < bias->keys; ++j) {
          s(i, mask.prefix + j) += tb(h, bias->bucket[static_cast<std::size_t>(i * bias->keys + j)]);
        }
      }
    }
    for (Eigen::Index i = 0; i < mq; ++i) {
      double mx = -std::numeric_limits<double>::infinity();
      for (Eigen::Index j = 0; j < mk; ++j) {
        if (!mask.visible(static_cast<int>(i), static_cast<int>(j))) {
          s(i, j) = -std::numeric_limits<double>::infinity();
        } else {
          mx = std::max(mx, s(i, j));
        }
      }
      require(std::isfinite(mx), "attention: query with no visible keys");
      double z = 0.0;
      for (Eigen::Index j = 0; j < mk; ++j) {
        double e = std::isinf(s(i, j)) ? 0.0 : std::exp(s(i, j) - mx);
        s(i, j) = e;
        z += e;
      }
      s.row(i) /= z;
    }
    out.middleCols(h * dh, dh) = s * vv.middleCols(h * dh, dh);
    p[static_cast<std::size_t>(h)] = std::move(s);
  }
  if (probs != nullptr) *probs = p;

  Var table;
  std::vector<int> bucket;
  int keys = 0;
  const int prefix = mask.prefix;
  if (bias != nullptr && t.needs(bias->table.id)) {
    table = bias->table;
    bucket = bias->bucket;
    keys = bias->keys;
  }
  const bool needs = t.any_needs({q, k, v}) || table.valid();
  return t.push(std::move(out), needs,
                [q, k, v, heads, dh, inv_sqrt, p = std::move(p), table, bucket = std::move(bucket), keys,
                 prefix](Tape& t, int self) {
                  const Matrix& g = t.grad(Var{&t, self});
                  const Matrix& qv = q.value();
                  const Matrix& kv = k.value();
                  const Matrix& vv = v.value();
                  Matrix dq, dk, dv;
                  if (t.needs(q.id)) dq = Matrix::Zero(qv.rows(), qv.cols());
                  if (t.needs(k.id)) dk = Matrix::Zero(kv.rows(), kv.cols());
                  if (t.needs(v.id)) dv = Matrix::Zero(vv.rows(), vv.cols());
                  Matrix dtable;
                  if (table.valid()) dtable = Matrix::Zero(table.rows(), table.cols());
                  for (int h = 0; h < heads; ++h) {
                    const Matrix& ph = p[static_cast<std::size_t>(h)];
                    auto gh = g.middleCols(h * dh, dh);
                    if (dv.size() != 0) dv.middleCols(h * dh, dh) += ph.transpose() * gh;
                    if (dq.size() == 0 && dk.size() == 0 && dtable.size() == 0) continue;
                    Matrix dp = gh * vv.middleCols(h * dh, dh).transpose();
                    Eigen::VectorXd rs = dp.cwiseProduct(ph).rowwise().sum();
                    Matrix ds = (ph.array() * (dp.colwise() - rs).array()).matrix();
                    if (dtable.size() != 0) {
                      for (Eigen::Index i = 0; i < ds.rows(); ++i) {
                        for (int j = 0; j < keys; ++j) {
                          dtable(h, bucket[static_cast<std::size_t>(i * keys + j)]) += ds(i, prefix + j);
                        }
                      }
                    }
                    ds *= inv_sqrt;
                    if (dq.size() != 0) dq.middleCols(h * dh, dh) += ds * kv.middleCols(h * dh, dh);
                    if (dk.size() != 0) {
                      dk.middleCols(h * dh, dh) += ds.transpose() * qv.middleCols(h * dh, dh);
                    }
                  }
                  if (dq.size() != 0) t.accumulate_expr(q.id, dq);
                  if (dk.size() != 0) t.accumulate_expr(k.id, dk);
                  if (dv.size() != 0) t.accumulate_expr(v.id, dv);
                  if (dtable.size() != 0) t.accumulate_expr(table.id, dtable);
                });
}

Var nll_sum(Var logits, std::span<const int> targets) {
  Tape& t = tape_of(logits);
  const Matrix& lv = logits.value();
  require(static_cast<Eigen::Index>(targets.size()) == lv.rows(), "nll_sum: one target per row");
  Matrix soft(lv.rows(), lv.cols());
  double loss = 0.0;
  for (Eigen::Index i = 0; i < lv.rows(); ++i) {
    int y = targets[static_cast<std::size_t>(i)];
    require(y >= 0 && y < lv.cols(), "nll_sum: target out of range");
    double mx = lv.row(i).maxCoeff();
    soft.row(i) = (lv.row(i).array() - mx).exp();
    double z = soft.row(i).sum();
    soft.row(i) /= z;
    loss += -(lv(i, y) - mx - std::log(z));
  }
  std::vector<int> ys(targets.begin(), targets.end());
  return t.push(Matrix::Constant(1, 1, loss), t.needs(logits.id),
                [logits, soft = std::move(soft), ys = std::move(ys)](Tape& t, int self) {
                  double g = t.grad(Var{&t, self})(0, 0);
                  Matrix d = soft * g;
                  for (std::size_t i = 0; i < ys.size(); ++i) d(static_cast<Eigen::Index>(i), ys[i]) -= g;
                  t.accumulate_expr(logits.id, d);
                });
}

namespace {

// H A H for square A; H is symmetric so the adjoint is the same map.
Matrix double_center(const Matrix& a) {
  Eigen::RowVectorXd col_mean = a.colwise().mean();
  Eigen::VectorXd row_mean = a.rowwise().mean();
  double all = a.mean();
  Matrix out = a;
  out.rowwise() -= col_mean;
  out.colwise() -= row_mean;
  out.array() += all;
  return out;
}

}  // namespace

Var center_gram(Var k) {
  Tape& t = tape_of(k);
  require(k.rows() == k.cols(), "center_gram: matrix must be square");
  return t.push(double_center(k.value()), t.needs(k.id), [k](Tape& t, int self) {
    t.accumulate_expr(k.id, double_center(t.grad(Var{&t, self})));
  });
}

Var rbf_gram(Var x, double sigma) {
  Tape& t = tape_of(x);
  require(sigma > 0.0, "rbf_gram: sigma must be positive");
  const Matrix& xv = x.value();
  const Eigen::Index n = xv.rows();
  const double inv = 1.0 / (2.0 * sigma * sigma);
  Matrix kmat(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      kmat(i, j) = std::exp(-(xv.row(i) - xv.row(j)).squaredNorm() * inv);
    }
  }
  return t.push(kmat, t.needs(x.id), [x, inv](Tape& t, int self) {
    const Matrix& g = t.grad(Var{&t, self});
    const Matrix& kv = t.value(Var{&t, self});
    const Matrix& xv = x.value();
    // dK_ij/dx_i = -2 inv K_ij (x_i - x_j); symmetric contributions from g_ij and g_ji.
    Matrix w = (g + g.transpose()).cwiseProduct(kv) * (-2.0 * inv);
    Eigen::VectorXd rs = w.rowwise().sum();
    Matrix dx = (xv.array().colwise() * rs.array()).matrix() - w * xv;
    t.accumulate_expr(x.id, dx);
  });
}

}  // namespace mprompt::ag
