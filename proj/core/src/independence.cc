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

#include "mprompt/independence.h"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include <spdlog/spdlog.h>

#include "mprompt/errors.h"

namespace mprompt {

namespace {

void check_pair(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) {
    throw ShapeError("hsic: row counts differ (" + std::to_string(a.rows()) + " vs " +
                     std::to_string(b.rows()) + ")");
  }
  if (a.rows() < 2) throw ShapeError("hsic: prompt matrices need at least 2 rows");
}

}  // namespace

Matrix centering_matrix(int rho) {
  if (rho < 1) throw std::domain_error("centering_matrix: rho must be >= 1");
  return Matrix::Identity(rho, rho) - Matrix::Constant(rho, rho, 1.0 / rho);
}

double median_pairwise_distance(const Matrix& x) {
  std::vector<double> d;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    for (Eigen::Index j = i + 1; j < x.rows(); ++j) d.push_back((x.row(i) - x.row(j)).norm());
  }
  if (d.empty()) return 1.0;
  std::sort(d.begin(), d.end());
  double med = d.size() % 2 == 1 ? d[d.size() / 2] : 0.5 * (d[d.size() / 2 - 1] + d[d.size() / 2]);
  return med > 0.0 ? med : 1.0;
}

Matrix gram(const Matrix& x, KernelKind kernel) {
  if (kernel == KernelKind::kLinear) return x * x.transpose();
  const double sigma = median_pairwise_distance(x);
  const double inv = 1.0 / (2.0 * sigma * sigma);
  Matrix k(x.rows(), x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    for (Eigen::Index j = 0; j < x.rows(); ++j) {
      k(i, j) = std::exp(-(x.row(i) - x.row(j)).squaredNorm() * inv);
    }
  }
  return k;
}

double hsic(const Matrix& a, const Matrix& b, KernelKind kernel) {
  check_pair(a, b);
  const double rho = static_cast<double>(a.rows());
  const Matrix k = gram(a, kernel);
  const Matrix l = gram(b, kernel);
  // tr(KL) for symmetric K, L is the elementwise inner product.
  const double tr_kl = k.cwiseProduct(l).sum();
  const double one_kl_one = (k.colwise().sum() * l.rowwise().sum())(0, 0);
  const double sum_k = k.sum();
  const double sum_l = l.sum();
  const double raw = tr_kl - 2.0 / rho * one_kl_one + sum_k * sum_l / (rho * rho);
  return raw / ((rho - 1.0) * (rho - 1.0));
}

CkaValue cka_checked(const Matrix& a, const Matrix& b, KernelKind kernel) {
  const double hab = hsic(a, b, kernel);
  const double haa = hsic(a, a, kernel);
  const double hbb = hsic(b, b, kernel);
  if (haa <= kCkaDegenerateEps || hbb <= kCkaDegenerateEps) {
    spdlog::warn("cka: degenerate (constant) prompt, self-HSIC {:.3e} / {:.3e}; using 0", haa, hbb);
    return {0.0, true};
  }
  return {std::clamp(hab / std::sqrt(haa * hbb), 0.0, 1.0), false};
}

PairSample all_pairs(int n) {
  PairSample out;
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) out.emplace_back(i, j);
  }
  return out;
}

PairSample sample_pairs(int n, int m, Rng& rng) {
  if (n < 2 || m <= 0) return {};
  PairSample pool = all_pairs(n);
  if (static_cast<std::size_t>(m) >= pool.size()) return pool;
  // Partial Fisher-Yates: the first m slots become a uniform sample.
  for (std::size_t i = 0; i < static_cast<std::size_t>(m); ++i) {
    std::size_t j = i + static_cast<std::size_t>(uniform_index(rng, pool.size() - i));
    std::swap(pool[i], pool[j]);
  }
  pool.resize(static_cast<std::size_t>(m));
  std::sort(pool.begin(), pool.end());
  return pool;
}

double l_idp(std::span<const Matrix> prompts, const PairSample& pairs, KernelKind kernel) {
  double total = 0.0;
  for (auto [i, j] : pairs) {
    total += cka(prompts[static_cast<std::size_t>(i)], prompts[static_cast<std::size_t>(j)], kernel);
  }
  return total;
}

Matrix cka_matrix(std::span<const Matrix> prompts, KernelKind kernel) {
  const auto n = static_cast<Eigen::Index>(prompts.size());
  Matrix out = Matrix::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i; j < n; ++j) {
      double v = cka(prompts[static_cast<std::size_t>(i)], prompts[static_cast<std::size_t>(j)], kernel);
      out(i, j) = v;
      out(j, i) = v;
    }
  }
  return out;
}

double mean_pairwise_cka(std::span<const Matrix> prompts, KernelKind kernel) {
  const int n = static_cast<int>(prompts.size());
  if (n < 2) return 0.0;
  return l_idp(prompts, all_pairs(n), kernel) / (n * (n - 1) / 2.0);
}

namespace ag {

namespace {

Var gram_var(Var x, KernelKind kernel) {
  if (kernel == KernelKind::kLinear) return matmul_nt(x, x);
  return rbf_gram(x, median_pairwise_distance(x.value()));
}

}  // namespace

Var hsic(Var a, Var b, KernelKind kernel) {
  check_pair(a.value(), b.value());
  const double rho = static_cast<double>(a.rows());
  Var kc = center_gram(gram_var(a, kernel));
  Var l = gram_var(b, kernel);
  return scale(frob_inner(kc, l), 1.0 / ((rho - 1.0) * (rho - 1.0)));
}

Var cka(Var a, Var b, KernelKind kernel, bool* degenerate) {
  Tape& t = *a.tape;
  Var hab = hsic(a, b, kernel);
  Var haa = hsic(a, a, kernel);
  Var hbb = hsic(b, b, kernel);
  const bool degen = haa.scalar() <= kCkaDegenerateEps || hbb.scalar() <= kCkaDegenerateEps;
  if (degenerate != nullptr) *degenerate = degen;
  if (degen) {
    spdlog::warn("cka: degenerate (constant) prompt, self-HSIC {:.3e} / {:.3e}; using 0",
                 haa.scalar(), hbb.scalar());
    return t.constant(Matrix::Zero(1, 1));
  }
  Var out = scalar_div(hab, scalar_sqrt(scalar_mul(haa, hbb)));
  const double v = out.scalar();
  if (v < 0.0 || v > 1.0) return t.constant(Matrix::Constant(1, 1, std::clamp(v, 0.0, 1.0)));
  return out;
}

Var l_idp(std::span<const Var> prompts, const PairSample& pairs, KernelKind kernel) {
  if (prompts.empty()) throw ShapeError("l_idp: no prompts");
  Tape& t = *prompts[0].tape;
  Var total = t.constant(Matrix::Zero(1, 1));
  for (auto [i, j] : pairs) {
    total = add(total, cka(prompts[static_cast<std::size_t>(i)], prompts[static_cast<std::size_t>(j)], kernel));
  }
  return total;
}

}  // namespace ag
}  // namespace mprompt
