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

// Kernel independence measures between prompt matrices (rows = prompt
// tokens): HSIC, its normalized form CKA, and the sampled-pair sum used as
// an independence penalty on domain prompts.
//
// Two entry points exist for every measure: a plain one over Matrix values
// and a differentiable one over autograd Vars. Both compute the same number.

#ifndef MPROMPT_INDEPENDENCE_H_
#define MPROMPT_INDEPENDENCE_H_

#include <span>
#include <utility>
#include <vector>

#include "mprompt/autograd.h"
#include "mprompt/rng.h"

namespace mprompt {

enum class KernelKind { kLinear, kRbf };

/// Below this self-HSIC a prompt is treated as constant and CKA is 0.
inline constexpr double kCkaDegenerateEps = 1e-12;

/// I - (1/rho) 11^T. Throws std::domain_error for rho < 1.
Matrix centering_matrix(int rho);

/// Row Gram matrix. RBF bandwidth is the median pairwise row distance.
Matrix gram(const Matrix& x, KernelKind kernel = KernelKind::kLinear);
double median_pairwise_distance(const Matrix& x);

/// tr(K H L H) / (rho - 1)^2 via the expanded form
/// tr(KL) - (2/rho) 1'KL1 + (1/rho^2)(1'K1)(1'L1); never forms H.
double hsic(const Matrix& a, const Matrix& b, KernelKind kernel = KernelKind::kLinear);

struct CkaValue {
  double value = 0.0;
  bool degenerate = false;
};

CkaValue cka_checked(const Matrix& a, const Matrix& b, KernelKind kernel = KernelKind::kLinear);
inline double cka(const Matrix& a, const Matrix& b, KernelKind kernel = KernelKind::kLinear) {
  return cka_checked(a, b, kernel).value;
}

/// Unordered domain-index pairs (i < j), sorted.
using PairSample = std::vector<std::pair<int, int>>;

/// min(m, n(n-1)/2) distinct pairs drawn uniformly; empty for n < 2.
PairSample sample_pairs(int n, int m, Rng& rng);
PairSample all_pairs(int n);

double l_idp(std::span<const Matrix> prompts, const PairSample& pairs,
             KernelKind kernel = KernelKind::kLinear);

/// n x n matrix of pairwise CKA (ones on the diagonal for non-degenerate prompts).
Matrix cka_matrix(std::span<const Matrix> prompts, KernelKind kernel = KernelKind::kLinear);
/// Mean of the strictly upper triangle of cka_matrix; 0 when n < 2.
double mean_pairwise_cka(std::span<const Matrix> prompts, KernelKind kernel = KernelKind::kLinear);

namespace ag {

Var hsic(Var a, Var b, KernelKind kernel = KernelKind::kLinear);
/// Returns a constant 0 (and sets *degenerate) when either self-HSIC is
/// at or below kCkaDegenerateEps.
Var cka(Var a, Var b, KernelKind kernel = KernelKind::kLinear, bool* degenerate = nullptr);
/// Sum of CKA over `pairs`, accumulated in pair order. A 1x1 zero constant
/// when `pairs` is empty.
Var l_idp(std::span<const Var> prompts, const PairSample& pairs,
          KernelKind kernel = KernelKind::kLinear);

}  // namespace ag
}  // namespace mprompt

#endif  // MPROMPT_INDEPENDENCE_H_
