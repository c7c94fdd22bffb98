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

#ifndef MPROMPT_TESTS_TEST_UTIL_H_
#define MPROMPT_TESTS_TEST_UTIL_H_

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "mprompt/autograd.h"
#include "mprompt/rng.h"

namespace mprompt::testing {

inline Matrix random_matrix(Rng& rng, int rows, int cols, double scale = 1.0) {
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = scale * normal01(rng);
  return m;
}

/// |a - n| / max(|a|, |n|), with magnitudes below `floor` treated as `floor`.
inline double rel_error(double analytic, double numeric, double floor = 1e-6) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Central difference of f with respect to one entry of `value`.
inline double central_difference(Matrix& value, Eigen::Index index, const std::function<double()>& f,
                                 double h = 1e-5) {
  const double saved = value.data()[index];
  value.data()[index] = saved + h;
  const double up = f();
  value.data()[index] = saved - h;
  const double down = f();
  value.data()[index] = saved;
  return (up - down) / (2.0 * h);
}

struct GradCheck {
  int checked = 0;
  double worst = 0.0;
  std::string worst_where;
};

/// Compares `analytic` (same shape as p.value) against central differences
/// of f on up to `samples` random entries of p.
inline void check_entries(Parameter& p, const Matrix& analytic, const std::function<double()>& f, int samples,
                          Rng& rng, GradCheck& out) {
  const Eigen::Index n = p.value.size();
  for (int s = 0; s < samples && n > 0; ++s) {
    const auto idx = static_cast<Eigen::Index>(uniform_index(rng, static_cast<std::uint64_t>(n)));
    const double num = central_difference(p.value, idx, f);
    const double err = rel_error(analytic.data()[idx], num);
    ++out.checked;
    if (err > out.worst) {
      out.worst = err;
      out.worst_where = p.name + "[" + std::to_string(idx) + "] analytic=" + std::to_string(analytic.data()[idx]) +
                        " numeric=" + std::to_string(num);
    }
  }
}

}  // namespace mprompt::testing

#endif  // MPROMPT_TESTS_TEST_UTIL_H_
