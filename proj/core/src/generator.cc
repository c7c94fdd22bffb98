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

#include "mprompt/generator.h"

#include <spdlog/spdlog.h>

#include "mprompt/errors.h"
#include "mprompt/qa_data.h"

namespace mprompt {

Eigen::RowVectorXd GeneratorModel::embedded_token(int id) const {
  const Matrix& table = net_.embedding().value;
  if (id < 0 || id >= table.rows()) throw ShapeError("embedded_token: id out of range");
  return table.row(id);
}

ag::Var GeneratorModel::prompt_states(ag::Tape& tape, std::span<const int> context_ids,
                                      ag::Var prompt_rows, const ForwardOptions& opts) const {
  if (prompt_rows.cols() != d_model()) {
    throw ShapeError("generator: prompt width " + std::to_string(prompt_rows.cols()) +
                     " != generator width " + std::to_string(d_model()));
  }
  if (prompt_rows.rows() > max_len_) {
    throw ShapeError("generator: prompt longer than generator max length");
  }
  std::span<const int> ctx = context_ids;
  if (static_cast<int>(ctx.size()) > max_len_) {
    spdlog::warn("generator: context of {} tokens truncated to {}", ctx.size(), max_len_);
    ctx = ctx.first(static_cast<std::size_t>(max_len_));
  }
  static const int kEmptyContext[] = {Vocabulary::kUnk};
  if (ctx.empty()) ctx = kEmptyContext;
  ag::Var memory = net_.encode(tape, ctx, {}, opts);
  return net_.decode(tape, prompt_rows, memory, /*causal=*/false, {}, {}, opts);
}

}  // namespace mprompt
