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

#include "mprompt/metrics.h"

#include <algorithm>
#include <cctype>
#include <unordered_map>

namespace mprompt {

std::vector<std::string> rouge_tokens(std::string_view text) {
  std::string cleaned;
  cleaned.reserve(text.size());
  for (char ch : text) {
    auto c = static_cast<unsigned char>(ch);
    if (std::ispunct(c)) continue;
    cleaned.push_back(static_cast<char>(std::tolower(c)));
  }
  return split_whitespace(cleaned);
}

std::vector<std::string> normalize(std::string_view text) {
  std::vector<std::string> out;
  for (std::string& tok : rouge_tokens(text)) {
    if (tok == "a" || tok == "an" || tok == "the") continue;
    out.push_back(std::move(tok));
  }
  return out;
}

namespace {

double f1_of(double precision, double recall, double beta) {
  if (precision <= 0.0 || recall <= 0.0) return 0.0;
  const double b2 = beta * beta;
  return (1.0 + b2) * precision * recall / (recall + b2 * precision);
}

double single_f1(const std::vector<std::string>& p, const std::vector<std::string>& g) {
  if (p.empty() && g.empty()) return 1.0;
  if (p.empty() || g.empty()) return 0.0;
  std::unordered_map<std::string, int> counts;
  for (const auto& t : g) ++counts[t];
  int common = 0;
  for (const auto& t : p) {
    auto it = counts.find(t);
    if (it != counts.end() && it->second > 0) {
      --it->second;
      ++common;
    }
  }
  return f1_of(static_cast<double>(common) / p.size(), static_cast<double>(common) / g.size(), 1.0);
}

template <typename Tokenize, typename Fn>
double max_over(std::span<const std::string> golds, Tokenize&& tokenize, Fn&& fn) {
  double best = 0.0;
  for (const auto& g : golds) best = std::max(best, fn(tokenize(g)));
  return best;
}

}  // namespace

std::size_t lcs_length(std::span<const std::string> a, std::span<const std::string> b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

double token_f1(std::string_view pred, std::span<const std::string> golds) {
  const auto p = normalize(pred);
  return max_over(golds, normalize, [&](const std::vector<std::string>& g) { return single_f1(p, g); });
}

double rouge_l(std::string_view pred, std::span<const std::string> golds, double beta) {
  const auto p = rouge_tokens(pred);
  return max_over(golds, rouge_tokens, [&](const std::vector<std::string>& g) {
    if (p.empty() && g.empty()) return 1.0;
    if (p.empty() || g.empty()) return 0.0;
    const double lcs = static_cast<double>(lcs_length(p, g));
    return f1_of(lcs / p.size(), lcs / g.size(), beta);
  });
}

double exact_match(std::string_view pred, std::span<const std::string> golds) {
  const auto p = normalize(pred);
  return max_over(golds, normalize, [&](const std::vector<std::string>& g) { return p == g ? 1.0 : 0.0; });
}

std::string_view metric_name(MetricKind m) {
  switch (m) {
    case MetricKind::kF1:
      return "f1";
    case MetricKind::kRougeL:
      return "rouge_l";
    case MetricKind::kExactMatch:
      return "exact_match";
  }
  return "f1";
}

MetricKind primary_metric(QAFormat f) {
  switch (f) {
    case QAFormat::kExtractive:
      return MetricKind::kF1;
    case QAFormat::kAbstractive:
      return MetricKind::kRougeL;
    default:
      return MetricKind::kExactMatch;
  }
}

double ScoredPrediction::primary() const {
  switch (primary_metric(format)) {
    case MetricKind::kF1:
      return f1;
    case MetricKind::kRougeL:
      return rouge_l;
    case MetricKind::kExactMatch:
      return exact_match;
  }
  return exact_match;
}

ScoredPrediction score_prediction(const QAExample& ex, std::string prediction) {
  ScoredPrediction s;
  s.id = ex.id;
  s.format = ex.format;
  s.f1 = token_f1(prediction, ex.gold_answers);
  s.rouge_l = rouge_l(prediction, ex.gold_answers);
  s.exact_match = exact_match(prediction, ex.gold_answers);
  s.prediction = std::move(prediction);
  return s;
}

MetricSummary summarize(std::span<const ScoredPrediction> scored) {
  MetricSummary m;
  m.n_examples = scored.size();
  if (scored.empty()) return m;
  std::map<std::string, std::pair<double, int>> by_format;
  for (const auto& s : scored) {
    m.f1 += s.f1;
    m.rouge_l += s.rouge_l;
    m.exact_match += s.exact_match;
    m.primary += s.primary();
    auto& slot = by_format[std::string(format_tag(s.format))];
    slot.first += s.primary();
    ++slot.second;
  }
  const double n = static_cast<double>(scored.size());
  m.f1 /= n;
  m.rouge_l /= n;
  m.exact_match /= n;
  m.primary /= n;
  for (const auto& [tag, acc] : by_format) m.primary_by_format[tag] = acc.first / acc.second;
  return m;
}

}  // namespace mprompt
