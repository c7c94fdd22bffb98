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

#ifndef MPROMPT_METRICS_H_
#define MPROMPT_METRICS_H_

#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mprompt/qa_data.h"

namespace mprompt {

/// Lowercase, strip ASCII punctuation, split on whitespace.
std::vector<std::string> rouge_tokens(std::string_view text);
/// rouge_tokens without the articles a/an/the.
std::vector<std::string> normalize(std::string_view text);

/// Multiset token-overlap F1, max over golds. Both sides empty scores 1.
double token_f1(std::string_view pred, std::span<const std::string> golds);
/// LCS-based F-measure over rouge_tokens (articles kept), max over golds.
/// `beta` weights recall; 1 gives the balanced F.
double rouge_l(std::string_view pred, std::span<const std::string> golds, double beta = 1.0);
/// 1 iff the normalized prediction equals some normalized gold.
double exact_match(std::string_view pred, std::span<const std::string> golds);

/// LCS length of two token sequences.
std::size_t lcs_length(std::span<const std::string> a, std::span<const std::string> b);

enum class MetricKind { kF1, kRougeL, kExactMatch };
std::string_view metric_name(MetricKind m);
/// F1 for extractive, ROUGE-L for abstractive, accuracy otherwise.
MetricKind primary_metric(QAFormat f);

struct ScoredPrediction {
  std::string id;
  std::string prediction;
  QAFormat format = QAFormat::kExtractive;
  double f1 = 0.0;
  double rouge_l = 0.0;
  double exact_match = 0.0;

  double primary() const;
};

ScoredPrediction score_prediction(const QAExample& ex, std::string prediction);

struct MetricSummary {
  std::size_t n_examples = 0;
  double f1 = 0.0;
  double rouge_l = 0.0;
  double exact_match = 0.0;
  /// Mean of each example's format-specific primary metric.
  double primary = 0.0;
  std::map<std::string, double> primary_by_format;
};

MetricSummary summarize(std::span<const ScoredPrediction> scored);

}  // namespace mprompt

#endif  // MPROMPT_METRICS_H_
