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

// Deterministic multi-domain toy QA corpora. Each kind draws its contexts
// from its own word list, so hashed context embeddings separate the kinds.

#ifndef MPROMPT_SYNTH_CORPUS_H_
#define MPROMPT_SYNTH_CORPUS_H_

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "mprompt/qa_data.h"

namespace mprompt {

enum class SynthKind { kLookup, kArithmetic, kChoice, kBoolean };
std::string_view synth_kind_name(SynthKind k);
SynthKind parse_synth_kind(std::string_view name);

struct CorpusSpec {
  std::vector<SynthKind> kinds = {SynthKind::kLookup, SynthKind::kArithmetic, SynthKind::kChoice,
                                  SynthKind::kBoolean};
  int examples_per_domain = 375;  // all splits together
  double train_ratio = 0.8;
  double val_ratio = 0.1;         // test gets the rest
  int lookup_pairs = 3;
};

struct Corpus {
  std::vector<QAExample> train, val, test;
  /// Example id -> index of its kind in CorpusSpec::kinds.
  std::map<std::string, int> labels;
};

/// Pure function of (spec, seed). Examples within one kind are distinct.
/// Throws ConfigError for an empty kind list or bad ratios.
Corpus generate_corpus(const CorpusSpec& spec, std::uint64_t seed);

/// Rule-based answer for a generated example, read off its context.
std::string oracle_answer(const QAExample& ex);

/// Writes train.jsonl, val.jsonl, test.jsonl and labels.json into `dir`.
void write_corpus(const Corpus& corpus, const std::filesystem::path& dir);
std::map<std::string, int> load_labels(const std::filesystem::path& path);

}  // namespace mprompt

#endif  // MPROMPT_SYNTH_CORPUS_H_
