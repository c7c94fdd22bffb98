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


#include "mprompt/synth_corpus.h"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "mprompt/errors.h"
#include "mprompt/metrics.h"

namespace mprompt {
namespace {

namespace fs = std::filesystem;

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

TEST(SynthCorpus, SplitSizesAndDisjointness) {
  CorpusSpec spec;
  spec.examples_per_domain = 100;
  const Corpus c = generate_corpus(spec, 1);
  EXPECT_EQ(c.train.size(), 320u);
  EXPECT_EQ(c.val.size(), 40u);
  EXPECT_EQ(c.test.size(), 40u);
  std::set<std::string> ids;
  for (const auto* split : {&c.train, &c.val, &c.test}) {
    for (const auto& ex : *split) EXPECT_TRUE(ids.insert(ex.id).second) << ex.id;
  }
  EXPECT_EQ(c.labels.size(), 400u);
}

TEST(SynthCorpus, OracleAnswersEverything) {
  CorpusSpec spec;
  spec.examples_per_domain = 200;
  const Corpus c = generate_corpus(spec, 2);
  for (const auto* split : {&c.train, &c.val, &c.test}) {
    for (const auto& ex : *split) {
      EXPECT_EQ(exact_match(oracle_answer(ex), ex.gold_answers), 1.0) << ex.id;
      EXPECT_FALSE(ex.context.empty());
    }
  }
}

TEST(SynthCorpus, ExtractiveAnswersAreContextSpans) {
  CorpusSpec spec;
  spec.kinds = {SynthKind::kLookup};
  spec.examples_per_domain = 50;
  const Corpus c = generate_corpus(spec, 3);
  for (const auto& ex : c.train) {
    EXPECT_EQ(ex.format, QAFormat::kExtractive);
    EXPECT_NE((" " + ex.context + " ").find(" " + ex.gold_answers[0] + " "), std::string::npos) << ex.id;
  }
}

TEST(SynthCorpus, KindsUseDisjointVocabularies) {
  CorpusSpec spec;
  spec.examples_per_domain = 100;
  const Corpus c = generate_corpus(spec, 4);
  std::map<int, std::set<std::string>> vocab;
  for (const auto& ex : c.train) {
    std::istringstream in(ex.context);
    std::string tok;
    while (in >> tok) vocab[c.labels.at(ex.id)].insert(tok);
  }
  ASSERT_EQ(vocab.size(), 4u);
  for (int a = 0; a < 4; ++a) {
    for (int b = a + 1; b < 4; ++b) {
      for (const auto& tok : vocab[a]) EXPECT_EQ(vocab[b].count(tok), 0u) << tok;
    }
  }
}

TEST(SynthCorpus, SameSeedSameBytes) {
  CorpusSpec spec;
  spec.examples_per_domain = 40;
  const fs::path a = fs::temp_directory_path() / "mprompt_synth_a";
  const fs::path b = fs::temp_directory_path() / "mprompt_synth_b";
  fs::remove_all(a);
  fs::remove_all(b);
  write_corpus(generate_corpus(spec, 9), a);
  write_corpus(generate_corpus(spec, 9), b);
  for (const char* f : {"train.jsonl", "val.jsonl", "test.jsonl", "labels.json"}) {
    EXPECT_FALSE(slurp(a / f).empty()) << f;
    EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;
  }
  EXPECT_EQ(load_labels(a / "labels.json"), generate_corpus(spec, 9).labels);
  const Corpus other = generate_corpus(spec, 10);
  EXPECT_NE(other.train.front().id + other.train.front().context,
            generate_corpus(spec, 9).train.front().id + generate_corpus(spec, 9).train.front().context);
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST(SynthCorpus, RejectsBadSpecs) {
  CorpusSpec spec;
  spec.kinds.clear();
  EXPECT_THROW(generate_corpus(spec, 1), ConfigError);
  spec = CorpusSpec{};
  spec.train_ratio = 0.95;
  EXPECT_THROW(generate_corpus(spec, 1), ConfigError);
  EXPECT_THROW(parse_synth_kind("poetry"), ConfigError);
  EXPECT_EQ(parse_synth_kind(synth_kind_name(SynthKind::kChoice)), SynthKind::kChoice);
}

}  // namespace
}  // namespace mprompt
