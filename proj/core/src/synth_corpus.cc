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

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <set>

#include "json.hpp"
#include "mprompt/errors.h"
#include "mprompt/rng.h"

namespace mprompt {

namespace {

constexpr std::array<std::string_view, 19> kNumberWords = {
    "zero", "one",    "two",    "three",    "four",    "five",    "six",
    "seven", "eight", "nine",   "ten",      "eleven",  "twelve",  "thirteen",
    "fourteen", "fifteen", "sixteen", "seventeen", "eighteen"};
constexpr std::array<std::string_view, 16> kNames = {
    "ann", "bob", "cal", "dee", "eve", "fay", "gus", "hal",
    "ida", "jon", "kim", "lou", "max", "ned", "ola", "pat"};
constexpr std::array<std::string_view, 6> kObjects = {"box", "cup", "hat", "bag", "car", "pen"};
constexpr std::array<std::string_view, 6> kColors = {"red",   "blue",  "green",
                                                     "yellow", "black", "white"};
constexpr std::array<std::string_view, 10> kAnimals = {"cat", "dog", "fox", "owl", "bee",
                                                       "cow", "pig", "rat", "ant", "elk"};
constexpr int kChoiceCount = 3;
constexpr int kZooSize = 3;

template <typename T>
const T& pick(std::span<const T> items, Rng& rng) {
  return items[uniform_index(rng, items.size())];
}

/// k distinct indices from [0, n) in random order.
std::vector<int> distinct(int n, int k, Rng& rng) {
  std::vector<int> all(n);
  for (int i = 0; i < n; ++i) all[i] = i;
  shuffle(all, rng);
  all.resize(k);
  return all;
}

QAExample make_lookup(Rng& rng, int pairs) {
  QAExample ex;
  ex.format = QAFormat::kExtractive;
  std::vector<int> keys = distinct(10, pairs, rng);
  std::string ctx;
  std::vector<int> values;
  for (int k : keys) {
    int v = static_cast<int>(uniform_index(rng, 10));
    values.push_back(v);
    if (!ctx.empty()) ctx += ' ';
    ctx += "k" + std::to_string(k) + " = " + std::to_string(v);
  }
  auto q = uniform_index(rng, keys.size());
  ex.context = ctx;
  ex.question = "what is k" + std::to_string(keys[q]) + " ?";
  ex.gold_answers = {std::to_string(values[q])};
  return ex;
}

QAExample make_arithmetic(Rng& rng) {
  QAExample ex;
  ex.format = QAFormat::kAbstractive;
  auto x = uniform_index(rng, 10);
  auto y = uniform_index(rng, 10);
  std::string name(pick<std::string_view>(kNames, rng));
  ex.context = name + " adds " + std::string(kNumberWords[x]) + " and " + std::string(kNumberWords[y]);
  ex.question = "what is " + std::string(kNumberWords[x]) + " plus " + std::string(kNumberWords[y]) + " ?";
  ex.gold_answers = {std::string(kNumberWords[x + y])};
  return ex;
}

QAExample make_choice(Rng& rng) {
  QAExample ex;
  ex.format = QAFormat::kMultipleChoice;
  std::vector<int> colors = distinct(static_cast<int>(kColors.size()), kChoiceCount, rng);
  int answer = colors[uniform_index(rng, colors.size())];
  std::string obj(pick<std::string_view>(kObjects, rng));
  ex.context = obj + " is " + std::string(kColors[answer]);
  ex.question = "which color is the " + obj + " ?";
  for (int c : colors) ex.choices.emplace_back(kColors[c]);
  ex.gold_answers = {std::string(kColors[answer])};
  return ex;
}

QAExample make_boolean(Rng& rng) {
  QAExample ex;
  ex.format = QAFormat::kYesNo;
  std::vector<int> order = distinct(static_cast<int>(kAnimals.size()), static_cast<int>(kAnimals.size()), rng);
  std::string ctx = "zoo has";
  for (int i = 0; i < kZooSize; ++i) ctx += " " + std::string(kAnimals[order[i]]);
  const bool yes = uniform01(rng) < 0.5;
  int query = yes ? order[uniform_index(rng, kZooSize)]
                  : order[kZooSize + uniform_index(rng, kAnimals.size() - kZooSize)];
  ex.context = ctx;
  ex.question = "is " + std::string(kAnimals[query]) + " in the zoo ?";
  ex.gold_answers = {yes ? "yes" : "no"};
  return ex;
}

QAExample make_example(SynthKind kind, Rng& rng, const CorpusSpec& spec) {
  switch (kind) {
    case SynthKind::kLookup:
      return make_lookup(rng, spec.lookup_pairs);
    case SynthKind::kArithmetic:
      return make_arithmetic(rng);
    case SynthKind::kChoice:
      return make_choice(rng);
    case SynthKind::kBoolean:
      return make_boolean(rng);
  }
  return make_lookup(rng, spec.lookup_pairs);
}

std::string dedup_key(const QAExample& ex) {
  std::string key = ex.question + "|" + ex.context;
  for (const auto& c : ex.choices) key += "|" + c;
  return key;
}

}  // namespace

std::string_view synth_kind_name(SynthKind k) {
  switch (k) {
    case SynthKind::kLookup:
      return "lookup";
    case SynthKind::kArithmetic:
      return "arithmetic";
    case SynthKind::kChoice:
      return "choice";
    case SynthKind::kBoolean:
      return "boolean";
  }
  return "lookup";
}

SynthKind parse_synth_kind(std::string_view name) {
  if (name == "lookup") return SynthKind::kLookup;
  if (name == "arithmetic") return SynthKind::kArithmetic;
  if (name == "choice") return SynthKind::kChoice;
  if (name == "boolean") return SynthKind::kBoolean;
  throw ConfigError("unknown corpus kind '" + std::string(name) + "'");
}

Corpus generate_corpus(const CorpusSpec& spec, std::uint64_t seed) {
  if (spec.kinds.empty()) throw ConfigError("corpus needs at least one kind");
  if (spec.examples_per_domain < 3) throw ConfigError("examples_per_domain must be >= 3");
  if (spec.train_ratio <= 0.0 || spec.val_ratio <= 0.0 || spec.train_ratio + spec.val_ratio >= 1.0) {
    throw ConfigError("split ratios must be positive and leave room for a test split");
  }
  if (spec.lookup_pairs < 1 || spec.lookup_pairs > 10) throw ConfigError("lookup_pairs must be in [1, 10]");
  const int total = spec.examples_per_domain;
  const int n_train = static_cast<int>(std::lround(total * spec.train_ratio));
  const int n_val = static_cast<int>(std::lround(total * spec.val_ratio));
  if (n_train < 1 || n_val < 1 || n_train + n_val >= total) {
    throw ConfigError("split ratios leave an empty split");
  }

  Corpus corpus;
  std::uint64_t state = seed;
  for (std::size_t k = 0; k < spec.kinds.size(); ++k) {
    const SynthKind kind = spec.kinds[k];
    Rng rng(splitmix64(state));
    std::set<std::string> seen;
    std::vector<QAExample> made;
    int attempts = 0;
    while (static_cast<int>(made.size()) < total) {
      if (++attempts > 200 * total) {
        throw ConfigError("corpus kind '" + std::string(synth_kind_name(kind)) +
                          "' cannot produce that many distinct examples");
      }
      QAExample ex = make_example(kind, rng, spec);
      if (!seen.insert(dedup_key(ex)).second) continue;
      ex.id = std::string(synth_kind_name(kind)) + "-" + std::to_string(k) + "-" + std::to_string(made.size());
      corpus.labels[ex.id] = static_cast<int>(k);
      made.push_back(std::move(ex));
    }
    for (int i = 0; i < total; ++i) {
      auto& dst = i < n_train ? corpus.train : (i < n_train + n_val ? corpus.val : corpus.test);
      dst.push_back(std::move(made[i]));
    }
  }
  Rng order(splitmix64(state));
  shuffle(corpus.train, order);
  shuffle(corpus.val, order);
  shuffle(corpus.test, order);
  return corpus;
}

std::string oracle_answer(const QAExample& ex) {
  const auto ctx = split_whitespace(ex.context);
  const auto q = split_whitespace(ex.question);
  switch (ex.format) {
    case QAFormat::kExtractive: {
      const std::string& key = q.at(2);
      for (std::size_t i = 0; i + 2 < ctx.size(); ++i) {
        if (ctx[i] == key && ctx[i + 1] == "=") return ctx[i + 2];
      }
      return "";
    }
    case QAFormat::kAbstractive: {
      auto value = [](const std::string& w) {
        return static_cast<std::size_t>(std::find(kNumberWords.begin(), kNumberWords.end(), w) - kNumberWords.begin());
      };
      std::size_t sum = value(ctx.at(2)) + value(ctx.at(4));
      return sum < kNumberWords.size() ? std::string(kNumberWords[sum]) : "";
    }
    case QAFormat::kMultipleChoice:
      for (const auto& c : ex.choices) {
        if (std::find(ctx.begin(), ctx.end(), c) != ctx.end()) return c;
      }
      return "";
    case QAFormat::kYesNo:
      return std::find(ctx.begin() + 2, ctx.end(), q.at(1)) != ctx.end() ? "yes" : "no";
  }
  return "";
}

void write_corpus(const Corpus& corpus, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  save_jsonl(dir / "train.jsonl", corpus.train);
  save_jsonl(dir / "val.jsonl", corpus.val);
  save_jsonl(dir / "test.jsonl", corpus.test);
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  for (const auto& [id, label] : corpus.labels) j[id] = label;
  std::ofstream out(dir / "labels.json");
  if (!out) throw DataError("cannot write " + (dir / "labels.json").string());
  out << j.dump(1) << '\n';
}

std::map<std::string, int> load_labels(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  std::map<std::string, int> out;
  for (auto it = j.begin(); it != j.end(); ++it) out[it.key()] = it.value().get<int>();
  return out;
}

}  // namespace mprompt
