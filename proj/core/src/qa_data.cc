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

#include "mprompt/qa_data.h"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>

#include "json.hpp"

#include "mprompt/errors.h"

namespace mprompt {

using nlohmann::json;

std::string_view format_tag(QAFormat f) {
  switch (f) {
    case QAFormat::kExtractive:
      return "EX";
    case QAFormat::kAbstractive:
      return "AB";
    case QAFormat::kMultipleChoice:
      return "MC";
    case QAFormat::kYesNo:
      return "YN";
  }
  return "EX";
}

QAFormat parse_format(std::string_view tag) {
  if (tag == "EX") return QAFormat::kExtractive;
  if (tag == "AB") return QAFormat::kAbstractive;
  if (tag == "MC") return QAFormat::kMultipleChoice;
  if (tag == "YN") return QAFormat::kYesNo;
  throw DataError("unknown QA format tag '" + std::string(tag) + "'");
}

void validate(const QAExample& ex, int n_domains) {
  const std::string where = "example '" + ex.id + "': ";
  if (ex.gold_answers.empty()) throw DataError(where + "gold_answers is empty");
  const bool mc = ex.format == QAFormat::kMultipleChoice;
  if (mc && ex.choices.empty()) throw DataError(where + "MC example without choices");
  if (!mc && !ex.choices.empty()) throw DataError(where + "choices on a non-MC example");
  if (ex.format == QAFormat::kYesNo) {
    for (const auto& a : ex.gold_answers) {
      std::string l = to_lower(a);
      if (l != "yes" && l != "no") throw DataError(where + "YN answer must be yes/no");
    }
  }
  if (ex.domain_id) {
    if (*ex.domain_id < 0 || (n_domains >= 0 && *ex.domain_id >= n_domains)) {
      throw DataError(where + "domain_id out of range");
    }
  }
}

std::string to_lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::vector<std::string> split_whitespace(std::string_view s) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) ++i;
    std::size_t j = i;
    while (j < s.size() && !std::isspace(static_cast<unsigned char>(s[j]))) ++j;
    if (j > i) out.emplace_back(s.substr(i, j - i));
    i = j;
  }
  return out;
}

std::string render_unified(const QAExample& ex) {
  const std::string sep = " " + std::string(kSeparatorToken) + " ";
  std::string out = ex.question;
  if (ex.format == QAFormat::kMultipleChoice) {
    if (ex.choices.size() > 8) {
      throw UnsupportedFormatError("example '" + ex.id + "': more than 8 choices");
    }
    std::string block;
    for (std::size_t i = 0; i < ex.choices.size(); ++i) {
      if (i > 0) block += ' ';
      block += '(';
      block += static_cast<char>('a' + i);
      block += ") ";
      block += ex.choices[i];
    }
    out += sep + block;
  }
  out += sep + ex.context;
  return to_lower(out);
}

std::string render_target(const QAExample& ex) {
  if (ex.gold_answers.empty()) throw DataError("example '" + ex.id + "': no gold answer");
  return to_lower(ex.gold_answers.front());
}

// ---- Vocabulary ----

namespace {

const std::vector<std::string>& reserved_tokens() {
  static const std::vector<std::string> kTokens = {"<pad>", "</s>", "<unk>",
                                                   std::string(kSeparatorToken)};
  return kTokens;
}

}  // namespace

Vocabulary::Vocabulary() : Vocabulary(reserved_tokens()) {}

Vocabulary::Vocabulary(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  const auto& reserved = reserved_tokens();
  if (tokens_.size() < reserved.size() ||
      !std::equal(reserved.begin(), reserved.end(), tokens_.begin())) {
    throw ConfigError("vocabulary must start with the reserved tokens");
  }
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    auto [it, inserted] = index_.emplace(tokens_[i], static_cast<int>(i));
    if (!inserted) throw ConfigError("duplicate vocabulary token '" + tokens_[i] + "'");
  }
}

Vocabulary Vocabulary::build(std::span<const std::string> corpus, std::size_t max_size) {
  if (max_size < static_cast<std::size_t>(kReserved)) {
    throw ConfigError("vocabulary max_size " + std::to_string(max_size) +
                      " is smaller than the reserved-token count");
  }
  if (corpus.empty()) throw ConfigError("cannot build a vocabulary from an empty corpus");
  std::map<std::string, std::size_t> counts;
  const auto& reserved = reserved_tokens();
  for (const auto& text : corpus) {
    for (auto& tok : split_whitespace(text)) {
      if (std::find(reserved.begin(), reserved.end(), tok) != reserved.end()) continue;
      ++counts[tok];
    }
  }
  std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> tokens = reserved;
  for (const auto& [tok, _] : ranked) {
    if (tokens.size() >= max_size) break;
    tokens.push_back(tok);
  }
  return Vocabulary(std::move(tokens));
}

int Vocabulary::id(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || id >= size()) return tokens_[kUnk];
  return tokens_[static_cast<std::size_t>(id)];
}

bool Vocabulary::contains(std::string_view token) const {
  return index_.contains(std::string(token));
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write vocabulary to " + path.string());
  out << json(tokens_).dump() << '\n';
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read vocabulary from " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw DataError("malformed vocabulary file " + path.string() + ": " + e.what());
  }
  return Vocabulary(j.get<std::vector<std::string>>());
}

std::vector<int> tokenize(std::string_view text, const Vocabulary& vocab) {
  std::vector<int> ids;
  for (const auto& tok : split_whitespace(text)) ids.push_back(vocab.id(tok));
  return ids;
}

std::string detokenize(std::span<const int> ids, const Vocabulary& vocab) {
  std::string out;
  for (int id : ids) {
    if (id == Vocabulary::kEos) break;
    if (id == Vocabulary::kPad) continue;
    if (!out.empty()) out += ' ';
    out += vocab.token(id);
  }
  return out;
}

EncodedExample encode(const QAExample& ex, const Vocabulary& vocab, int max_input_len,
                      int max_ans_len) {
  if (max_input_len < 1 || max_ans_len < 1) {
    throw ConfigError("max_input_len and max_ans_len must be >= 1");
  }
  EncodedExample enc;
  enc.input_ids = tokenize(render_unified(ex), vocab);
  if (static_cast<int>(enc.input_ids.size()) > max_input_len) enc.input_ids.resize(max_input_len);
  if (enc.input_ids.empty()) enc.input_ids.push_back(Vocabulary::kUnk);
  enc.target_ids = tokenize(render_target(ex), vocab);
  if (static_cast<int>(enc.target_ids.size()) > max_ans_len - 1) {
    enc.target_ids.resize(static_cast<std::size_t>(max_ans_len - 1));
  }
  enc.target_ids.push_back(Vocabulary::kEos);
  enc.context_ids = tokenize(to_lower(ex.context), vocab);
  if (static_cast<int>(enc.context_ids.size()) > max_input_len) enc.context_ids.resize(max_input_len);
  enc.domain_id = ex.domain_id.value_or(0);
  return enc;
}

// ---- JSONL ----

std::string to_json_line(const QAExample& ex) {
  json j;
  j["id"] = ex.id;
  j["question"] = ex.question;
  j["context"] = ex.context;
  if (ex.format == QAFormat::kMultipleChoice) j["choices"] = ex.choices;
  j["answers"] = ex.gold_answers;
  j["format"] = std::string(format_tag(ex.format));
  if (ex.domain_id) j["domain_id"] = *ex.domain_id;
  return j.dump();
}

QAExample from_json_line(std::string_view line) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed JSON: ") + e.what());
  }
  if (!j.is_object()) throw DataError("record is not a JSON object");
  QAExample ex;
  try {
    ex.id = j.at("id").get<std::string>();
    ex.question = j.at("question").get<std::string>();
    ex.context = j.at("context").get<std::string>();
    ex.gold_answers = j.at("answers").get<std::vector<std::string>>();
    ex.format = parse_format(j.at("format").get<std::string>());
    if (auto it = j.find("choices"); it != j.end() && !it->is_null()) {
      ex.choices = it->get<std::vector<std::string>>();
    }
    if (auto it = j.find("domain_id"); it != j.end() && !it->is_null()) {
      ex.domain_id = it->get<int>();
    }
  } catch (const json::exception& e) {
    throw DataError(std::string("bad record field: ") + e.what());
  }
  validate(ex);
  return ex;
}

std::vector<QAExample> load_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open dataset " + path.string());
  std::vector<QAExample> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(from_json_line(line));
    } catch (const DataError& e) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

void save_jsonl(const std::filesystem::path& path, std::span<const QAExample> examples) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write dataset " + path.string());
  for (const auto& ex : examples) out << to_json_line(ex) << '\n';
}

}  // namespace mprompt
