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

// QA records, the unified text-to-text rendering, and the word-level
// vocabulary shared by the backbone and the prompt generator.

#ifndef MPROMPT_QA_DATA_H_
#define MPROMPT_QA_DATA_H_

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace mprompt {

enum class QAFormat { kExtractive, kAbstractive, kMultipleChoice, kYesNo };

std::string_view format_tag(QAFormat f);
/// Parses "EX" | "AB" | "MC" | "YN"; throws DataError otherwise.
QAFormat parse_format(std::string_view tag);

struct QAExample {
  std::string id;
  std::string question;
  std::string context;
  std::vector<std::string> choices;  // non-empty iff format == kMultipleChoice
  std::vector<std::string> gold_answers;
  QAFormat format = QAFormat::kExtractive;
  std::optional<int> domain_id;
};

/// Throws DataError on a violated record invariant. A negative `n_domains`
/// skips the domain range check.
void validate(const QAExample& ex, int n_domains = -1);

/// Lowercased "question \n [choices \n] context" with lettered choices.
/// Throws UnsupportedFormatError for more than eight choices.
std::string render_unified(const QAExample& ex);
/// First gold answer, lowercased.
std::string render_target(const QAExample& ex);

std::string to_lower(std::string_view s);
std::vector<std::string> split_whitespace(std::string_view s);

/// Literal two-character separator token between unified segments.
inline constexpr std::string_view kSeparatorToken = "\\n";

class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kEos = 1;
  static constexpr int kUnk = 2;
  static constexpr int kSep = 3;
  static constexpr int kReserved = 4;

  Vocabulary();
  /// Ids follow the order of `tokens`; the first kReserved entries must be
  /// the reserved tokens.
  explicit Vocabulary(std::vector<std::string> tokens);

  /// Most frequent tokens fill max_size - kReserved slots, ties broken
  /// lexicographically. Throws ConfigError if max_size < kReserved.
  static Vocabulary build(std::span<const std::string> corpus, std::size_t max_size);

  int id(std::string_view token) const;
  const std::string& token(int id) const;
  bool contains(std::string_view token) const;
  int size() const { return static_cast<int>(tokens_.size()); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  bool operator==(const Vocabulary& other) const { return tokens_ == other.tokens_; }

  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path);

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

std::vector<int> tokenize(std::string_view text, const Vocabulary& vocab);
/// Joins tokens with single spaces; stops at the first EOS and skips padding.
std::string detokenize(std::span<const int> ids, const Vocabulary& vocab);

struct EncodedExample {
  std::vector<int> input_ids;
  std::vector<int> target_ids;  // ends with Vocabulary::kEos
  std::vector<int> context_ids;  // context alone, for the prompt generator
  int domain_id = 0;
};

/// Renders, tokenizes and truncates. The target keeps at most
/// max_ans_len - 1 answer tokens followed by EOS.
EncodedExample encode(const QAExample& ex, const Vocabulary& vocab, int max_input_len,
                      int max_ans_len);

/// Reads one QAExample per line. Unknown keys are ignored; malformed
/// records raise DataError naming the line.
std::vector<QAExample> load_jsonl(const std::filesystem::path& path);
void save_jsonl(const std::filesystem::path& path, std::span<const QAExample> examples);
std::string to_json_line(const QAExample& ex);
QAExample from_json_line(std::string_view line);

}  // namespace mprompt

#endif  // MPROMPT_QA_DATA_H_
