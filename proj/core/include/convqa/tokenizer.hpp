#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace convqa {

// One token plus its [begin, end) character span in the source string.
struct Token {
  std::string text;
  int32_t begin = 0;
  int32_t end = 0;
};

enum class TokenizerMode { kWhitespace, kSubword };

TokenizerMode tokenizer_mode_from_string(const std::string& name);
std::string to_string(TokenizerMode mode);

// Token/id bijection with fixed special entries at the front.
class Vocabulary {
 public:
  static constexpr const char* kPad = "[PAD]";
  static constexpr const char* kUnk = "[UNK]";
  static constexpr const char* kCls = "[CLS]";
  static constexpr const char* kSep = "[SEP]";

  Vocabulary();

  int32_t add(const std::string& token);  // returns existing id if present
  int32_t id(std::string_view token) const;  // kUnk id when unknown
  bool contains(std::string_view token) const;
  const std::string& token(int32_t id) const;
  int32_t size() const { return static_cast<int32_t>(tokens_.size()); }

  int32_t pad_id() const { return 0; }
  int32_t unk_id() const { return 1; }
  int32_t cls_id() const { return 2; }
  int32_t sep_id() const { return 3; }

  void save(const std::filesystem::path& file) const;
  static Vocabulary load(const std::filesystem::path& file);

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int32_t> ids_;
};

// Lowercases and splits on whitespace; offsets index the original string.
std::vector<Token> tokenize_whitespace(std::string_view text);

// Greedy longest-match subword pieces with "##" continuations; a word with
// no decomposition becomes a single [UNK] token spanning the whole word.
std::vector<Token> tokenize_subword(std::string_view text, const Vocabulary& vocab);

std::vector<Token> tokenize(std::string_view text, TokenizerMode mode, const Vocabulary* vocab);

}  // namespace convqa
