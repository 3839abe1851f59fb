#include "convqa/tokenizer.hpp"

#include <cctype>
#include <fstream>

#include "convqa/errors.hpp"

namespace convqa {

TokenizerMode tokenizer_mode_from_string(const std::string& name) {
  if (name == "whitespace") return TokenizerMode::kWhitespace;
  if (name == "subword") return TokenizerMode::kSubword;
  throw ConfigError("unknown tokenizer mode '" + name + "' (whitespace|subword)");
}

std::string to_string(TokenizerMode mode) {
  return mode == TokenizerMode::kWhitespace ? "whitespace" : "subword";
}

Vocabulary::Vocabulary() {
  for (const char* t : {kPad, kUnk, kCls, kSep}) add(t);
}

int32_t Vocabulary::add(const std::string& token) {
  auto it = ids_.find(token);
  if (it != ids_.end()) return it->second;
  const int32_t id = static_cast<int32_t>(tokens_.size());
  tokens_.push_back(token);
  ids_.emplace(token, id);
  return id;
}

int32_t Vocabulary::id(std::string_view token) const {
  auto it = ids_.find(std::string(token));
  return it == ids_.end() ? unk_id() : it->second;
}

bool Vocabulary::contains(std::string_view token) const {
  return ids_.count(std::string(token)) > 0;
}

const std::string& Vocabulary::token(int32_t id) const {
  if (id < 0 || id >= size())
    throw std::out_of_range("vocabulary id " + std::to_string(id) + " out of range [0, " +
                            std::to_string(size()) + ")");
  return tokens_[static_cast<size_t>(id)];
}

void Vocabulary::save(const std::filesystem::path& file) const {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw DataError("cannot write vocabulary file " + file.string());
  for (const auto& t : tokens_) out << t << '\n';
}

Vocabulary Vocabulary::load(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw DataError("cannot read vocabulary file " + file.string());
  Vocabulary vocab;
  std::string line;
  int32_t index = 0;
  while (std::getline(in, line)) {
    if (index < 4) {
      // fixed special rows must match
      if (line != vocab.tokens_[static_cast<size_t>(index)])
        throw DataError("vocabulary file " + file.string() + " row " + std::to_string(index) +
                        " is '" + line + "', expected special token");
    } else {
      vocab.add(line);
    }
    ++index;
  }
  return vocab;
}

namespace {

std::string lowered(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

struct Word {
  std::string text;  // lowercased
  int32_t begin;
  int32_t end;
};

std::vector<Word> split_whitespace(std::string_view text) {
  std::vector<Word> words;
  size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    if (i >= text.size()) break;
    size_t j = i;
    while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
    words.push_back({lowered(text.substr(i, j - i)), static_cast<int32_t>(i), static_cast<int32_t>(j)});
    i = j;
  }
  return words;
}

}  // namespace

std::vector<Token> tokenize_whitespace(std::string_view text) {
  std::vector<Token> tokens;
  for (auto& w : split_whitespace(text)) tokens.push_back({std::move(w.text), w.begin, w.end});
  return tokens;
}

std::vector<Token> tokenize_subword(std::string_view text, const Vocabulary& vocab) {
  if (vocab.size() <= 4)
    throw ConfigError("subword tokenizer requires a non-empty vocabulary");
  std::vector<Token> tokens;
  for (const auto& word : split_whitespace(text)) {
    std::vector<Token> pieces;
    size_t pos = 0;
    bool ok = true;
    while (pos < word.text.size()) {
      size_t len = word.text.size() - pos;
      bool matched = false;
      while (len > 0) {
        std::string candidate = word.text.substr(pos, len);
        if (pos > 0) candidate = "##" + candidate;
        if (vocab.contains(candidate)) {
          pieces.push_back({candidate, word.begin + static_cast<int32_t>(pos),
                            word.begin + static_cast<int32_t>(pos + len)});
          pos += len;
          matched = true;
          break;
        }
        --len;
      }
      if (!matched) {
        ok = false;
        break;
      }
    }
    if (ok) {
      for (auto& p : pieces) tokens.push_back(std::move(p));
    } else {
      tokens.push_back({Vocabulary::kUnk, word.begin, word.end});
    }
  }
  return tokens;
}

std::vector<Token> tokenize(std::string_view text, TokenizerMode mode, const Vocabulary* vocab) {
  if (mode == TokenizerMode::kWhitespace) return tokenize_whitespace(text);
  if (vocab == nullptr) throw ConfigError("subword tokenizer requires a vocabulary");
  return tokenize_subword(text, *vocab);
}

}  // namespace convqa
