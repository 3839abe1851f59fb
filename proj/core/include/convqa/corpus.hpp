#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "convqa/tokenizer.hpp"

namespace convqa {

inline constexpr const char* kCannotAnswerText = "CANNOTANSWER";

enum class Affirmation : uint8_t { kYes = 0, kNo = 1, kNeither = 2 };
enum class Continuation : uint8_t { kFollowUp = 0, kMaybeFollowUp = 1, kDontFollowUp = 2 };

inline constexpr int kDialogActClasses = 3;

Affirmation affirmation_from_code(const std::string& code);    // y | n | x
Continuation continuation_from_code(const std::string& code);  // y | m | n
std::string to_code(Affirmation a);
std::string to_code(Continuation c);

// A character span [begin, end) into the passage text.
struct AnswerSpan {
  int32_t begin = 0;
  int32_t end = 0;
  std::string text;
};

struct QuestionTurn {
  std::string id;
  int32_t turn_index = 1;  // 1-based position in the dialog
  std::string question;
  AnswerSpan answer;  // the original annotated answer; the one seekers saw
  std::vector<std::string> reference_answers;  // additional references for scoring
  Affirmation affirmation = Affirmation::kNeither;
  Continuation continuation = Continuation::kDontFollowUp;
  bool cannot_answer = false;
};

struct Passage {
  std::string id;
  std::string text;            // ends with the CANNOTANSWER sentinel string
  std::vector<Token> tokens;   // filled by tokenize_corpus; last token is the sentinel
  int32_t sentinel_begin = 0;  // char span of the sentinel within text
  int32_t sentinel_end = 0;
};

struct Dialog {
  Passage passage;
  std::vector<QuestionTurn> turns;

  // History turns available to turn k (1-based): turns[0 .. k-2].
  int32_t history_count(int32_t turn_index) const { return turn_index - 1; }
};

// Parses a QuAC-format JSON document ("data" -> "paragraphs" -> "qas").
// Validates answer offsets against the context and maps label codes; throws
// DataError naming the JSON path or question id on any inconsistency.
std::vector<Dialog> parse_corpus(const std::string& json_text);
std::vector<Dialog> load_corpus_file(const std::filesystem::path& file);

// Tokenizes every passage in place. The sentinel always comes out as the
// final token even when the tokenizer would split it.
void tokenize_corpus(std::vector<Dialog>& dialogs, TokenizerMode mode, const Vocabulary* vocab);

// Collects the whitespace token vocabulary of all passages and questions.
Vocabulary build_corpus_vocabulary(const std::vector<Dialog>& dialogs);

struct CorpusSummary {
  int64_t dialog_count = 0;
  int64_t question_count = 0;
  std::vector<int64_t> history_turn_histogram;  // index = # history turns
  int64_t min_history = 0;
  int64_t max_history = 0;
  double avg_history = 0.0;
  double median_history = 0.0;
};

CorpusSummary summarize_corpus(const std::vector<Dialog>& dialogs);

}  // namespace convqa
