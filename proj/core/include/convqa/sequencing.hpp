#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "convqa/corpus.hpp"
#include "convqa/tensor.hpp"
#include "convqa/tokenizer.hpp"

namespace convqa {

// Fixed packing geometry shared by every sequence of a run.
//
// Layout of one packed sequence:
//   [CLS] question... [SEP] window-tokens... CANNOTANSWER [SEP] [PAD]...
// The sentinel token is appended to every window so that an unanswerable (or
// out-of-window) target is always addressable, which costs one slot of window
// capacity.
struct SequenceLayout {
  int32_t max_seq_len = 384;       // M
  int32_t max_question_len = 64;   // question token budget
  int32_t doc_stride = 128;
  int32_t max_history_turns = 11;  // I; marker vocabulary is I + 1

  int64_t window_capacity() const { return max_seq_len - max_question_len - 4; }
  void validate() const;
};

// Half-open token ranges [begin, end) starting at multiples of stride;
// enumeration stops once a window's end reaches token_count. Every token is
// covered at least once (requires stride <= capacity, validated).
struct WindowRange {
  int64_t begin = 0;
  int64_t end = 0;
};

std::vector<WindowRange> slide_window(int64_t token_count, int64_t capacity, int64_t stride);

// One (current question, passage window, single history turn) unit.
// history_index is the 1-based turn whose answer is embedded; 0 marks the
// zero-history variation that first questions flow through.
struct InstanceVariation {
  int32_t turn_index = 1;        // k
  int32_t history_index = 0;     // i, in [1, k-1]; 0 = no history
  int32_t window_index = 0;
  int32_t relative_position = 0; // k - i, in [1, I]; 0 = no history
};

// Variations for turn k over `window_count` windows: (k-1) * n for k > 1
// (one per history turn per window), n zero-history variations for k = 1.
// When k - 1 exceeds max_history_turns only the most recent
// max_history_turns history turns are used, keeping relative positions
// within [1, max_history_turns].
std::vector<InstanceVariation> build_variations(const Dialog& dialog, int32_t turn_index,
                                                int32_t window_count, int32_t max_history_turns);

// One packed encoder input.
struct TokenSequence {
  std::vector<int32_t> token_ids;
  std::vector<int32_t> segment_ids;   // 0 = question side, 1 = passage side
  std::vector<int32_t> position_ids;
  std::vector<int32_t> history_ids;   // in [0, I]; 0 = not in the history answer
  BoolMask attention_mask;            // true on real (non-pad) positions

  int32_t passage_begin = 0;  // first passage-content position
  int32_t passage_end = 0;    // one past the sentinel position
  int32_t sentinel_pos = 0;   // position of the CANNOTANSWER token
  int32_t gold_begin = 0;     // training span labels, sequence coordinates
  int32_t gold_end = 0;

  int32_t length() const { return static_cast<int32_t>(token_ids.size()); }
};

// History-answer marker IDs for one variation: every window token whose
// character range overlaps the history answer gets relative_position, all
// other positions 0. Question tokens and padding are never marked.
std::vector<int32_t> mark_history_answer(const Passage& passage, const WindowRange& window,
                                         const InstanceVariation& variation,
                                         const AnswerSpan& history_answer,
                                         const TokenSequence& packed);

// Packs one variation into a TokenSequence (markers left all-zero; callers
// apply mark_history_answer afterwards). The gold span is remapped into
// window coordinates; when it does not lie fully inside this window both
// labels point at the window's CANNOTANSWER token.
TokenSequence pack_sequence(const Passage& passage, const WindowRange& window,
                            const std::vector<Token>& question_tokens, const AnswerSpan& gold,
                            bool gold_cannot_answer, const Vocabulary& vocab,
                            const SequenceLayout& layout);

// All variations of one (question, window) pair; the unit that instance-aware
// batching never splits.
struct SequencedGroup {
  std::string qid;
  int32_t dialog_index = 0;
  int32_t turn_index = 1;
  int32_t window_index = 0;
  WindowRange window;
  Affirmation affirmation = Affirmation::kNeither;
  Continuation continuation = Continuation::kDontFollowUp;
  std::vector<InstanceVariation> variations;
  std::vector<TokenSequence> sequences;  // aligned with variations

  // Character span of each passage-content position (window body + sentinel),
  // for mapping decoded spans back to text.
  std::vector<std::pair<int32_t, int32_t>> passage_char_spans;

  int32_t variation_count() const { return static_cast<int32_t>(sequences.size()); }
};

struct SequencedCorpus {
  SequenceLayout layout;
  std::vector<SequencedGroup> groups;
  std::vector<int32_t> dialog_window_counts;  // per dialog
};

// Runs the full pipeline over a tokenized corpus. `mode` must match the mode
// the passages were tokenized with; it is applied to question text here.
SequencedCorpus sequence_corpus(const std::vector<Dialog>& dialogs, const Vocabulary& vocab,
                                const SequenceLayout& layout,
                                TokenizerMode mode = TokenizerMode::kWhitespace);

}  // namespace convqa
