#include "convqa/sequencing.hpp"

#include <algorithm>

#include "convqa/errors.hpp"

namespace convqa {

void SequenceLayout::validate() const {
  if (max_seq_len < 8) throw ConfigError("max_seq_len must be >= 8");
  if (max_history_turns < 1) throw ConfigError("max_history_turns must be >= 1");
  if (max_question_len < 1) throw ConfigError("max_question_len must be >= 1");
  if (window_capacity() < 1)
    throw ConfigError("sequence layout leaves no room for passage tokens: max_seq_len " +
                      std::to_string(max_seq_len) + " with question budget " +
                      std::to_string(max_question_len));
  if (doc_stride < 1) throw ConfigError("doc_stride must be >= 1");
  if (doc_stride > window_capacity())
    throw ConfigError("doc_stride " + std::to_string(doc_stride) +
                      " exceeds window capacity " + std::to_string(window_capacity()) +
                      "; passage tokens would be skipped");
}

std::vector<WindowRange> slide_window(int64_t token_count, int64_t capacity, int64_t stride) {
  if (capacity < 1) throw ConfigError("slide_window: capacity must be >= 1");
  if (stride < 1) throw ConfigError("slide_window: stride must be >= 1");
  std::vector<WindowRange> windows;
  if (token_count <= 0) {
    windows.push_back({0, 0});
    return windows;
  }
  int64_t begin = 0;
  while (true) {
    const int64_t end = std::min(begin + capacity, token_count);
    windows.push_back({begin, end});
    if (end >= token_count) break;
    begin += stride;
  }
  return windows;
}

std::vector<InstanceVariation> build_variations(const Dialog& dialog, int32_t turn_index,
                                                int32_t window_count, int32_t max_history_turns) {
  if (turn_index < 1 || turn_index > static_cast<int32_t>(dialog.turns.size()))
    throw std::out_of_range("build_variations: turn " + std::to_string(turn_index) +
                            " out of range [1, " + std::to_string(dialog.turns.size()) + "]");
  std::vector<InstanceVariation> variations;
  const int32_t history = dialog.history_count(turn_index);
  const int32_t first_history = std::max(1, turn_index - max_history_turns);
  for (int32_t w = 0; w < window_count; ++w) {
    if (history == 0) {
      variations.push_back({turn_index, 0, w, 0});
      continue;
    }
    for (int32_t i = first_history; i <= turn_index - 1; ++i)
      variations.push_back({turn_index, i, w, turn_index - i});
  }
  return variations;
}

namespace {

// First/last token whose character range overlaps [begin, end), or {-1,-1}.
std::pair<int64_t, int64_t> overlapping_token_range(const std::vector<Token>& tokens,
                                                    int32_t begin, int32_t end) {
  int64_t first = -1, last = -1;
  for (int64_t t = 0; t < static_cast<int64_t>(tokens.size()); ++t) {
    const Token& tok = tokens[static_cast<size_t>(t)];
    if (tok.end > begin && tok.begin < end) {
      if (first < 0) first = t;
      last = t;
    }
  }
  return {first, last};
}

}  // namespace

TokenSequence pack_sequence(const Passage& passage, const WindowRange& window,
                            const std::vector<Token>& question_tokens, const AnswerSpan& gold,
                            bool gold_cannot_answer, const Vocabulary& vocab,
                            const SequenceLayout& layout) {
  layout.validate();
  const int32_t m = layout.max_seq_len;
  const int64_t q_len = std::min<int64_t>(static_cast<int64_t>(question_tokens.size()),
                                          layout.max_question_len);

  TokenSequence seq;
  seq.token_ids.assign(static_cast<size_t>(m), vocab.pad_id());
  seq.segment_ids.assign(static_cast<size_t>(m), 0);
  seq.position_ids.resize(static_cast<size_t>(m));
  for (int32_t p = 0; p < m; ++p) seq.position_ids[static_cast<size_t>(p)] = p;
  seq.history_ids.assign(static_cast<size_t>(m), 0);
  seq.attention_mask.assign(static_cast<size_t>(m), 0);

  int32_t pos = 0;
  seq.token_ids[static_cast<size_t>(pos++)] = vocab.cls_id();
  for (int64_t t = 0; t < q_len; ++t)
    seq.token_ids[static_cast<size_t>(pos++)] = vocab.id(question_tokens[static_cast<size_t>(t)].text);
  seq.token_ids[static_cast<size_t>(pos++)] = vocab.sep_id();

  seq.passage_begin = pos;
  const Token& sentinel = passage.tokens.back();
  for (int64_t t = window.begin; t < window.end; ++t)
    seq.token_ids[static_cast<size_t>(pos++)] = vocab.id(passage.tokens[static_cast<size_t>(t)].text);
  seq.sentinel_pos = pos;
  seq.token_ids[static_cast<size_t>(pos++)] = vocab.id(sentinel.text);
  seq.passage_end = pos;
  seq.token_ids[static_cast<size_t>(pos++)] = vocab.sep_id();

  if (pos > m)
    throw ConfigError("packed sequence length " + std::to_string(pos) + " exceeds max_seq_len " +
                      std::to_string(m));
  for (int32_t p = seq.passage_begin; p < pos; ++p) seq.segment_ids[static_cast<size_t>(p)] = 1;
  for (int32_t p = 0; p < pos; ++p) seq.attention_mask[static_cast<size_t>(p)] = 1;

  // Gold span: window coordinates when fully inside, sentinel otherwise.
  seq.gold_begin = seq.gold_end = seq.sentinel_pos;
  if (!gold_cannot_answer) {
    auto [first, last] = overlapping_token_range(passage.tokens, gold.begin, gold.end);
    if (first >= window.begin && last >= first && last < window.end) {
      seq.gold_begin = seq.passage_begin + static_cast<int32_t>(first - window.begin);
      seq.gold_end = seq.passage_begin + static_cast<int32_t>(last - window.begin);
    }
  }
  return seq;
}

std::vector<int32_t> mark_history_answer(const Passage& passage, const WindowRange& window,
                                         const InstanceVariation& variation,
                                         const AnswerSpan& history_answer,
                                         const TokenSequence& packed) {
  std::vector<int32_t> ids(packed.token_ids.size(), 0);
  if (variation.history_index == 0) return ids;  // zero-history variation
  const int32_t mark = variation.relative_position;
  for (int64_t t = window.begin; t < window.end; ++t) {
    const Token& tok = passage.tokens[static_cast<size_t>(t)];
    if (tok.end > history_answer.begin && tok.begin < history_answer.end)
      ids[static_cast<size_t>(packed.passage_begin + (t - window.begin))] = mark;
  }
  // The sentinel is present in every window; a CANNOTANSWER history answer
  // marks it there.
  const Token& sentinel = passage.tokens.back();
  if (sentinel.end > history_answer.begin && sentinel.begin < history_answer.end)
    ids[static_cast<size_t>(packed.sentinel_pos)] = mark;
  return ids;
}

SequencedCorpus sequence_corpus(const std::vector<Dialog>& dialogs, const Vocabulary& vocab,
                                const SequenceLayout& layout, TokenizerMode mode) {
  layout.validate();
  SequencedCorpus out;
  out.layout = layout;
  for (int32_t d = 0; d < static_cast<int32_t>(dialogs.size()); ++d) {
    const Dialog& dialog = dialogs[static_cast<size_t>(d)];
    if (dialog.passage.tokens.empty())
      throw ContractError("sequence_corpus: corpus was not tokenized");
    // Windows slide over the body; the sentinel (last token) is appended to
    // every window by pack_sequence.
    const int64_t body_tokens = static_cast<int64_t>(dialog.passage.tokens.size()) - 1;
    auto windows = slide_window(body_tokens, layout.window_capacity(), layout.doc_stride);
    out.dialog_window_counts.push_back(static_cast<int32_t>(windows.size()));

    for (const auto& turn : dialog.turns) {
      auto question_tokens = tokenize(turn.question, mode, &vocab);
      auto variations = build_variations(dialog, turn.turn_index,
                                         static_cast<int32_t>(windows.size()),
                                         layout.max_history_turns);
      for (int32_t w = 0; w < static_cast<int32_t>(windows.size()); ++w) {
        SequencedGroup group;
        group.qid = turn.id;
        group.dialog_index = d;
        group.turn_index = turn.turn_index;
        group.window_index = w;
        group.window = windows[static_cast<size_t>(w)];
        group.affirmation = turn.affirmation;
        group.continuation = turn.continuation;

        TokenSequence base = pack_sequence(dialog.passage, group.window, question_tokens,
                                           turn.answer, turn.cannot_answer, vocab, layout);
        for (int64_t t = group.window.begin; t < group.window.end; ++t)
          group.passage_char_spans.emplace_back(dialog.passage.tokens[static_cast<size_t>(t)].begin,
                                                dialog.passage.tokens[static_cast<size_t>(t)].end);
        group.passage_char_spans.emplace_back(dialog.passage.sentinel_begin,
                                              dialog.passage.sentinel_end);

        for (const auto& var : variations) {
          if (var.window_index != w) continue;
          TokenSequence seq = base;
          if (var.history_index > 0) {
            const AnswerSpan& hist = dialog.turns[static_cast<size_t>(var.history_index - 1)].answer;
            seq.history_ids = mark_history_answer(dialog.passage, group.window, var, hist, seq);
          }
          group.variations.push_back(var);
          group.sequences.push_back(std::move(seq));
        }
        out.groups.push_back(std::move(group));
      }
    }
  }
  return out;
}

}  // namespace convqa
