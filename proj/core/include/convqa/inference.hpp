#pragma once

// Inference over a sequenced corpus: per-window span decoding, window
// aggregation, dialog-act argmax, and attention-record capture.

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "convqa/heads.hpp"
#include "convqa/history_attention.hpp"
#include "convqa/model.hpp"
#include "convqa/predictions.hpp"
#include "convqa/sequencing.hpp"

namespace convqa {

namespace inference_detail {

template <typename S>
struct WindowResult {
  SpanPrediction span;
  int32_t affirm = 0;
  int32_t cont = 0;
};

template <typename S>
WindowResult<S> run_window(Model<S>& model, const SequencedGroup& group) {
  auto fwd = model.forward_group(group, ForwardCtx{});
  WindowResult<S> result;
  result.span = decode_span<S>(fwd.p_begin.values(), fwd.p_end.values(),
                               model.constraints_for(group));
  result.span.window_index = group.window_index;
  result.affirm = argmax_class(fwd.p_affirm);
  result.cont = argmax_class(fwd.p_cont);
  return result;
}

}  // namespace inference_detail

// Extracts the answer text of a decoded span from the group's char map.
inline std::string span_text(const SequencedGroup& group, const Dialog& dialog,
                             const SpanPrediction& span) {
  const TokenSequence& seq = group.sequences.front();
  const auto first = static_cast<size_t>(span.begin - seq.passage_begin);
  const auto last = static_cast<size_t>(span.end - seq.passage_begin);
  const int32_t cb = group.passage_char_spans[first].first;
  const int32_t ce = group.passage_char_spans[last].second;
  return dialog.passage.text.substr(static_cast<size_t>(cb), static_cast<size_t>(ce - cb));
}

// Full-corpus prediction. Spans are decoded per window and merged with
// aggregate_windows; the dialog acts come from the window whose span won.
template <typename S>
std::vector<DialogPredictions> predict_corpus(Model<S>& model, const std::vector<Dialog>& dialogs,
                                              const SequencedCorpus& corpus) {
  struct TurnAccum {
    std::vector<SpanPrediction> spans;
    std::vector<const SequencedGroup*> groups;
    std::vector<std::pair<int32_t, int32_t>> acts;
  };
  std::map<std::pair<int32_t, int32_t>, TurnAccum> turns;
  for (const auto& group : corpus.groups) {
    auto result = inference_detail::run_window(model, group);
    TurnAccum& acc = turns[{group.dialog_index, group.turn_index}];
    acc.spans.push_back(result.span);
    acc.groups.push_back(&group);
    acc.acts.emplace_back(result.affirm, result.cont);
  }

  std::vector<DialogPredictions> out(dialogs.size());
  for (size_t d = 0; d < dialogs.size(); ++d) out[d].dialog_id = dialogs[d].passage.id;
  for (auto& [key, acc] : turns) {
    const auto [dialog_index, turn_index] = key;
    const SpanPrediction best = aggregate_windows(acc.spans);
    size_t winner = 0;
    for (size_t w = 0; w < acc.spans.size(); ++w)
      if (acc.spans[w].window_index == best.window_index) winner = w;
    const Dialog& dialog = dialogs[static_cast<size_t>(dialog_index)];

    QuestionPrediction pred;
    pred.qid = dialog.turns[static_cast<size_t>(turn_index - 1)].id;
    pred.answer_text = best.is_cannot_answer
                           ? std::string(kCannotAnswerText)
                           : span_text(*acc.groups[winner], dialog, best);
    pred.yesno = static_cast<Affirmation>(acc.acts[winner].first);
    pred.followup = static_cast<Continuation>(acc.acts[winner].second);
    out[static_cast<size_t>(dialog_index)].questions.push_back(std::move(pred));
  }
  return out;
}

// Attention records for every group, in corpus order.
template <typename S>
std::vector<AttentionRecord> collect_attention_records(Model<S>& model,
                                                       const std::vector<Dialog>& dialogs,
                                                       const SequencedCorpus& corpus,
                                                       const Vocabulary& vocab) {
  std::vector<AttentionRecord> records;
  for (const auto& group : corpus.groups) {
    auto fwd = model.forward_group(group, ForwardCtx{});
    const bool fine = model.config().fine_grained;
    AttentionRecord rec = make_attention_record(fine ? fwd.token_weights : fwd.seq_weights, fine,
                                                fwd.turn_mask, model.config().encoder.max_seq_len);
    rec.qid = group.qid;
    rec.turn_index = group.turn_index;
    rec.window_index = group.window_index;
    rec.relative_positions.assign(fwd.turn_mask.size(), -1);
    for (size_t v = 0; v < group.variations.size(); ++v)
      rec.relative_positions[v] = group.variations[v].relative_position;
    const TokenSequence& seq = group.sequences.front();
    for (size_t p = 0; p < seq.token_ids.size(); ++p)
      rec.tokens.push_back(seq.attention_mask[p] ? vocab.token(seq.token_ids[p]) : "");
    records.push_back(std::move(rec));
  }
  return records;
}

}  // namespace convqa
