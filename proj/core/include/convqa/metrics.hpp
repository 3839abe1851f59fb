#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "convqa/corpus.hpp"
#include "convqa/predictions.hpp"

namespace convqa {

// Normalization used by the word-level F1: lowercase, strip punctuation,
// collapse whitespace, drop the articles a/an/the.
std::vector<std::string> normalize_answer_tokens(const std::string& text);

// Bag-of-words overlap F1 against each reference, best reference wins.
// Identical empty bags score 1; an empty overlap scores 0.
double word_f1(const std::string& prediction, const std::vector<std::string>& references);

// Human F1 for one question: leave-one-out best among multiple references,
// or 1 when only a single reference exists.
double human_f1(const std::vector<std::string>& references);

struct HeqScores {
  double heq_q = 0.0;  // % of questions with system F1 >= human F1
  double heq_d = 0.0;  // % of dialogs where every question passes
};

// dialog_ids aligns each question to its dialog.
HeqScores heq(const std::vector<double>& system_f1, const std::vector<double>& human_f1,
              const std::vector<int32_t>& dialog_ids);

// Fraction of exact label matches.
template <typename Label>
double act_accuracy(const std::vector<Label>& predicted, const std::vector<Label>& gold) {
  if (predicted.size() != gold.size())
    throw DataError("act_accuracy: misaligned label lists (" + std::to_string(predicted.size()) +
                    " vs " + std::to_string(gold.size()) + ")");
  if (gold.empty()) return 0.0;
  int64_t hits = 0;
  for (size_t i = 0; i < gold.size(); ++i)
    if (predicted[i] == gold[i]) ++hits;
  return static_cast<double>(hits) / static_cast<double>(gold.size());
}

struct EvalRow {
  std::string qid;
  double f1 = 0.0;        // in [0, 1]
  double human_f1 = 1.0;  // in [0, 1]
  bool exact_match = false;
  bool heq_pass = false;
  bool yesno_correct = false;
  bool followup_correct = false;
};

struct EvalReport {
  double f1 = 0.0;     // percentages in [0, 100]
  double heq_q = 0.0;
  double heq_d = 0.0;
  double exact_match = 0.0;
  double yesno_accuracy = 0.0;     // fractions in [0, 1]
  double followup_accuracy = 0.0;
  int64_t question_count = 0;
  std::vector<EvalRow> rows;

  std::string to_json() const;
  std::string to_table() const;
};

// Scores a prediction file against gold dialogs. A question without a
// prediction counts as fully wrong.
EvalReport evaluate(const std::vector<Dialog>& gold,
                    const std::vector<DialogPredictions>& predictions);

}  // namespace convqa
