#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "convqa/corpus.hpp"

namespace convqa {

struct QuestionPrediction {
  std::string qid;
  std::string answer_text;
  Affirmation yesno = Affirmation::kNeither;
  Continuation followup = Continuation::kDontFollowUp;
};

struct DialogPredictions {
  std::string dialog_id;
  std::vector<QuestionPrediction> questions;
};

// Prediction file: newline-delimited JSON, one object per dialog with
// aligned arrays qid / answer_text / yesno / followup (codes y|n|x, y|m|n).
void write_predictions(const std::vector<DialogPredictions>& dialogs,
                       const std::filesystem::path& file);
std::vector<DialogPredictions> read_predictions(const std::filesystem::path& file);

}  // namespace convqa
