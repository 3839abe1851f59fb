#include "convqa/predictions.hpp"

#include <fstream>

#include <json.hpp>

#include "convqa/errors.hpp"
#include "convqa/heads.hpp"

namespace convqa {

using nlohmann::json;

SpanPrediction aggregate_windows(const std::vector<SpanPrediction>& windows) {
  if (windows.empty()) throw ContractError("aggregate_windows: no window predictions");
  const SpanPrediction* best = &windows[0];
  for (size_t i = 1; i < windows.size(); ++i) {
    const SpanPrediction& cand = windows[i];
    if (cand.score > best->score) {
      best = &cand;
      continue;
    }
    if (cand.score < best->score) continue;
    // equal score: a real span beats the sentinel, then earlier window/begin
    if (best->is_cannot_answer && !cand.is_cannot_answer) {
      best = &cand;
      continue;
    }
    if (!best->is_cannot_answer && cand.is_cannot_answer) continue;
    if (cand.window_index < best->window_index ||
        (cand.window_index == best->window_index && cand.begin < best->begin))
      best = &cand;
  }
  return *best;
}

void write_predictions(const std::vector<DialogPredictions>& dialogs,
                       const std::filesystem::path& file) {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw DataError("cannot write prediction file " + file.string());
  for (const auto& dialog : dialogs) {
    json line = {{"dialog_id", dialog.dialog_id},
                 {"qid", json::array()},
                 {"answer_text", json::array()},
                 {"yesno", json::array()},
                 {"followup", json::array()}};
    for (const auto& q : dialog.questions) {
      line["qid"].push_back(q.qid);
      line["answer_text"].push_back(q.answer_text);
      line["yesno"].push_back(to_code(q.yesno));
      line["followup"].push_back(to_code(q.followup));
    }
    out << line.dump() << '\n';
  }
}

std::vector<DialogPredictions> read_predictions(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw DataError("cannot read prediction file " + file.string());
  std::vector<DialogPredictions> dialogs;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json obj;
    try {
      obj = json::parse(line);
    } catch (const json::parse_error& e) {
      throw DataError("prediction file " + file.string() + " line " + std::to_string(line_no) +
                      ": " + e.what());
    }
    DialogPredictions d;
    d.dialog_id = obj.value("dialog_id", "");
    const auto& qids = obj.at("qid");
    const auto& answers = obj.at("answer_text");
    const auto& yesno = obj.at("yesno");
    const auto& followup = obj.at("followup");
    if (qids.size() != answers.size() || qids.size() != yesno.size() ||
        qids.size() != followup.size())
      throw DataError("prediction file " + file.string() + " line " + std::to_string(line_no) +
                      ": misaligned arrays");
    for (size_t i = 0; i < qids.size(); ++i) {
      QuestionPrediction q;
      q.qid = qids[i].get<std::string>();
      q.answer_text = answers[i].get<std::string>();
      q.yesno = affirmation_from_code(yesno[i].get<std::string>());
      q.followup = continuation_from_code(followup[i].get<std::string>());
      d.questions.push_back(std::move(q));
    }
    dialogs.push_back(std::move(d));
  }
  return dialogs;
}

}  // namespace convqa
