#include "convqa/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <map>
#include <sstream>
#include <unordered_map>

#include <json.hpp>

#include "convqa/errors.hpp"

namespace convqa {

std::vector<std::string> normalize_answer_tokens(const std::string& text) {
  std::string cleaned;
  cleaned.reserve(text.size());
  for (char c : text) {
    const auto uc = static_cast<unsigned char>(c);
    if (std::ispunct(uc)) continue;
    cleaned += static_cast<char>(std::tolower(uc));
  }
  std::vector<std::string> tokens;
  std::istringstream in(cleaned);
  std::string tok;
  while (in >> tok)
    if (tok != "a" && tok != "an" && tok != "the") tokens.push_back(tok);
  return tokens;
}

namespace {

double bag_f1(const std::vector<std::string>& pred, const std::vector<std::string>& ref) {
  if (pred.empty() || ref.empty()) return (pred == ref) ? 1.0 : 0.0;
  std::unordered_map<std::string, int> counts;
  for (const auto& t : ref) ++counts[t];
  int64_t overlap = 0;
  for (const auto& t : pred) {
    auto it = counts.find(t);
    if (it != counts.end() && it->second > 0) {
      --it->second;
      ++overlap;
    }
  }
  if (overlap == 0) return 0.0;
  const double precision = static_cast<double>(overlap) / static_cast<double>(pred.size());
  const double recall = static_cast<double>(overlap) / static_cast<double>(ref.size());
  return 2.0 * precision * recall / (precision + recall);
}

}  // namespace

double word_f1(const std::string& prediction, const std::vector<std::string>& references) {
  if (references.empty()) throw ContractError("word_f1: no references");
  const auto pred_tokens = normalize_answer_tokens(prediction);
  double best = 0.0;
  for (const auto& ref : references)
    best = std::max(best, bag_f1(pred_tokens, normalize_answer_tokens(ref)));
  return best;
}

double human_f1(const std::vector<std::string>& references) {
  if (references.size() < 2) return 1.0;
  double best = 0.0;
  for (size_t i = 0; i < references.size(); ++i) {
    std::vector<std::string> rest;
    for (size_t j = 0; j < references.size(); ++j)
      if (j != i) rest.push_back(references[j]);
    best = std::max(best, word_f1(references[i], rest));
  }
  return best;
}

HeqScores heq(const std::vector<double>& system_f1, const std::vector<double>& human_f1,
              const std::vector<int32_t>& dialog_ids) {
  if (system_f1.size() != human_f1.size() || system_f1.size() != dialog_ids.size())
    throw DataError("heq: misaligned score lists");
  if (system_f1.empty()) return {};
  int64_t q_pass = 0;
  std::map<int32_t, bool> dialog_pass;
  for (size_t i = 0; i < system_f1.size(); ++i) {
    const bool pass = system_f1[i] >= human_f1[i];
    if (pass) ++q_pass;
    auto [it, inserted] = dialog_pass.emplace(dialog_ids[i], pass);
    if (!inserted) it->second = it->second && pass;
  }
  int64_t d_pass = 0;
  for (const auto& [id, pass] : dialog_pass)
    if (pass) ++d_pass;
  return {100.0 * static_cast<double>(q_pass) / static_cast<double>(system_f1.size()),
          100.0 * static_cast<double>(d_pass) / static_cast<double>(dialog_pass.size())};
}

EvalReport evaluate(const std::vector<Dialog>& gold,
                    const std::vector<DialogPredictions>& predictions) {
  std::unordered_map<std::string, const QuestionPrediction*> by_qid;
  for (const auto& d : predictions)
    for (const auto& q : d.questions) {
      if (by_qid.count(q.qid))
        throw DataError("evaluate: duplicate prediction for question '" + q.qid + "'");
      by_qid[q.qid] = &q;
    }

  EvalReport report;
  std::vector<double> sys_f1, hum_f1;
  std::vector<int32_t> dialog_ids;
  int64_t yes_hits = 0, follow_hits = 0, em_hits = 0;
  double f1_sum = 0.0;

  for (int32_t d = 0; d < static_cast<int32_t>(gold.size()); ++d) {
    for (const auto& turn : gold[static_cast<size_t>(d)].turns) {
      std::vector<std::string> refs{turn.answer.text};
      for (const auto& r : turn.reference_answers)
        if (std::find(refs.begin(), refs.end(), r) == refs.end()) refs.push_back(r);

      EvalRow row;
      row.qid = turn.id;
      row.human_f1 = human_f1(refs);
      const QuestionPrediction* pred = nullptr;
      if (auto it = by_qid.find(turn.id); it != by_qid.end()) pred = it->second;
      if (pred != nullptr) {
        row.f1 = word_f1(pred->answer_text, refs);
        const auto pred_tokens = normalize_answer_tokens(pred->answer_text);
        for (const auto& r : refs)
          if (normalize_answer_tokens(r) == pred_tokens) {
            row.exact_match = true;
            break;
          }
        row.yesno_correct = pred->yesno == turn.affirmation;
        row.followup_correct = pred->followup == turn.continuation;
      }
      row.heq_pass = row.f1 >= row.human_f1;
      sys_f1.push_back(row.f1);
      hum_f1.push_back(row.human_f1);
      dialog_ids.push_back(d);
      f1_sum += row.f1;
      if (row.exact_match) ++em_hits;
      if (row.yesno_correct) ++yes_hits;
      if (row.followup_correct) ++follow_hits;
      report.rows.push_back(std::move(row));
    }
  }

  report.question_count = static_cast<int64_t>(report.rows.size());
  if (report.question_count == 0) return report;
  const double n = static_cast<double>(report.question_count);
  report.f1 = 100.0 * f1_sum / n;
  report.exact_match = 100.0 * static_cast<double>(em_hits) / n;
  const HeqScores h = heq(sys_f1, hum_f1, dialog_ids);
  report.heq_q = h.heq_q;
  report.heq_d = h.heq_d;
  report.yesno_accuracy = static_cast<double>(yes_hits) / n;
  report.followup_accuracy = static_cast<double>(follow_hits) / n;
  return report;
}

std::string EvalReport::to_json() const {
  nlohmann::json rows_json = nlohmann::json::array();
  for (const auto& row : rows)
    rows_json.push_back({{"qid", row.qid},
                         {"f1", row.f1},
                         {"human_f1", row.human_f1},
                         {"exact_match", row.exact_match},
                         {"heq_pass", row.heq_pass},
                         {"yesno_correct", row.yesno_correct},
                         {"followup_correct", row.followup_correct}});
  nlohmann::json doc = {{"f1", f1},
                        {"heq_q", heq_q},
                        {"heq_d", heq_d},
                        {"exact_match", exact_match},
                        {"yesno_accuracy", yesno_accuracy},
                        {"followup_accuracy", followup_accuracy},
                        {"question_count", question_count},
                        {"questions", rows_json}};
  return doc.dump(2);
}

std::string EvalReport::to_table() const {
  std::ostringstream out;
  char line[128];
  std::snprintf(line, sizeof(line), "%-18s %8s\n", "metric", "value");
  out << line << std::string(27, '-') << '\n';
  const std::pair<const char*, double> entries[] = {
      {"F1", f1},
      {"HEQ-Q", heq_q},
      {"HEQ-D", heq_d},
      {"Exact match", exact_match},
      {"Yes/No acc", 100.0 * yesno_accuracy},
      {"Follow up acc", 100.0 * followup_accuracy},
  };
  for (const auto& [name, value] : entries) {
    std::snprintf(line, sizeof(line), "%-18s %8.2f\n", name, value);
    out << line;
  }
  out << "questions: " << question_count << '\n';
  return out.str();
}

}  // namespace convqa
