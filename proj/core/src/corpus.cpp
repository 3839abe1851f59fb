#include "convqa/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "convqa/errors.hpp"

namespace convqa {

using nlohmann::json;

Affirmation affirmation_from_code(const std::string& code) {
  if (code == "y") return Affirmation::kYes;
  if (code == "n") return Affirmation::kNo;
  if (code == "x") return Affirmation::kNeither;
  throw DataError("unknown yesno code '" + code + "' (expected y|n|x)");
}

Continuation continuation_from_code(const std::string& code) {
  if (code == "y") return Continuation::kFollowUp;
  if (code == "m") return Continuation::kMaybeFollowUp;
  if (code == "n") return Continuation::kDontFollowUp;
  throw DataError("unknown followup code '" + code + "' (expected y|m|n)");
}

std::string to_code(Affirmation a) {
  switch (a) {
    case Affirmation::kYes: return "y";
    case Affirmation::kNo: return "n";
    case Affirmation::kNeither: return "x";
  }
  return "x";
}

std::string to_code(Continuation c) {
  switch (c) {
    case Continuation::kFollowUp: return "y";
    case Continuation::kMaybeFollowUp: return "m";
    case Continuation::kDontFollowUp: return "n";
  }
  return "n";
}

namespace {

const json& require(const json& node, const char* key, const std::string& path) {
  auto it = node.find(key);
  if (it == node.end()) throw DataError("corpus: missing key '" + std::string(key) + "' at " + path);
  return *it;
}

AnswerSpan read_answer(const json& node, const std::string& path) {
  AnswerSpan span;
  span.text = require(node, "text", path).get<std::string>();
  span.begin = require(node, "answer_start", path).get<int32_t>();
  span.end = span.begin + static_cast<int32_t>(span.text.size());
  return span;
}

void validate_span(const AnswerSpan& span, const std::string& context, const std::string& qid) {
  if (span.begin < 0 || span.end > static_cast<int32_t>(context.size()) ||
      context.compare(static_cast<size_t>(span.begin), span.text.size(), span.text) != 0)
    throw DataError("corpus: answer span for question '" + qid +
                    "' does not match the context text at offset " + std::to_string(span.begin));
}

}  // namespace

std::vector<Dialog> parse_corpus(const std::string& json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw DataError(std::string("corpus: JSON parse error: ") + e.what());
  }

  std::vector<Dialog> dialogs;
  const json& data = require(doc, "data", "$");
  for (size_t di = 0; di < data.size(); ++di) {
    const std::string dpath = "$.data[" + std::to_string(di) + "]";
    const json& paragraphs = require(data[di], "paragraphs", dpath);
    for (size_t pi = 0; pi < paragraphs.size(); ++pi) {
      const std::string ppath = dpath + ".paragraphs[" + std::to_string(pi) + "]";
      const json& para = paragraphs[pi];
      Dialog dialog;
      dialog.passage.text = require(para, "context", ppath).get<std::string>();
      if (para.contains("id"))
        dialog.passage.id = para["id"].get<std::string>();
      else
        dialog.passage.id = "d" + std::to_string(dialogs.size());

      const std::string& context = dialog.passage.text;
      const std::string sentinel = kCannotAnswerText;
      if (context.size() < sentinel.size() ||
          context.compare(context.size() - sentinel.size(), sentinel.size(), sentinel) != 0)
        throw DataError("corpus: context at " + ppath + " does not end with " + sentinel);
      dialog.passage.sentinel_begin = static_cast<int32_t>(context.size() - sentinel.size());
      dialog.passage.sentinel_end = static_cast<int32_t>(context.size());

      const json& qas = require(para, "qas", ppath);
      for (size_t qi = 0; qi < qas.size(); ++qi) {
        const std::string qpath = ppath + ".qas[" + std::to_string(qi) + "]";
        const json& qa = qas[qi];
        QuestionTurn turn;
        turn.id = require(qa, "id", qpath).get<std::string>();
        turn.turn_index = static_cast<int32_t>(qi) + 1;
        turn.question = require(qa, "question", qpath).get<std::string>();
        turn.answer = read_answer(require(qa, "orig_answer", qpath), qpath);
        validate_span(turn.answer, context, turn.id);
        turn.cannot_answer = (turn.answer.text == kCannotAnswerText);
        if (qa.contains("answers"))
          for (const auto& ref : qa["answers"])
            turn.reference_answers.push_back(require(ref, "text", qpath).get<std::string>());
        turn.affirmation = affirmation_from_code(require(qa, "yesno", qpath).get<std::string>());
        turn.continuation = continuation_from_code(require(qa, "followup", qpath).get<std::string>());
        dialog.turns.push_back(std::move(turn));
      }
      dialogs.push_back(std::move(dialog));
    }
  }
  return dialogs;
}

std::vector<Dialog> load_corpus_file(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw DataError("cannot read corpus file " + file.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_corpus(buf.str());
}

void tokenize_corpus(std::vector<Dialog>& dialogs, TokenizerMode mode, const Vocabulary* vocab) {
  for (auto& dialog : dialogs) {
    Passage& p = dialog.passage;
    // Tokenize the body and append the sentinel as one token so it is always
    // addressable as a single span target.
    std::string_view body(p.text.data(), static_cast<size_t>(p.sentinel_begin));
    p.tokens = tokenize(body, mode, vocab);
    Token sentinel;
    sentinel.text = kCannotAnswerText;
    for (char& c : sentinel.text) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    sentinel.begin = p.sentinel_begin;
    sentinel.end = p.sentinel_end;
    p.tokens.push_back(std::move(sentinel));
  }
}

Vocabulary build_corpus_vocabulary(const std::vector<Dialog>& dialogs) {
  Vocabulary vocab;
  auto add_all = [&vocab](std::string_view text) {
    for (auto& t : tokenize_whitespace(text)) vocab.add(t.text);
  };
  for (const auto& dialog : dialogs) {
    add_all(dialog.passage.text);
    for (const auto& turn : dialog.turns) add_all(turn.question);
  }
  return vocab;
}

CorpusSummary summarize_corpus(const std::vector<Dialog>& dialogs) {
  CorpusSummary s;
  std::vector<int64_t> counts;
  for (const auto& dialog : dialogs) {
    ++s.dialog_count;
    for (const auto& turn : dialog.turns) {
      ++s.question_count;
      counts.push_back(dialog.history_count(turn.turn_index));
    }
  }
  if (counts.empty()) return s;
  std::sort(counts.begin(), counts.end());
  s.min_history = counts.front();
  s.max_history = counts.back();
  s.history_turn_histogram.assign(static_cast<size_t>(s.max_history) + 1, 0);
  int64_t total = 0;
  for (int64_t c : counts) {
    ++s.history_turn_histogram[static_cast<size_t>(c)];
    total += c;
  }
  s.avg_history = static_cast<double>(total) / static_cast<double>(counts.size());
  const size_t mid = counts.size() / 2;
  s.median_history = counts.size() % 2 ? static_cast<double>(counts[mid])
                                       : 0.5 * static_cast<double>(counts[mid - 1] + counts[mid]);
  return s;
}

}  // namespace convqa
