#include "convqa/cache.hpp"

#include <cstring>
#include <fstream>

#include <json.hpp>

#include "convqa/errors.hpp"

namespace convqa {

using nlohmann::json;

namespace {

constexpr int kCacheVersion = 1;

template <typename T>
void write_flat(const std::filesystem::path& file, const std::vector<T>& values) {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw DataError("cannot write cache file " + file.string());
  out.write(reinterpret_cast<const char*>(values.data()),
            static_cast<std::streamsize>(values.size() * sizeof(T)));
}

template <typename T>
std::vector<T> read_flat(const std::filesystem::path& file, size_t count) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw DataError("cannot read cache file " + file.string());
  std::vector<T> values(count);
  in.read(reinterpret_cast<char*>(values.data()),
          static_cast<std::streamsize>(count * sizeof(T)));
  if (!in) throw DataError("cache file " + file.string() + " is truncated");
  return values;
}

struct StringColumn {
  std::string data;
  std::vector<uint64_t> offsets{0};

  void push(const std::string& s) {
    data += s;
    offsets.push_back(data.size());
  }
};

void write_strings(const std::filesystem::path& dir, const std::string& name,
                   const StringColumn& col, json& fields) {
  {
    std::ofstream out(dir / (name + "_data.bin"), std::ios::binary);
    if (!out) throw DataError("cannot write cache file " + (dir / (name + "_data.bin")).string());
    out.write(col.data.data(), static_cast<std::streamsize>(col.data.size()));
  }
  write_flat(dir / (name + "_index.bin"), col.offsets);
  fields.push_back({{"name", name},
                    {"dtype", "str_list"},
                    {"count", col.offsets.size() - 1},
                    {"bytes", col.data.size()}});
}

std::vector<std::string> read_strings(const std::filesystem::path& dir, const json& field) {
  const std::string name = field.at("name").get<std::string>();
  const size_t count = field.at("count").get<size_t>();
  const size_t bytes = field.at("bytes").get<size_t>();
  auto offsets = read_flat<uint64_t>(dir / (name + "_index.bin"), count + 1);
  std::ifstream in(dir / (name + "_data.bin"), std::ios::binary);
  if (!in) throw DataError("cannot read cache file " + (dir / (name + "_data.bin")).string());
  std::string data(bytes, '\0');
  in.read(data.data(), static_cast<std::streamsize>(bytes));
  if (!in && bytes > 0) throw DataError("cache string data truncated for field " + name);
  std::vector<std::string> out;
  out.reserve(count);
  for (size_t i = 0; i < count; ++i)
    out.push_back(data.substr(offsets[i], offsets[i + 1] - offsets[i]));
  return out;
}

const json& find_field(const json& fields, const std::string& name) {
  for (const auto& f : fields)
    if (f.at("name") == name) return f;
  throw DataError("cache manifest is missing field '" + name + "'");
}

}  // namespace

void write_dataset_cache(const DatasetCache& cache, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);

  std::vector<uint64_t> turn_offsets{0};
  StringColumn passage_id, passage_text, qid, question, answer_text, ref_text;
  std::vector<int32_t> answer_begin, ref_counts;
  std::vector<uint8_t> yesno, followup;

  for (const auto& dialog : cache.dialogs) {
    passage_id.push(dialog.passage.id);
    passage_text.push(dialog.passage.text);
    for (const auto& turn : dialog.turns) {
      qid.push(turn.id);
      question.push(turn.question);
      answer_text.push(turn.answer.text);
      answer_begin.push_back(turn.answer.begin);
      yesno.push_back(static_cast<uint8_t>(turn.affirmation));
      followup.push_back(static_cast<uint8_t>(turn.continuation));
      ref_counts.push_back(static_cast<int32_t>(turn.reference_answers.size()));
      for (const auto& r : turn.reference_answers) ref_text.push(r);
    }
    turn_offsets.push_back(turn_offsets.back() + dialog.turns.size());
  }

  json fields = json::array();
  write_flat(dir / "turn_offsets.bin", turn_offsets);
  fields.push_back({{"name", "turn_offsets"}, {"dtype", "u64"}, {"count", turn_offsets.size()}});
  write_strings(dir, "passage_id", passage_id, fields);
  write_strings(dir, "passage_text", passage_text, fields);
  write_strings(dir, "qid", qid, fields);
  write_strings(dir, "question", question, fields);
  write_strings(dir, "answer_text", answer_text, fields);
  write_flat(dir / "answer_begin.bin", answer_begin);
  fields.push_back({{"name", "answer_begin"}, {"dtype", "i32"}, {"count", answer_begin.size()}});
  write_flat(dir / "yesno.bin", yesno);
  fields.push_back({{"name", "yesno"}, {"dtype", "u8"}, {"count", yesno.size()}});
  write_flat(dir / "followup.bin", followup);
  fields.push_back({{"name", "followup"}, {"dtype", "u8"}, {"count", followup.size()}});
  write_flat(dir / "ref_counts.bin", ref_counts);
  fields.push_back({{"name", "ref_counts"}, {"dtype", "i32"}, {"count", ref_counts.size()}});
  write_strings(dir, "ref_text", ref_text, fields);

  cache.vocabulary.save(dir / "vocab.txt");

  const CorpusSummary& s = cache.summary;
  json manifest = {
      {"format", "convqa-dataset-cache"},
      {"version", kCacheVersion},
      {"tokenizer_mode", to_string(cache.tokenizer_mode)},
      {"counts", {{"dialogs", s.dialog_count}, {"questions", s.question_count}}},
      {"history",
       {{"min", s.min_history},
        {"avg", s.avg_history},
        {"median", s.median_history},
        {"max", s.max_history},
        {"histogram", s.history_turn_histogram}}},
      {"fields", fields},
  };
  std::ofstream out(dir / "manifest.json", std::ios::binary);
  if (!out) throw DataError("cannot write cache manifest in " + dir.string());
  out << manifest.dump(2) << '\n';
}

DatasetCache read_dataset_cache(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json", std::ios::binary);
  if (!in) throw DataError("no dataset cache manifest at " + (dir / "manifest.json").string());
  json manifest;
  try {
    in >> manifest;
  } catch (const json::parse_error& e) {
    throw DataError("cache manifest parse error: " + std::string(e.what()));
  }
  if (manifest.value("format", "") != "convqa-dataset-cache")
    throw DataError("not a dataset cache: " + dir.string());
  if (manifest.value("version", 0) != kCacheVersion)
    throw DataError("unsupported cache version " + std::to_string(manifest.value("version", 0)) +
                    " (expected " + std::to_string(kCacheVersion) + ")");

  DatasetCache cache;
  cache.tokenizer_mode = tokenizer_mode_from_string(manifest.at("tokenizer_mode").get<std::string>());
  cache.vocabulary = Vocabulary::load(dir / "vocab.txt");

  const json& fields = manifest.at("fields");
  const size_t n_offsets = find_field(fields, "turn_offsets").at("count").get<size_t>();
  auto turn_offsets = read_flat<uint64_t>(dir / "turn_offsets.bin", n_offsets);
  auto passage_id = read_strings(dir, find_field(fields, "passage_id"));
  auto passage_text = read_strings(dir, find_field(fields, "passage_text"));
  auto qid = read_strings(dir, find_field(fields, "qid"));
  auto question = read_strings(dir, find_field(fields, "question"));
  auto answer_text = read_strings(dir, find_field(fields, "answer_text"));
  const size_t n_turns = qid.size();
  auto answer_begin = read_flat<int32_t>(dir / "answer_begin.bin", n_turns);
  auto yesno = read_flat<uint8_t>(dir / "yesno.bin", n_turns);
  auto followup = read_flat<uint8_t>(dir / "followup.bin", n_turns);
  auto ref_counts = read_flat<int32_t>(dir / "ref_counts.bin", n_turns);
  auto ref_text = read_strings(dir, find_field(fields, "ref_text"));

  size_t ref_cursor = 0;
  for (size_t d = 0; d + 1 < turn_offsets.size(); ++d) {
    Dialog dialog;
    dialog.passage.id = passage_id[d];
    dialog.passage.text = passage_text[d];
    const std::string sentinel = kCannotAnswerText;
    dialog.passage.sentinel_begin =
        static_cast<int32_t>(dialog.passage.text.size() - sentinel.size());
    dialog.passage.sentinel_end = static_cast<int32_t>(dialog.passage.text.size());
    for (size_t t = turn_offsets[d]; t < turn_offsets[d + 1]; ++t) {
      QuestionTurn turn;
      turn.id = qid[t];
      turn.turn_index = static_cast<int32_t>(t - turn_offsets[d]) + 1;
      turn.question = question[t];
      turn.answer.text = answer_text[t];
      turn.answer.begin = answer_begin[t];
      turn.answer.end = turn.answer.begin + static_cast<int32_t>(turn.answer.text.size());
      turn.affirmation = static_cast<Affirmation>(yesno[t]);
      turn.continuation = static_cast<Continuation>(followup[t]);
      turn.cannot_answer = (turn.answer.text == kCannotAnswerText);
      for (int32_t r = 0; r < ref_counts[t]; ++r) turn.reference_answers.push_back(ref_text[ref_cursor++]);
      dialog.turns.push_back(std::move(turn));
    }
    cache.dialogs.push_back(std::move(dialog));
  }
  cache.summary = summarize_corpus(cache.dialogs);
  return cache;
}

}  // namespace convqa
