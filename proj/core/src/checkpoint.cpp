#include "convqa/checkpoint.hpp"

#include <fstream>

#include <json.hpp>

namespace convqa {

using nlohmann::json;

namespace ckpt_detail {

constexpr int kCheckpointVersion = 1;

std::string array_file_name(const std::string& param_name, const std::string& prefix) {
  std::string file = prefix;
  for (char c : param_name)
    file += (std::isalnum(static_cast<unsigned char>(c)) != 0) ? c : '_';
  return file + ".bin";
}

void write_array(const std::filesystem::path& file, const void* data, size_t bytes) {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint array " + file.string());
  out.write(static_cast<const char*>(data), static_cast<std::streamsize>(bytes));
  if (!out) throw DataError("short write on checkpoint array " + file.string());
}

void read_array(const std::filesystem::path& file, void* data, size_t bytes) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw DataError("cannot read checkpoint array " + file.string());
  in.read(static_cast<char*>(data), static_cast<std::streamsize>(bytes));
  if (in.gcount() != static_cast<std::streamsize>(bytes))
    throw DataError("checkpoint array " + file.string() + " is truncated");
}

void write_manifest(const std::filesystem::path& dir, const ManifestData& data) {
  json params = json::array();
  for (const auto& p : data.params)
    params.push_back({{"name", p.name}, {"shape", p.shape}, {"file", p.file}});
  json manifest = {
      {"format", "convqa-checkpoint"},
      {"version", kCheckpointVersion},
      {"precision", data.precision},
      {"config", json::parse(data.config_json)},
      {"params", params},
  };
  if (data.has_optimizer)
    manifest["optimizer"] = {{"updates", data.optimizer_updates},
                             {"first_moment_files", data.first_moment_files},
                             {"second_moment_files", data.second_moment_files}};
  if (data.has_loop)
    manifest["loop"] = {{"step", data.loop.step},
                        {"epoch", data.loop.epoch},
                        {"batch_cursor", data.loop.batch_cursor},
                        {"dropout_rng", data.loop.dropout_rng},
                        {"avg_loss_ans", data.loop.avg_loss_ans},
                        {"avg_loss_affirm", data.loop.avg_loss_affirm},
                        {"avg_loss_cont", data.loop.avg_loss_cont}};
  std::ofstream out(dir / "manifest.json", std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint manifest in " + dir.string());
  out << manifest.dump(2) << '\n';
}

ManifestData read_manifest(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json", std::ios::binary);
  if (!in) throw DataError("no checkpoint manifest at " + (dir / "manifest.json").string());
  json manifest;
  try {
    in >> manifest;
  } catch (const json::parse_error& e) {
    throw DataError("checkpoint manifest parse error: " + std::string(e.what()));
  }
  if (manifest.value("format", "") != "convqa-checkpoint")
    throw DataError("not a checkpoint directory: " + dir.string());
  if (manifest.value("version", 0) != kCheckpointVersion)
    throw DataError("unsupported checkpoint version " +
                    std::to_string(manifest.value("version", 0)));
  ManifestData data;
  data.precision = manifest.at("precision").get<std::string>();
  data.config_json = manifest.at("config").dump();
  for (const auto& p : manifest.at("params")) {
    ManifestParam entry;
    entry.name = p.at("name").get<std::string>();
    entry.shape = p.at("shape").get<Shape>();
    entry.file = p.at("file").get<std::string>();
    data.params.push_back(std::move(entry));
  }
  if (manifest.contains("optimizer")) {
    data.has_optimizer = true;
    const auto& opt = manifest["optimizer"];
    data.optimizer_updates = opt.at("updates").get<int64_t>();
    data.first_moment_files = opt.at("first_moment_files").get<std::vector<std::string>>();
    data.second_moment_files = opt.at("second_moment_files").get<std::vector<std::string>>();
  }
  if (manifest.contains("loop")) {
    data.has_loop = true;
    const auto& loop = manifest["loop"];
    data.loop.step = loop.at("step").get<int64_t>();
    data.loop.epoch = loop.at("epoch").get<int64_t>();
    data.loop.batch_cursor = loop.at("batch_cursor").get<int64_t>();
    data.loop.dropout_rng = loop.at("dropout_rng").get<std::string>();
    data.loop.avg_loss_ans = loop.at("avg_loss_ans").get<double>();
    data.loop.avg_loss_affirm = loop.at("avg_loss_affirm").get<double>();
    data.loop.avg_loss_cont = loop.at("avg_loss_cont").get<double>();
  }
  return data;
}

}  // namespace ckpt_detail

std::string read_checkpoint_config(const std::filesystem::path& dir) {
  return ckpt_detail::read_manifest(dir).config_json;
}

}  // namespace convqa
