#pragma once

// Checkpoint directory layout: manifest.json carrying names/shapes/precision
// plus the serialized run configuration, one flat little-endian array file
// per named parameter, and (for resumable training states) optimizer moment
// arrays and the loop cursor.

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "convqa/errors.hpp"
#include "convqa/tensor.hpp"
#include "convqa/training.hpp"

namespace convqa {

struct TrainLoopState {
  int64_t step = 0;
  int64_t epoch = 0;
  int64_t batch_cursor = 0;
  std::string dropout_rng;  // serialized mt19937 stream state
  double avg_loss_ans = 0.0;
  double avg_loss_affirm = 0.0;
  double avg_loss_cont = 0.0;
};

namespace ckpt_detail {

struct ManifestParam {
  std::string name;
  Shape shape;
  std::string file;
};

struct ManifestData {
  std::string precision;    // "f32" | "f64"
  std::string config_json;  // resolved run configuration
  std::vector<ManifestParam> params;
  bool has_optimizer = false;
  int64_t optimizer_updates = 0;
  std::vector<std::string> first_moment_files;
  std::vector<std::string> second_moment_files;
  bool has_loop = false;
  TrainLoopState loop;
};

void write_manifest(const std::filesystem::path& dir, const ManifestData& data);
ManifestData read_manifest(const std::filesystem::path& dir);
void write_array(const std::filesystem::path& file, const void* data, size_t bytes);
void read_array(const std::filesystem::path& file, void* data, size_t bytes);
std::string array_file_name(const std::string& param_name, const std::string& prefix);

template <typename S>
constexpr const char* precision_name() {
  if constexpr (sizeof(S) == 4)
    return "f32";
  else
    return "f64";
}

}  // namespace ckpt_detail

template <typename S>
void save_checkpoint(const std::filesystem::path& dir,
                     std::vector<std::pair<std::string, Tensor<S>>>& params,
                     const std::string& config_json, AdamW<S>* optimizer = nullptr,
                     const TrainLoopState* loop = nullptr) {
  namespace cd = ckpt_detail;
  std::filesystem::create_directories(dir);
  cd::ManifestData manifest;
  manifest.precision = cd::precision_name<S>();
  manifest.config_json = config_json;
  for (auto& [name, p] : params) {
    cd::ManifestParam entry{name, p.shape(), cd::array_file_name(name, "p_")};
    cd::write_array(dir / entry.file, p.values().data(), p.values().size() * sizeof(S));
    manifest.params.push_back(std::move(entry));
  }
  if (optimizer != nullptr) {
    manifest.has_optimizer = true;
    manifest.optimizer_updates = optimizer->update_count();
    for (size_t i = 0; i < params.size(); ++i) {
      const std::string mf = cd::array_file_name(params[i].first, "m_");
      const std::string vf = cd::array_file_name(params[i].first, "v_");
      cd::write_array(dir / mf, optimizer->first_moments()[i].data(),
                      optimizer->first_moments()[i].size() * sizeof(S));
      cd::write_array(dir / vf, optimizer->second_moments()[i].data(),
                      optimizer->second_moments()[i].size() * sizeof(S));
      manifest.first_moment_files.push_back(mf);
      manifest.second_moment_files.push_back(vf);
    }
  }
  if (loop != nullptr) {
    manifest.has_loop = true;
    manifest.loop = *loop;
  }
  cd::write_manifest(dir, manifest);
}

// Reads just the stored configuration so callers can size the model first.
std::string read_checkpoint_config(const std::filesystem::path& dir);

template <typename S>
void load_checkpoint(const std::filesystem::path& dir,
                     std::vector<std::pair<std::string, Tensor<S>>>& params,
                     AdamW<S>* optimizer = nullptr, TrainLoopState* loop = nullptr) {
  namespace cd = ckpt_detail;
  cd::ManifestData manifest = cd::read_manifest(dir);
  if (manifest.precision != cd::precision_name<S>())
    throw ConfigError("checkpoint precision " + manifest.precision + " does not match " +
                      cd::precision_name<S>());
  if (manifest.params.size() != params.size())
    throw ConfigError("checkpoint holds " + std::to_string(manifest.params.size()) +
                      " parameters, model has " + std::to_string(params.size()));
  for (size_t i = 0; i < params.size(); ++i) {
    auto& [name, p] = params[i];
    const auto& entry = manifest.params[i];
    if (entry.name != name)
      throw ConfigError("checkpoint parameter '" + entry.name + "' does not match model '" +
                        name + "'");
    if (entry.shape != p.shape())
      throw ConfigError("checkpoint parameter '" + name + "' has shape " +
                        shape_str(entry.shape) + ", model wants " + shape_str(p.shape()));
    cd::read_array(dir / entry.file, p.values().data(), p.values().size() * sizeof(S));
  }
  if (optimizer != nullptr) {
    if (!manifest.has_optimizer)
      throw ConfigError("checkpoint at " + dir.string() + " has no optimizer state to resume");
    optimizer->set_update_count(manifest.optimizer_updates);
    for (size_t i = 0; i < params.size(); ++i) {
      cd::read_array(dir / manifest.first_moment_files[i], optimizer->first_moments()[i].data(),
                     optimizer->first_moments()[i].size() * sizeof(S));
      cd::read_array(dir / manifest.second_moment_files[i], optimizer->second_moments()[i].data(),
                     optimizer->second_moments()[i].size() * sizeof(S));
    }
  }
  if (loop != nullptr) {
    if (!manifest.has_loop)
      throw ConfigError("checkpoint at " + dir.string() + " has no training loop state");
    *loop = manifest.loop;
  }
}

}  // namespace convqa
