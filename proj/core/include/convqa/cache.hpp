#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "convqa/corpus.hpp"
#include "convqa/tokenizer.hpp"

namespace convqa {

// Compiled dataset cache: a directory holding a versioned manifest, the
// corpus vocabulary, and one flat little-endian array file per field (see
// docs/dataset_cache.md). Packing geometry is not baked in; sequences are
// rebuilt from the cache at run time so one cache serves any model config.
struct DatasetCache {
  std::vector<Dialog> dialogs;  // not tokenized
  Vocabulary vocabulary;
  TokenizerMode tokenizer_mode = TokenizerMode::kWhitespace;
  CorpusSummary summary;
};

void write_dataset_cache(const DatasetCache& cache, const std::filesystem::path& dir);
DatasetCache read_dataset_cache(const std::filesystem::path& dir);

}  // namespace convqa
