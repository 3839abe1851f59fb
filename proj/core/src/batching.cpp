#include "convqa/batching.hpp"

#include <algorithm>
#include <numeric>
#include <random>

#include "convqa/errors.hpp"

namespace convqa {

std::vector<Batch> make_batches(const std::vector<int32_t>& group_sizes, int64_t batch_size,
                                uint64_t seed) {
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  for (size_t g = 0; g < group_sizes.size(); ++g)
    if (group_sizes[g] > batch_size)
      throw ConfigError("group " + std::to_string(g) + " has " + std::to_string(group_sizes[g]) +
                        " variations but batch_size is " + std::to_string(batch_size) +
                        "; raise batch_size to at least the max group size");

  std::vector<int32_t> order(group_sizes.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  std::vector<Batch> batches;
  Batch current;
  for (int32_t g : order) {
    const int32_t size = group_sizes[static_cast<size_t>(g)];
    if (current.sequence_count + size > batch_size && current.sequence_count > 0) {
      batches.push_back(std::move(current));
      current = Batch{};
    }
    current.group_indices.push_back(g);
    current.sequence_count += size;
  }
  if (current.sequence_count > 0) batches.push_back(std::move(current));
  return batches;
}

}  // namespace convqa
