#pragma once

#include <cstdint>
#include <vector>

namespace convqa {

// One training batch: indices of whole (question, window) groups. The group
// is the atomic unit — all variations of a group always land in one batch so
// the history attention sees every available history turn.
struct Batch {
  std::vector<int32_t> group_indices;
  int64_t sequence_count = 0;
};

// Shuffles the groups with the given seed and packs them greedily in shuffle
// order, never splitting a group. batch_size counts sequences (variations),
// not groups. Deterministic for a fixed (group_sizes, batch_size, seed).
// Throws ConfigError when a single group exceeds batch_size.
std::vector<Batch> make_batches(const std::vector<int32_t>& group_sizes, int64_t batch_size,
                                uint64_t seed);

}  // namespace convqa
