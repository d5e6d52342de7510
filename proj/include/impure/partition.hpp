#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "impure/common.hpp"

namespace impure {

enum class PartitionMode { Random, Uniform };

inline std::string to_string(PartitionMode m) {
    return m == PartitionMode::Random ? "random" : "uniform";
}
inline PartitionMode partition_mode_from_string(const std::string& s) {
    if (s == "random") return PartitionMode::Random;
    if (s == "uniform") return PartitionMode::Uniform;
    throw ContractViolation("unknown partition mode: " + s);
}

// Disjoint equal-size cover of the N patch indices by S subsets.
struct SubsetPartition {
    int n = 0, s = 0;
    PartitionMode mode = PartitionMode::Random;
    uint64_t seed = 0;
    std::vector<int> assignment;           // [N] -> subset id
    std::vector<std::vector<int>> subsets;  // subset id -> ascending patch indices

    int subset_size() const { return n / s; }
};

// Random mode: seeded shuffle of 0..N-1 split into S consecutive blocks.
// Uniform mode: S = a*b with a | grid_h and b | grid_w; patch at grid (r, c)
// goes to subset (r % a) * b + (c % b). grid dims are only needed for uniform.
SubsetPartition make_partition(int n, int s, PartitionMode mode, uint64_t seed, int grid_h = 0,
                               int grid_w = 0);

}  // namespace impure
