#include "impure/partition.hpp"

#include <algorithm>
#include <numeric>

#include "impure/rng.hpp"

namespace impure {

namespace {

// a*b = s with a | grid_h and b | grid_w, preferring the most square split
// (ties go to the smaller a).
std::pair<int, int> uniform_factors(int s, int grid_h, int grid_w) {
    int best_a = -1, best_b = -1;
    for (int a = 1; a <= s; ++a) {
        if (s % a != 0) continue;
        int b = s / a;
        if (grid_h % a != 0 || grid_w % b != 0) continue;
        if (best_a < 0 || std::abs(a - b) < std::abs(best_a - best_b)) {
            best_a = a;
            best_b = b;
        }
    }
    IMPURE_CHECK(best_a > 0, "uniform partition: no factorization a*b=" << s << " with a|"
                                                                        << grid_h << ", b|" << grid_w);
    return {best_a, best_b};
}

}  // namespace

SubsetPartition make_partition(int n, int s, PartitionMode mode, uint64_t seed, int grid_h,
                               int grid_w) {
    IMPURE_CHECK(n >= 1 && s >= 1, "make_partition: need n >= 1 and s >= 1");
    IMPURE_CHECK(n % s == 0, "make_partition: " << s << " does not divide " << n);

    SubsetPartition part;
    part.n = n;
    part.s = s;
    part.mode = mode;
    part.seed = seed;
    part.assignment.assign(static_cast<size_t>(n), 0);
    const int l = n / s;

    if (mode == PartitionMode::Random) {
        std::vector<int> order(static_cast<size_t>(n));
        std::iota(order.begin(), order.end(), 0);
        Rng rng(seed, 0x7061727469746eull);  // partition stream
        rng.shuffle(order.begin(), order.end());
        for (int k = 0; k < n; ++k) part.assignment[static_cast<size_t>(order[static_cast<size_t>(k)])] = k / l;
    } else {
        IMPURE_CHECK(grid_h > 0 && grid_w > 0 && grid_h * grid_w == n,
                     "uniform partition requires grid dims with grid_h*grid_w == n");
        auto [a, b] = uniform_factors(s, grid_h, grid_w);
        for (int r = 0; r < grid_h; ++r)
            for (int c = 0; c < grid_w; ++c)
                part.assignment[static_cast<size_t>(r) * grid_w + c] = (r % a) * b + (c % b);
    }

    part.subsets.assign(static_cast<size_t>(s), {});
    for (auto& sub : part.subsets) sub.reserve(static_cast<size_t>(l));
    for (int i = 0; i < n; ++i) part.subsets[static_cast<size_t>(part.assignment[static_cast<size_t>(i)])].push_back(i);
    for (auto& sub : part.subsets)
        IMPURE_CHECK(static_cast<int>(sub.size()) == l, "partition produced unequal subsets");
    return part;
}

}  // namespace impure
