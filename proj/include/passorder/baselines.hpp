#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "passorder/core.hpp"
#include "passorder/rng.hpp"

namespace passorder {

/// Largest N enumerated without an explicit limit.
constexpr int kMaxFullEnumeration = 10;

struct EnumerationResult {
    PassingOrder best_order;
    double best_J = 0.0;
    std::uint64_t orders_evaluated = 0;
    std::optional<std::vector<double>> J_samples;
};

/// First-come-first-served by free-flow arrival time, ties by id. Always enforceable.
PassingOrder fifo_order(const Scenario& s);

/// Depth-first enumeration of the enforceable orders. `limit == 0` means exhaustive,
/// which is refused (RefusalError) above kMaxFullEnumeration vehicles. Ties keep the
/// first order in enumeration order, so the result is deterministic.
EnumerationResult enumerate_optimal(const Scenario& s, std::uint64_t limit = 0, bool keep_samples = false);

/// Number of enforceable orders: the multinomial N! / prod(lane_count!).
std::uint64_t count_enforceable_orders(const Scenario& s);

/// One order from the random-grouping sampler: each lane is cut into contiguous groups
/// with geometric sizes (p = 0.5), and the groups are interleaved uniformly at random.
std::vector<int> sample_grouped_order(const Scenario& s, Rng& rng);

/// Objective values of `count` sampled orders (histogram input).
std::vector<double> sample_orders_grouped(const Scenario& s, int count, Rng& rng);

}  // namespace passorder
