#include "passorder/baselines.hpp"

#include <algorithm>
#include <limits>
#include <numeric>

#include "passorder/errors.hpp"

namespace passorder {

PassingOrder fifo_order(const Scenario& s) {
    std::vector<int> idx(static_cast<std::size_t>(s.size()));
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) {
        const double ta = s.free_flow_time(a);
        const double tb = s.free_flow_time(b);
        return ta != tb ? ta < tb : s.vehicle(a).id < s.vehicle(b).id;
    });
    return order_from_indices(idx, s);
}

namespace {

std::vector<std::vector<int>> lanes_of(const Scenario& s) {
    std::vector<std::vector<int>> by_lane(static_cast<std::size_t>(s.geometry().entry_lane_count()));
    for (int i = 0; i < s.size(); ++i) by_lane[static_cast<std::size_t>(s.vehicle(i).lane)].push_back(i);
    by_lane.erase(std::remove_if(by_lane.begin(), by_lane.end(), [](const auto& v) { return v.empty(); }),
                  by_lane.end());
    return by_lane;
}

class Enumerator {
public:
    Enumerator(const Scenario& s, std::uint64_t limit, bool keep)
        : s_(s), lanes_(lanes_of(s)), next_(lanes_.size(), 0), limit_(limit), keep_(keep) {
        order_.reserve(static_cast<std::size_t>(s.size()));
        builders_.reserve(static_cast<std::size_t>(s.size()) + 1);
    }

    EnumerationResult run() {
        result_.best_J = std::numeric_limits<double>::infinity();
        if (keep_) result_.J_samples.emplace();
        builders_.emplace_back(s_);
        recurse();
        result_.best_order = order_from_indices(best_, s_);
        return std::move(result_);
    }

private:
    bool done() const { return limit_ != 0 && result_.orders_evaluated >= limit_; }

    void recurse() {
        if (static_cast<int>(order_.size()) == s_.size()) {
            const double J = builders_.back().delay_sum();
            ++result_.orders_evaluated;
            if (keep_) result_.J_samples->push_back(J);
            if (J < result_.best_J) {
                result_.best_J = J;
                best_ = order_;
            }
            return;
        }
        for (std::size_t l = 0; l < lanes_.size() && !done(); ++l) {
            if (next_[l] == lanes_[l].size()) continue;
            const int v = lanes_[l][next_[l]++];
            builders_.push_back(builders_.back());
            builders_.back().place(v);
            order_.push_back(v);
            recurse();
            order_.pop_back();
            builders_.pop_back();
            --next_[l];
        }
    }

    const Scenario& s_;
    std::vector<std::vector<int>> lanes_;
    std::vector<std::size_t> next_;
    std::uint64_t limit_;
    bool keep_;
    std::vector<int> order_;
    std::vector<int> best_;
    std::vector<ScheduleBuilder> builders_;
    EnumerationResult result_;
};

}  // namespace

EnumerationResult enumerate_optimal(const Scenario& s, std::uint64_t limit, bool keep_samples) {
    if (limit == 0 && s.size() > kMaxFullEnumeration) {
        throw RefusalError("full enumeration refused for N = " + std::to_string(s.size()) + " (max " +
                           std::to_string(kMaxFullEnumeration) + "); pass a limit");
    }
    return Enumerator(s, limit, keep_samples).run();
}

std::uint64_t count_enforceable_orders(const Scenario& s) {
    // Multiply binomials lane by lane: C(n1, n1) * C(n1+n2, n2) * ...
    std::uint64_t total = 1;
    std::uint64_t placed = 0;
    for (const auto& lane : lanes_of(s)) {
        for (std::uint64_t k = 1; k <= lane.size(); ++k) {
            ++placed;
            total = total * placed / k;
        }
    }
    return total;
}

std::vector<int> sample_grouped_order(const Scenario& s, Rng& rng) {
    auto lanes = lanes_of(s);
    // groups[l] = sizes of the contiguous groups cut from lane l
    std::vector<std::vector<int>> groups(lanes.size());
    std::size_t total_groups = 0;
    for (std::size_t l = 0; l < lanes.size(); ++l) {
        int remaining = static_cast<int>(lanes[l].size());
        while (remaining > 0) {
            int size = 1;
            while (size < remaining && rng.bernoulli(0.5)) ++size;
            groups[l].push_back(size);
            remaining -= size;
            ++total_groups;
        }
    }
    std::vector<std::size_t> next_group(lanes.size(), 0);
    std::vector<std::size_t> next_vehicle(lanes.size(), 0);
    std::vector<int> order;
    order.reserve(static_cast<std::size_t>(s.size()));
    for (std::size_t left = total_groups; left > 0; --left) {
        // Picking a lane with probability proportional to its remaining groups gives a
        // uniformly random interleaving of the per-lane group sequences.
        auto pick = rng.below(left);
        std::size_t l = 0;
        for (;; ++l) {
            const auto rem = groups[l].size() - next_group[l];
            if (pick < rem) break;
            pick -= rem;
        }
        const int size = groups[l][next_group[l]++];
        for (int k = 0; k < size; ++k) order.push_back(lanes[l][next_vehicle[l]++]);
    }
    return order;
}

std::vector<double> sample_orders_grouped(const Scenario& s, int count, Rng& rng) {
    if (count < 1) throw ContractViolation("sample_orders_grouped: count must be >= 1");
    std::vector<double> out;
    out.reserve(static_cast<std::size_t>(count));
    for (int k = 0; k < count; ++k) {
        const auto order = sample_grouped_order(s, rng);
        out.push_back(evaluate_indices(order, s));
    }
    return out;
}

}  // namespace passorder
