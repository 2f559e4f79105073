#pragma once

#include <cstdint>
#include <limits>
#include <vector>

#include "passorder/core.hpp"
#include "passorder/rng.hpp"

namespace passorder {

/// A block of consecutive candidate vehicles whose internal order is frozen during search.
struct Group {
    std::vector<VehicleId> members;
    std::vector<int> indices;  // scenario indices, same order as members
    double closeness = 0.0;    // smallest member distance, m
};

constexpr int kDefaultGroupMax = 4;

/// Left-to-right scan of the candidate. A vehicle joins the open group when the group has
/// room and the vehicle either conflicts with no member or directly follows the last
/// member in its lane. Throws ContractViolation for unenforceable candidates.
std::vector<Group> group_candidate(const PassingOrder& candidate, const Scenario& s, int group_max = kDefaultGroupMax);

/// Q_i + lambda * sqrt(ln T / T_i); an unvisited child scores +inf.
double ucb1_score(double q, std::int64_t visits, std::int64_t parent_visits, double lambda);
/// 1 - (J - J_min) / (J_max - J_min), or 1 when the range is empty.
double normalize_q(double J, double J_min, double J_max);
/// gamma * q_partial + (1 - gamma) * q_leaf
double node_value(double q_partial, double q_leaf, double gamma);
/// (J_candidate - J_final) / J_candidate, 0 for a zero candidate.
double improvement_ratio(double J_candidate, double J_final);

struct MctsConfig {
    double lambda = 0.85;
    double gamma = 0.15;
    int group_max = kDefaultGroupMax;
    /// Iteration budget. Negative means "use the wall-clock budget instead".
    std::int64_t iterations = -1;
    double time_budget_s = 0.1;
};

struct SearchNode {
    int parent = -1;
    int group = -1;  // group placed by this node, -1 at the root
    int depth = 0;
    std::vector<char> placed;     // per group
    std::vector<int> untried;     // placeable groups not yet expanded
    std::vector<int> children;    // node ids
    ScheduleBuilder state;
    double partial_J = 0.0;  // delay-sum of the groups placed so far
    double rollout_J = 0.0;  // leaf delay-sum reached by the rollout from this node
    double value_sum = 0.0;
    std::int64_t visits = 0;
    bool exhausted = false;  // every leaf below has been expanded

    double mean_value() const { return visits > 0 ? value_sum / static_cast<double>(visits) : 0.0; }
};

/// Search tree over group sequences. One tree per search; not thread-safe.
class MctsTree {
public:
    MctsTree(const Scenario& s, std::vector<Group> groups, const std::vector<int>& incumbent, const MctsConfig& cfg,
             std::uint64_t seed);

    /// One selection / expansion / rollout / backup pass. Returns false once the whole tree
    /// has been enumerated (nothing left to expand).
    bool iterate();

    bool exhausted() const { return nodes_.front().exhausted; }
    const std::vector<SearchNode>& nodes() const { return nodes_; }
    const std::vector<Group>& groups() const { return groups_; }
    const std::vector<int>& best_indices() const { return best_; }
    double best_J() const { return best_J_; }

private:
    std::vector<int> placeable(const std::vector<char>& placed) const;
    int select();
    int expand(int node);
    double rollout(const SearchNode& from, std::vector<int>& order);
    void backup(int node);
    void mark_exhausted(int node);
    std::vector<int> order_of(int node) const;

    const Scenario* s_;
    std::vector<Group> groups_;
    std::vector<std::vector<int>> prereq_;  // groups that must precede each group
    MctsConfig cfg_;
    Rng rng_;
    std::vector<SearchNode> nodes_;
    std::vector<int> best_;
    double best_J_ = std::numeric_limits<double>::infinity();
};

struct SearchResult {
    PassingOrder order;
    double J = 0.0;            // delay-sum of the returned order
    double candidate_J = 0.0;  // delay-sum of the candidate
    double mu = 0.0;
    std::int64_t iterations = 0;
    std::size_t tree_nodes = 0;
    std::size_t group_count = 0;
    bool exhausted = false;
};

/// Refines an enforceable candidate. The candidate is the initial incumbent, so the result
/// is never worse. A single group or a zero budget returns the candidate untouched.
SearchResult mcts_search(const Scenario& s, const PassingOrder& candidate, const MctsConfig& cfg, std::uint64_t seed);

}  // namespace passorder
