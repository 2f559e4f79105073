#include "passorder/search.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "passorder/errors.hpp"

namespace passorder {

namespace {

// rank[i] = position of vehicle i inside its lane, front first.
std::vector<int> lane_ranks(const Scenario& s) {
    std::vector<int> seen(static_cast<std::size_t>(s.geometry().entry_lane_count()), 0);
    std::vector<int> rank(static_cast<std::size_t>(s.size()));
    for (int i = 0; i < s.size(); ++i) rank[static_cast<std::size_t>(i)] = seen[static_cast<std::size_t>(s.vehicle(i).lane)]++;
    return rank;
}

}  // namespace

std::vector<Group> group_candidate(const PassingOrder& candidate, const Scenario& s, int group_max) {
    if (group_max < 1) throw ContractViolation("group_candidate: group_max must be >= 1");
    const std::vector<int> order = order_indices(candidate, s);
    if (!is_enforceable_indices(order, s)) throw ContractViolation("group_candidate: candidate is not enforceable");
    const auto rank = lane_ranks(s);
    const auto& geo = s.geometry();

    std::vector<Group> groups;
    for (int v : order) {
        bool join = false;
        if (!groups.empty() && static_cast<int>(groups.back().indices.size()) < group_max) {
            const auto& members = groups.back().indices;
            const int last = members.back();
            const bool follower = s.vehicle(last).lane == s.vehicle(v).lane &&
                                  rank[static_cast<std::size_t>(last)] + 1 == rank[static_cast<std::size_t>(v)];
            const bool free = std::none_of(members.begin(), members.end(), [&](int m) {
                return geo.movements_conflict(s.movement_index(m), s.movement_index(v));
            });
            join = follower || free;
        }
        if (!join) groups.emplace_back();
        Group& g = groups.back();
        g.closeness = g.indices.empty() ? s.vehicle(v).distance : std::min(g.closeness, s.vehicle(v).distance);
        g.indices.push_back(v);
        g.members.push_back(s.vehicle(v).id);
    }
    return groups;
}

double ucb1_score(double q, std::int64_t visits, std::int64_t parent_visits, double lambda) {
    if (visits <= 0) return std::numeric_limits<double>::infinity();
    return q + lambda * std::sqrt(std::log(static_cast<double>(parent_visits)) / static_cast<double>(visits));
}

double normalize_q(double J, double J_min, double J_max) {
    if (J_max < J_min) throw ContractViolation("normalize_q: J_max < J_min");
    if (J_max == J_min) return 1.0;
    return 1.0 - (J - J_min) / (J_max - J_min);
}

double node_value(double q_partial, double q_leaf, double gamma) { return gamma * q_partial + (1.0 - gamma) * q_leaf; }

double improvement_ratio(double J_candidate, double J_final) {
    if (J_candidate == 0.0) return 0.0;
    return (J_candidate - J_final) / J_candidate;
}

MctsTree::MctsTree(const Scenario& s, std::vector<Group> groups, const std::vector<int>& incumbent,
                   const MctsConfig& cfg, std::uint64_t seed)
    : s_(&s), groups_(std::move(groups)), cfg_(cfg), rng_(seed) {
    // A group depends on the groups holding the lane predecessors of its members.
    std::vector<int> group_of(static_cast<std::size_t>(s.size()), -1);
    for (std::size_t g = 0; g < groups_.size(); ++g) {
        for (int v : groups_[g].indices) group_of[static_cast<std::size_t>(v)] = static_cast<int>(g);
    }
    std::vector<int> lane_prev(static_cast<std::size_t>(s.size()), -1);
    std::vector<int> last_in_lane(static_cast<std::size_t>(s.geometry().entry_lane_count()), -1);
    for (int i = 0; i < s.size(); ++i) {
        auto& last = last_in_lane[static_cast<std::size_t>(s.vehicle(i).lane)];
        lane_prev[static_cast<std::size_t>(i)] = last;
        last = i;
    }
    prereq_.resize(groups_.size());
    for (std::size_t g = 0; g < groups_.size(); ++g) {
        for (int v : groups_[g].indices) {
            const int p = lane_prev[static_cast<std::size_t>(v)];
            if (p < 0) continue;
            const int pg = group_of[static_cast<std::size_t>(p)];
            if (pg < 0) throw ContractViolation("MctsTree: groups do not cover the scenario");
            if (pg != static_cast<int>(g)) prereq_[g].push_back(pg);
        }
    }

    best_ = incumbent;
    best_J_ = build_schedule_indices(incumbent, s).delay_sum();

    SearchNode root{.parent = -1,
                    .group = -1,
                    .depth = 0,
                    .placed = std::vector<char>(groups_.size(), 0),
                    .untried = {},
                    .children = {},
                    .state = ScheduleBuilder(s)};
    root.untried = placeable(root.placed);
    root.exhausted = groups_.empty();
    nodes_.push_back(std::move(root));
}

std::vector<int> MctsTree::placeable(const std::vector<char>& placed) const {
    std::vector<int> out;
    for (std::size_t g = 0; g < groups_.size(); ++g) {
        if (placed[g]) continue;
        const auto& pre = prereq_[g];
        if (std::all_of(pre.begin(), pre.end(), [&](int p) { return placed[static_cast<std::size_t>(p)] != 0; })) {
            out.push_back(static_cast<int>(g));
        }
    }
    return out;
}

int MctsTree::select() {
    int node = 0;
    while (nodes_[static_cast<std::size_t>(node)].untried.empty()) {
        const SearchNode& n = nodes_[static_cast<std::size_t>(node)];
        int pick = -1;
        double best = -std::numeric_limits<double>::infinity();
        for (int c : n.children) {
            const SearchNode& child = nodes_[static_cast<std::size_t>(c)];
            if (child.exhausted) continue;
            const double score = ucb1_score(child.mean_value(), child.visits, n.visits, cfg_.lambda);
            if (pick < 0 || score > best) {
                best = score;
                pick = c;
            }
        }
        if (pick < 0) throw ContractViolation("MctsTree: selection reached an exhausted subtree");
        node = pick;
    }
    return node;
}

int MctsTree::expand(int node) {
    auto& untried = nodes_[static_cast<std::size_t>(node)].untried;
    const auto k = static_cast<std::size_t>(rng_.below(untried.size()));
    const int g = untried[k];
    untried.erase(untried.begin() + static_cast<std::ptrdiff_t>(k));

    const SearchNode& parent = nodes_[static_cast<std::size_t>(node)];
    SearchNode child{.parent = node,
                     .group = g,
                     .depth = parent.depth + 1,
                     .placed = parent.placed,
                     .untried = {},
                     .children = {},
                     .state = parent.state};
    child.placed[static_cast<std::size_t>(g)] = 1;
    for (int v : groups_[static_cast<std::size_t>(g)].indices) child.state.place(v);
    child.partial_J = child.state.delay_sum();
    child.untried = placeable(child.placed);
    const int id = static_cast<int>(nodes_.size());
    nodes_.push_back(std::move(child));
    nodes_[static_cast<std::size_t>(node)].children.push_back(id);
    return id;
}

double MctsTree::rollout(const SearchNode& from, std::vector<int>& order) {
    ScheduleBuilder state = from.state;
    std::vector<char> placed = from.placed;
    for (;;) {
        const std::vector<int> candidates = placeable(placed);
        if (candidates.empty()) break;
        // Nearest group first; equal closeness is broken at random.
        double nearest = std::numeric_limits<double>::infinity();
        for (int g : candidates) nearest = std::min(nearest, groups_[static_cast<std::size_t>(g)].closeness);
        std::vector<int> ties;
        for (int g : candidates) {
            if (groups_[static_cast<std::size_t>(g)].closeness == nearest) ties.push_back(g);
        }
        const int g = ties.size() == 1 ? ties.front() : ties[static_cast<std::size_t>(rng_.below(ties.size()))];
        placed[static_cast<std::size_t>(g)] = 1;
        for (int v : groups_[static_cast<std::size_t>(g)].indices) {
            state.place(v);
            order.push_back(v);
        }
    }
    return state.delay_sum();
}

std::vector<int> MctsTree::order_of(int node) const {
    std::vector<int> chain;
    for (int n = node; n > 0; n = nodes_[static_cast<std::size_t>(n)].parent) chain.push_back(n);
    std::vector<int> order;
    order.reserve(static_cast<std::size_t>(s_->size()));
    for (auto it = chain.rbegin(); it != chain.rend(); ++it) {
        const auto& g = groups_[static_cast<std::size_t>(nodes_[static_cast<std::size_t>(*it)].group)];
        order.insert(order.end(), g.indices.begin(), g.indices.end());
    }
    return order;
}

void MctsTree::backup(int node) {
    const SearchNode& n = nodes_[static_cast<std::size_t>(node)];
    const SearchNode& parent = nodes_[static_cast<std::size_t>(n.parent)];
    // Both terms are normalized against the expanded siblings (including this node).
    double pmin = n.partial_J, pmax = n.partial_J, lmin = n.rollout_J, lmax = n.rollout_J;
    for (int c : parent.children) {
        const SearchNode& sib = nodes_[static_cast<std::size_t>(c)];
        pmin = std::min(pmin, sib.partial_J);
        pmax = std::max(pmax, sib.partial_J);
        lmin = std::min(lmin, sib.rollout_J);
        lmax = std::max(lmax, sib.rollout_J);
    }
    const double value =
        node_value(normalize_q(n.partial_J, pmin, pmax), normalize_q(n.rollout_J, lmin, lmax), cfg_.gamma);
    for (int m = node; m >= 0; m = nodes_[static_cast<std::size_t>(m)].parent) {
        nodes_[static_cast<std::size_t>(m)].value_sum += value;
        ++nodes_[static_cast<std::size_t>(m)].visits;
    }
}

void MctsTree::mark_exhausted(int node) {
    for (int m = node; m >= 0; m = nodes_[static_cast<std::size_t>(m)].parent) {
        SearchNode& n = nodes_[static_cast<std::size_t>(m)];
        if (!n.untried.empty()) return;
        for (int c : n.children) {
            if (!nodes_[static_cast<std::size_t>(c)].exhausted) return;
        }
        n.exhausted = true;
    }
}

bool MctsTree::iterate() {
    if (exhausted()) return false;
    const int leaf = expand(select());
    std::vector<int> order = order_of(leaf);
    const double J = rollout(nodes_[static_cast<std::size_t>(leaf)], order);
    nodes_[static_cast<std::size_t>(leaf)].rollout_J = J;
    if (J < best_J_) {
        best_J_ = J;
        best_ = std::move(order);
    }
    backup(leaf);
    mark_exhausted(leaf);
    return true;
}

SearchResult mcts_search(const Scenario& s, const PassingOrder& candidate, const MctsConfig& cfg, std::uint64_t seed) {
    std::vector<Group> groups = group_candidate(candidate, s, cfg.group_max);
    const std::vector<int> incumbent = order_indices(candidate, s);
    SearchResult r;
    r.group_count = groups.size();
    r.candidate_J = build_schedule_indices(incumbent, s).delay_sum();
    r.order = candidate;
    r.J = r.candidate_J;

    const bool by_iterations = cfg.iterations >= 0;
    const bool zero_budget = by_iterations ? cfg.iterations == 0 : !(cfg.time_budget_s > 0.0);
    if (groups.size() > 1 && !zero_budget) {
        MctsTree tree(s, std::move(groups), incumbent, cfg, seed);
        const auto start = std::chrono::steady_clock::now();
        const auto limit = std::chrono::duration<double>(cfg.time_budget_s);
        while (by_iterations ? r.iterations < cfg.iterations : std::chrono::steady_clock::now() - start < limit) {
            if (!tree.iterate()) break;
            ++r.iterations;
        }
        r.exhausted = tree.exhausted();
        r.tree_nodes = tree.nodes().size();
        if (tree.best_J() < r.J) {
            r.J = tree.best_J();
            r.order = order_from_indices(tree.best_indices(), s);
        }
    }
    r.mu = improvement_ratio(r.candidate_J, r.J);
    return r;
}

}  // namespace passorder
