#include <doctest.h>

#include <cmath>

#include "oracles/group_enumeration.hpp"
#include "passorder/baselines.hpp"
#include "passorder/errors.hpp"
#include "passorder/search.hpp"
#include "support.hpp"

using namespace passorder;
using testsupport::default_geometry;
using testsupport::make_vehicle;
using testsupport::random_scenario;

TEST_CASE("ucb1 identities") {
    CHECK(ucb1_score(0.8, 5, 100, 0.0) == 0.8);
    const double direct = 0.8 + 0.85 * std::sqrt(std::log(100.0) / 5.0);
    CHECK(std::abs(ucb1_score(0.8, 5, 100, 0.85) - direct) <= 1e-12);
    CHECK(std::abs(ucb1_score(0.8, 5, 100, 0.85) - 1.6157494) <= 1e-7);
    for (int t = 1; t < 100; ++t) CHECK(ucb1_score(0.3, t + 1, 100, 0.5) < ucb1_score(0.3, t, 100, 0.5));
    CHECK(std::isinf(ucb1_score(0.1, 0, 10, 0.85)));
}

TEST_CASE("normalized value identities") {
    CHECK(normalize_q(3.0, 3.0, 9.0) == 1.0);
    CHECK(normalize_q(9.0, 3.0, 9.0) == 0.0);
    CHECK(std::abs(normalize_q(6.0, 3.0, 9.0) - 0.5) <= 1e-12);
    CHECK(normalize_q(4.0, 4.0, 4.0) == 1.0);
    CHECK_THROWS_AS(normalize_q(4.0, 5.0, 4.0), ContractViolation);

    CHECK(node_value(0.4, 0.8, 0.0) == 0.8);
    CHECK(node_value(0.4, 0.8, 1.0) == 0.4);
    CHECK(std::abs(node_value(0.4, 0.8, 0.15) - 0.74) <= 1e-12);

    CHECK(improvement_ratio(42.0, 42.0) == 0.0);
    CHECK(std::abs(improvement_ratio(100.0, 85.0) - 0.15) <= 1e-12);
    CHECK(improvement_ratio(0.0, 0.0) == 0.0);
    CHECK(improvement_ratio(10.0, 0.0) <= 1.0);
}

TEST_CASE("grouping: conflicting vehicles stay single, opposite right turns pair up") {
    const auto& g = default_geometry();
    // two crossing straights and the northern left turn: every pair shares a cell
    std::vector<Vehicle> vs{make_vehicle(*g, 1, g->lane_id(0, 1), Steering::straight, 10.0),
                            make_vehicle(*g, 2, g->lane_id(1, 1), Steering::straight, 20.0),
                            make_vehicle(*g, 3, g->lane_id(2, 0), Steering::left, 30.0)};
    Scenario s(g, vs);
    for (std::size_t a = 0; a < 3; ++a) {
        for (std::size_t b = a + 1; b < 3; ++b) {
            REQUIRE(g->movements_conflict(s.movement_index(static_cast<int>(a)), s.movement_index(static_cast<int>(b))));
        }
    }
    CHECK(group_candidate(fifo_order(s), s).size() == 3);

    Scenario r(g, {make_vehicle(*g, 1, g->lane_id(0, 2), Steering::right, 10.0),
                   make_vehicle(*g, 2, g->lane_id(2, 2), Steering::right, 20.0)});
    const auto groups = group_candidate(fifo_order(r), r);
    REQUIRE(groups.size() == 1);
    CHECK(groups[0].members == std::vector<VehicleId>{1, 2});
    CHECK(groups[0].closeness == 10.0);

    // same-lane followers join even though they share every cell
    Scenario q(g, {make_vehicle(*g, 1, 1, Steering::straight, 10.0), make_vehicle(*g, 2, 1, Steering::straight, 20.0)});
    CHECK(group_candidate(fifo_order(q), q).size() == 1);
    CHECK(group_candidate(fifo_order(q), q, 1).size() == 2);
    CHECK_THROWS_AS(group_candidate(PassingOrder{{2, 1}}, q), ContractViolation);
}

TEST_CASE("grouping partitions the candidate and obeys the joining rule") {
    Rng rng(31);
    for (int rep = 0; rep < 1000; ++rep) {
        auto s = random_scenario(default_geometry(), 2 + static_cast<int>(rng.below(12)), rng, 6);
        auto p = testsupport::identity(s.size());
        shuffle(p, rng);
        p = repair_indices(p, s);
        const auto cand = order_from_indices(p, s);
        const int gmax = 1 + static_cast<int>(rng.below(5));
        const auto groups = group_candidate(cand, s, gmax);
        std::vector<VehicleId> flat;
        for (const auto& gr : groups) {
            CHECK(static_cast<int>(gr.members.size()) <= gmax);
            CHECK_FALSE(gr.members.empty());
            double closest = 1e300;
            for (std::size_t k = 0; k < gr.indices.size(); ++k) {
                closest = std::min(closest, s.vehicle(gr.indices[k]).distance);
                if (k == 0) continue;
                const int v = gr.indices[k];
                bool free = true;
                for (std::size_t j = 0; j < k; ++j) {
                    free = free && conflicts(s.path(gr.indices[j]), s.path(v)).empty();
                }
                // follower: same lane, and no vehicle of that lane sits between the two
                const int last = gr.indices[k - 1];
                bool follower = s.vehicle(last).lane == s.vehicle(v).lane && last < v;
                for (int u = last + 1; u < v && follower; ++u) follower = s.vehicle(u).lane != s.vehicle(v).lane;
                CHECK((free || follower));
            }
            CHECK(gr.closeness == closest);
            flat.insert(flat.end(), gr.members.begin(), gr.members.end());
        }
        CHECK(flat == cand.sequence);
    }
}

TEST_CASE("zero budget and single group return the candidate") {
    Rng rng(32);
    auto s = random_scenario(default_geometry(), 7, rng);
    const auto f = fifo_order(s);
    MctsConfig cfg;
    cfg.iterations = 0;
    auto r = mcts_search(s, f, cfg, 1);
    CHECK(r.order == f);
    CHECK(r.iterations == 0);
    CHECK(r.mu == 0.0);
    cfg.iterations = -1;
    cfg.time_budget_s = 0.0;
    CHECK(mcts_search(s, f, cfg, 1).order == f);

    const auto& g = default_geometry();
    Scenario one(g, {make_vehicle(*g, 1, g->lane_id(0, 2), Steering::right, 10.0),
                     make_vehicle(*g, 2, g->lane_id(2, 2), Steering::right, 20.0)});
    cfg.iterations = 100;
    r = mcts_search(one, fifo_order(one), cfg, 1);
    CHECK(r.group_count == 1);
    CHECK(r.iterations == 0);
    CHECK(r.order == fifo_order(one));
}

TEST_CASE("exhaustive budget reaches the group-restricted optimum") {
    Rng rng(33);
    for (int rep = 0; rep < 40; ++rep) {
        auto s = random_scenario(default_geometry(), 7, rng, 0, 60.0);
        const auto f = fifo_order(s);
        MctsConfig cfg;
        cfg.iterations = 1000000;
        const auto groups = group_candidate(f, s, cfg.group_max);
        const auto ref = oracle::enumerate_group_sequences(s, groups);
        const auto r = mcts_search(s, f, cfg, static_cast<std::uint64_t>(rep));
        if (groups.size() > 1) CHECK(r.exhausted);
        CHECK(std::abs(r.J - ref.best_J) <= 1e-9);
        CHECK(r.J <= r.candidate_J);
        CHECK(is_enforceable(r.order, s));
    }
}

TEST_CASE("singleton groups with unlimited budget find the global optimum") {
    Rng rng(34);
    for (int rep = 0; rep < 30; ++rep) {
        auto s = random_scenario(default_geometry(), 2 + rep % 5, rng, 0, 60.0, rep % 2 == 0);
        MctsConfig cfg;
        cfg.group_max = 1;
        cfg.iterations = 1000000;
        const auto r = mcts_search(s, fifo_order(s), cfg, 7);
        CHECK(std::abs(r.J - enumerate_optimal(s).best_J) <= 1e-9);
    }
}

TEST_CASE("visit counts are conserved and every leaf is enforceable") {
    Rng rng(35);
    for (int rep = 0; rep < 20; ++rep) {
        auto s = random_scenario(default_geometry(), 10, rng, 0, 80.0);
        const auto f = fifo_order(s);
        MctsConfig cfg;
        auto groups = group_candidate(f, s, cfg.group_max);
        MctsTree tree(s, groups, order_indices(f, s), cfg, 9);
        for (int k = 0; k < 300 && tree.iterate(); ++k) {
        }
        const auto& nodes = tree.nodes();
        for (std::size_t n = 0; n < nodes.size(); ++n) {
            std::int64_t sum = 0;
            for (int c : nodes[n].children) sum += nodes[static_cast<std::size_t>(c)].visits;
            CHECK(nodes[n].visits == sum + (n == 0 ? 0 : 1));
            CHECK(nodes[n].mean_value() >= 0.0);
            CHECK(nodes[n].mean_value() <= 1.0);
        }
        CHECK(is_enforceable_indices(tree.best_indices(), s));
        CHECK(static_cast<int>(tree.best_indices().size()) == s.size());
    }
}

TEST_CASE("improvement ratio is never negative") {
    Rng rng(36);
    for (int rep = 0; rep < 1000; ++rep) {
        auto s = random_scenario(default_geometry(), 3 + static_cast<int>(rng.below(10)), rng, 0, 120.0, rep % 3 == 0);
        auto p = testsupport::identity(s.size());
        shuffle(p, rng);
        const auto cand = order_from_indices(repair_indices(p, s), s);
        MctsConfig cfg;
        cfg.iterations = static_cast<std::int64_t>(rng.below(60));
        const auto r = mcts_search(s, cand, cfg, rng.next_u64());
        CHECK(r.mu >= 0.0);
        CHECK(r.J <= r.candidate_J);
    }
}

TEST_CASE("search is seed deterministic") {
    Rng rng(37);
    auto s = random_scenario(default_geometry(), 12, rng, 0, 100.0);
    MctsConfig cfg;
    cfg.iterations = 200;
    const auto a = mcts_search(s, fifo_order(s), cfg, 5);
    const auto b = mcts_search(s, fifo_order(s), cfg, 5);
    CHECK(a.order == b.order);
    CHECK(a.J == b.J);
    CHECK(a.tree_nodes == b.tree_nodes);
}
