#include <doctest.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include "oracles/crossing_oracle.hpp"
#include "passorder/errors.hpp"
#include "support.hpp"

using namespace passorder;
using testsupport::default_geometry;
using testsupport::make_vehicle;
using testsupport::random_scenario;

TEST_CASE("single unimpeded vehicle") {
    const auto& g = default_geometry();
    Scenario s(g, {make_vehicle(*g, 1, 1, Steering::straight, 150.0)});
    const auto sch = build_schedule(PassingOrder{{1}}, s);
    CHECK(sch.entry_time[0] == 10.0);
    CHECK(sch.delay[0] == 0.0);
    CHECK(evaluate_objective(PassingOrder{{1}}, s) == 0.0);
    CHECK(is_enforceable(PassingOrder{{1}}, s));
}

TEST_CASE("opposite right turns never delay each other") {
    const auto& g = default_geometry();
    Scenario s(g, {make_vehicle(*g, 1, g->lane_id(0, 2), Steering::right, 30.0),
                   make_vehicle(*g, 2, g->lane_id(2, 2), Steering::right, 30.0)});
    for (auto o : {PassingOrder{{1, 2}}, PassingOrder{{2, 1}}}) {
        const auto sch = build_schedule(o, s);
        CHECK(sch.delay[0] == 0.0);
        CHECK(sch.delay[1] == 0.0);
    }
}

TEST_CASE("same-lane pair: lane order and penalty") {
    const auto& g = default_geometry();
    Scenario s(g, {make_vehicle(*g, 10, 1, Steering::straight, 50.0), make_vehicle(*g, 20, 1, Steering::straight, 80.0)});
    CHECK(is_enforceable(PassingOrder{{10, 20}}, s));
    CHECK_FALSE(is_enforceable(PassingOrder{{20, 10}}, s));
    // 2 s apart at free flow, more than the headway: the repaired order has no delay
    CHECK(evaluate_objective(PassingOrder{{10, 20}}, s) == 0.0);
    CHECK(evaluate_objective(PassingOrder{{20, 10}}, s) == 1000.0);
    CHECK(repair_order(PassingOrder{{20, 10}}, s) == PassingOrder{{10, 20}});
    CHECK_THROWS_AS(build_schedule(PassingOrder{{20, 10}}, s), ContractViolation);
}

TEST_CASE("orders must be permutations") {
    const auto& g = default_geometry();
    Scenario s(g, {make_vehicle(*g, 1, 1, Steering::straight, 50.0), make_vehicle(*g, 2, 4, Steering::straight, 80.0)});
    CHECK_THROWS_AS(is_enforceable(PassingOrder{{1, 1}}, s), ContractViolation);
    CHECK_THROWS_AS(is_enforceable(PassingOrder{{1}}, s), ContractViolation);
    CHECK_THROWS_AS(evaluate_objective(PassingOrder{{1, 3}}, s), ContractViolation);
}

TEST_CASE("lane headway and a crossing conflict, by hand") {
    const auto& g = default_geometry();
    // two straights in one lane at the same distance: headway 1.5 s
    Scenario a(g, {make_vehicle(*g, 1, 1, Steering::straight, 30.0), make_vehicle(*g, 2, 1, Steering::straight, 30.0)});
    auto sch = build_schedule(PassingOrder{{1, 2}}, a);
    CHECK(sch.entry_time[1] == doctest::Approx(3.5).epsilon(1e-15));
    CHECK(sch.delay_sum() == doctest::Approx(1.5).epsilon(1e-15));
    // opposing straights from north (lane 2 index 1) and east share a cell
    const auto& ns = g->movement(g->lane_id(0, 1), Steering::straight);
    const auto& ew = g->movement(g->lane_id(1, 1), Steering::straight);
    const auto shared = conflicts(ns.path, ew.path);
    REQUIRE(shared.size() == 1);
    Scenario b(g, {make_vehicle(*g, 1, g->lane_id(0, 1), Steering::straight, 30.0),
                   make_vehicle(*g, 2, g->lane_id(1, 1), Steering::straight, 30.0)});
    const auto sb = build_schedule(PassingOrder{{1, 2}}, b);
    const auto k1 = std::find(ns.path.subzones.begin(), ns.path.subzones.end(), shared[0]) - ns.path.subzones.begin();
    const auto k2 = std::find(ew.path.subzones.begin(), ew.path.subzones.end(), shared[0]) - ew.path.subzones.begin();
    const double expect = std::max(2.0, 2.0 + 0.5 * static_cast<double>(k1) + 1.0 - 0.5 * static_cast<double>(k2));
    CHECK(sb.entry_time[1] == doctest::Approx(expect).epsilon(1e-15));
}

TEST_CASE("enforceability agrees with the pairwise definition") {
    Rng rng(11);
    for (int rep = 0; rep < 50; ++rep) {
        auto s = random_scenario(default_geometry(), 8, rng, 3);
        auto p = testsupport::identity(8);
        for (int k = 0; k < 40; ++k) {
            shuffle(p, rng);
            CHECK(is_enforceable_indices(p, s) == oracle::pairwise_enforceable(s, p));
            const auto fixed = repair_indices(p, s);
            CHECK(fixed == oracle::refill_lanes(s, p));
            CHECK(is_enforceable_indices(fixed, s));
        }
    }
}

TEST_CASE("repair is the identity on enforceable orders") {
    Rng rng(12);
    for (int rep = 0; rep < 100; ++rep) {
        auto s = random_scenario(default_geometry(), 7, rng, 4);
        auto fifo = testsupport::identity(7);
        CHECK(repair_indices(fifo, s) == fifo);
    }
}

TEST_CASE("schedule matches the crossing oracle on every order of 6-vehicle scenarios") {
    Rng rng(13);
    for (int rep = 0; rep < 10; ++rep) {
        auto s = random_scenario(default_geometry(), 6, rng, rep % 2 ? 4 : 0, 80.0, rep % 3 == 0);
        auto p = testsupport::identity(6);
        do {
            if (!is_enforceable_indices(p, s)) continue;
            const auto sch = build_schedule_indices(p, s);
            const auto ref = oracle::simulate_crossing(s, p);
            for (int i = 0; i < 6; ++i) {
                CHECK(std::abs(sch.entry_time[static_cast<std::size_t>(i)] - ref.entry[static_cast<std::size_t>(i)]) < 1e-9);
                CHECK(sch.delay[static_cast<std::size_t>(i)] >= 0.0);
            }
            CHECK(std::abs(evaluate_indices(p, s) - oracle::oracle_objective(s, p)) < 1e-9);
        } while (std::next_permutation(p.begin(), p.end()));
    }
}

TEST_CASE("objective matches the oracle on all permutations, penalty included") {
    Rng rng(14);
    for (int rep = 0; rep < 20; ++rep) {
        const int n = 2 + rep % 5;
        auto s = random_scenario(default_geometry(), n, rng, 3, 60.0, rep % 2 == 0);
        auto p = testsupport::identity(n);
        do {
            CHECK(std::abs(evaluate_indices(p, s) - oracle::oracle_objective(s, p)) < 1e-9);
        } while (std::next_permutation(p.begin(), p.end()));
    }
}

TEST_CASE("8 vehicles: exhaustive minimum and argmin set agree with the oracle") {
    Rng rng(15);
    auto s = random_scenario(default_geometry(), 8, rng, 0, 50.0);
    auto p = testsupport::identity(8);
    double best = 1e300, best_ref = 1e300;
    std::vector<std::vector<int>> argmin, argmin_ref;
    do {
        const double J = evaluate_indices(p, s);
        const double R = oracle::oracle_objective(s, p);
        if (J < best - 1e-9) {
            best = J;
            argmin.clear();
        }
        if (std::abs(J - best) <= 1e-9) argmin.push_back(p);
        if (R < best_ref - 1e-9) {
            best_ref = R;
            argmin_ref.clear();
        }
        if (std::abs(R - best_ref) <= 1e-9) argmin_ref.push_back(p);
    } while (std::next_permutation(p.begin(), p.end()));
    CHECK(std::abs(best - best_ref) < 1e-9);
    CHECK(argmin == argmin_ref);
    CHECK(best > 0.0);
}

TEST_CASE("J is non-negative and invariant under relabeling") {
    Rng rng(16);
    for (int rep = 0; rep < 100; ++rep) {
        auto s = random_scenario(default_geometry(), 7, rng, 0, 100.0, true);
        auto p = testsupport::identity(7);
        shuffle(p, rng);
        p = repair_indices(p, s);
        const double J = evaluate_indices(p, s);
        CHECK(J >= 0.0);

        std::vector<Vehicle> relabeled = s.vehicles();
        for (auto& v : relabeled) v.id = 5000 - 3 * v.id;
        Scenario r(s.geometry_ptr(), relabeled, s.rightofway(), s.lane_ready());
        PassingOrder o = order_from_indices(p, s);
        for (auto& id : o.sequence) id = 5000 - 3 * id;
        CHECK(evaluate_objective(o, r) == J);
    }
}

TEST_CASE("raising a right-of-way entry never lowers J") {
    Rng rng(17);
    for (int rep = 0; rep < 200; ++rep) {
        auto s = random_scenario(default_geometry(), 6, rng, 0, 60.0, true);
        auto p = testsupport::identity(6);
        shuffle(p, rng);
        const double J = evaluate_indices(p, s);
        auto z = s.rightofway();
        z[rng.below(z.size())] += rng.uniform(0.0, 5.0);
        Scenario t(s.geometry_ptr(), s.vehicles(), z, s.lane_ready());
        CHECK(evaluate_indices(p, t) >= J);
        // updated right of way never drops below the input
        const auto sch = build_schedule_indices(repair_indices(p, s), s);
        for (std::size_t k = 0; k < z.size(); ++k) CHECK(sch.updated_rightofway[k] >= s.rightofway()[k]);
    }
}

TEST_CASE("evaluation time grows about linearly in N") {
    Rng rng(18);
    std::vector<double> logn, logt;
    for (int n : {10, 20, 40, 80, 160}) {
        auto s = random_scenario(default_geometry(), n, rng, 0, 300.0);
        const auto p = testsupport::identity(n);
        double sink = 0.0;
        const int reps = 400000 / n;
        double best = 1e300;
        for (int trial = 0; trial < 5; ++trial) {
            const auto t0 = std::chrono::steady_clock::now();
            for (int r = 0; r < reps; ++r) sink += evaluate_indices(p, s);
            const double dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() / reps;
            best = std::min(best, dt);
        }
        CHECK(sink >= 0.0);
        logn.push_back(std::log(n));
        logt.push_back(std::log(best));
    }
    const double mx = std::accumulate(logn.begin(), logn.end(), 0.0) / 5.0;
    const double my = std::accumulate(logt.begin(), logt.end(), 0.0) / 5.0;
    double sxy = 0.0, sxx = 0.0;
    for (int k = 0; k < 5; ++k) {
        sxy += (logn[static_cast<std::size_t>(k)] - mx) * (logt[static_cast<std::size_t>(k)] - my);
        sxx += (logn[static_cast<std::size_t>(k)] - mx) * (logn[static_cast<std::size_t>(k)] - mx);
    }
    const double slope = sxy / sxx;
    MESSAGE("log-log slope " << slope);
    CHECK(slope <= 1.2);
}

TEST_CASE("pointer and critic encodings") {
    const auto& g = default_geometry();
    Scenario s(g, {make_vehicle(*g, 1, 3, g->lane(3).steerings[0], 150.0)});
    const auto x = encode_pointer_input(s);
    REQUIRE(x.rows() == 27);
    CHECK(x(0, 0) == 1.0);
    CHECK(x(1, 0) == 0.5);
    CHECK(x(2, 0) == static_cast<double>(static_cast<int>(g->lane(3).steerings[0])));
    for (int k = 0; k < 12; ++k) CHECK(x(3 + k, 0) == (k == 3 ? 1.0 : 0.0));
    CHECK(x.block(15, 0, 12, 1).sum() == 1.0);

    const auto c = encode_critic_input(s);
    CHECK(c.rows() == 63);
    CHECK(c.bottomRows(36).isZero());
    CHECK(c.topRows(27) == x);

    Rng rng(19);
    for (int rep = 0; rep < 1000; ++rep) {
        auto r = random_scenario(g, 1 + static_cast<int>(rng.below(10)), rng, 0, 300.0, true);
        const auto xr = encode_pointer_input(r);
        const auto cr = encode_critic_input(r);
        CHECK(xr.rows() == 27);
        CHECK(cr.rows() == 63);
        CHECK(cr.topRows(27) == xr);
        for (int z = 0; z < 36; ++z) CHECK(cr(27 + z, 0) == r.rightofway()[static_cast<std::size_t>(z)] / 60.0);
        // ascending distance contract
        for (int i = 1; i < r.size(); ++i) CHECK(xr(1, i) >= xr(1, i - 1));
    }
    CHECK(critic_feature_width(*build_geometry(GeometryConfig::asymmetric_desk())) == 69);
}

TEST_CASE("scenario json round trip is exact") {
    Rng rng(20);
    for (int rep = 0; rep < 50; ++rep) {
        auto s = random_scenario(default_geometry(), 9, rng, 0, 300.0, true);
        const auto back = scenario_from_json(nlohmann::json::parse(scenario_to_json(s).dump()));
        CHECK(back == s);
        CHECK(back.rightofway() == s.rightofway());
    }
}

TEST_CASE("invalid scenarios are rejected") {
    const auto& g = default_geometry();
    auto v = make_vehicle(*g, 1, 0, Steering::left, 50.0);
    v.distance = 400.0;
    CHECK_THROWS_AS(Scenario(g, {v}), ConfigError);
    auto w = make_vehicle(*g, 1, 0, Steering::left, 50.0);
    w.steering = Steering::right;
    CHECK_THROWS_AS(Scenario(g, {w}), ConfigError);
    auto a = make_vehicle(*g, 1, 0, Steering::left, 50.0);
    CHECK_THROWS_AS(Scenario(g, {a, a}), ConfigError);
    CHECK_THROWS_AS(Scenario(g, {a}, std::vector<double>(35, 0.0)), ConfigError);
}
