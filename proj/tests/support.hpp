#pragma once

#include <algorithm>
#include <vector>

#include "passorder/core.hpp"
#include "passorder/rng.hpp"

namespace testsupport {

using namespace passorder;

inline const GeometryPtr& default_geometry() {
    static const GeometryPtr g = build_geometry(GeometryConfig{});
    return g;
}

inline Vehicle make_vehicle(const IntersectionGeometry& g, VehicleId id, LaneId lane, Steering s, double distance,
                            double speed = -1.0) {
    Vehicle v;
    v.id = id;
    v.lane = lane;
    v.steering = s;
    v.exit_lane = g.movement(lane, s).exit_lane;
    v.distance = distance;
    v.speed = speed < 0.0 ? g.timing().v_max : speed;
    return v;
}

/// Random vehicles on random lanes, each with one of its lane's steerings. `lanes` limits the
/// lanes used (0 = all). Distances are continuous in [0, max_distance].
inline Scenario random_scenario(GeometryPtr g, int n, Rng& rng, int lanes = 0, double max_distance = 150.0,
                                bool random_rightofway = false) {
    std::vector<LaneId> pool;
    for (const auto& l : g->entry_lanes()) pool.push_back(l.id);
    shuffle(pool, rng);
    if (lanes > 0 && lanes < static_cast<int>(pool.size())) pool.resize(static_cast<std::size_t>(lanes));
    std::vector<Vehicle> vs;
    for (int k = 0; k < n; ++k) {
        const LaneId lane = pool[rng.below(pool.size())];
        const auto& st = g->lane(lane).steerings;
        const Steering s = st[rng.below(st.size())];
        vs.push_back(make_vehicle(*g, 100 + 7 * k, lane, s, rng.uniform(0.0, max_distance),
                                  rng.uniform(0.0, g->timing().v_max)));
    }
    std::vector<double> z;
    std::vector<double> ready;
    if (random_rightofway) {
        for (int k = 0; k < g->subzone_count(); ++k) z.push_back(rng.bernoulli(0.3) ? rng.uniform(0.0, 4.0) : 0.0);
        for (int k = 0; k < g->entry_lane_count(); ++k) ready.push_back(rng.bernoulli(0.3) ? rng.uniform(0.0, 3.0) : 0.0);
    }
    return Scenario(std::move(g), std::move(vs), std::move(z), std::move(ready));
}

inline std::vector<int> identity(int n) {
    std::vector<int> p(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) p[static_cast<std::size_t>(i)] = i;
    return p;
}

}  // namespace testsupport
