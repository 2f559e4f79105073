#pragma once

// Reference crossing model used to check the schedule recurrence.
//
// Vehicles drive at v_max to the conflict area and cross it at constant speed, one cell per
// tau; a cell stays blocked for the clearance time after a vehicle leaves it. Cells are handed
// out in passing order, so each vehicle takes the earliest moment at which none of its cell
// visits overlaps an occupancy interval already booked by an earlier vehicle, and at which it
// keeps the headway to every earlier vehicle of its lane. The earliest moment is searched over
// the finite set of event times (free flow, the end of every booked interval shifted to the
// vehicle's own offset, headway expiries).

#include <algorithm>
#include <cmath>
#include <utility>
#include <span>
#include <stdexcept>
#include <vector>

#include "passorder/core.hpp"

namespace oracle {

struct CrossingResult {
    std::vector<double> entry;  // by scenario index
    double delay_sum = 0.0;
};

inline CrossingResult simulate_crossing(const passorder::Scenario& s, std::span<const int> order) {
    using namespace passorder;
    const auto& g = s.geometry();
    const auto& t = g.timing();
    const int n = s.size();
    constexpr double slack = 1e-9;

    auto cells = [&](int i) -> const std::vector<SubzoneId>& {
        return g.movement(s.vehicle(i).lane, s.vehicle(i).steering).path.subzones;
    };

    struct Booking {
        SubzoneId cell;
        double until;  // vacated plus clearance
    };
    std::vector<Booking> booked;
    for (int z = 0; z < g.subzone_count(); ++z) {
        const double z0 = s.rightofway()[static_cast<std::size_t>(z)];
        if (z0 > 0.0) booked.push_back({z, z0});
    }
    std::vector<std::pair<LaneId, double>> lane_entries;
    for (const auto& l : g.entry_lanes()) {
        const double r0 = s.lane_ready()[static_cast<std::size_t>(l.id)];
        if (r0 > 0.0) lane_entries.emplace_back(l.id, r0 - t.h_follow);
    }

    std::vector<double> entry(static_cast<std::size_t>(n), 0.0);
    for (int i : order) {
        const Vehicle& v = s.vehicle(i);
        const auto& path = cells(i);
        const double ff = v.distance / t.v_max;
        // bookings that touch this path, keyed by the visit offset
        std::vector<std::pair<double, double>> relevant;  // (offset, until)
        for (const auto& b : booked) {
            for (std::size_t k = 0; k < path.size(); ++k) {
                if (path[k] == b.cell) relevant.emplace_back(static_cast<double>(k) * t.tau, b.until);
            }
        }
        std::vector<double> candidates{ff};
        for (const auto& [off, until] : relevant) candidates.push_back(until - off);
        for (const auto& [lane, when] : lane_entries) {
            if (lane == v.lane) candidates.push_back(when + t.h_follow);
        }
        std::sort(candidates.begin(), candidates.end());
        auto feasible = [&](double at) {
            if (at + slack < ff) return false;
            for (const auto& [lane, when] : lane_entries) {
                if (lane == v.lane && at + slack < when + t.h_follow) return false;
            }
            // booked earlier, so each visit has to come after the booking
            for (const auto& [off, until] : relevant) {
                if (at + off + slack < until) return false;
            }
            return true;
        };
        // Feasibility only grows with time, so the first feasible event time can be bisected.
        auto it = std::partition_point(candidates.begin(), candidates.end(), [&](double at) { return !feasible(at); });
        if (it == candidates.end()) throw std::logic_error("crossing oracle found no feasible entry");
        const double at = *it;
        entry[static_cast<std::size_t>(i)] = at;
        for (std::size_t k = 0; k < path.size(); ++k) {
            const double arrive = at + static_cast<double>(k) * t.tau;
            booked.push_back({path[k], arrive + t.tau + t.g_safe});
        }
        lane_entries.emplace_back(v.lane, at);
    }

    CrossingResult r;
    r.entry = entry;
    for (int i = 0; i < n; ++i) r.delay_sum += entry[static_cast<std::size_t>(i)] - s.vehicle(i).distance / t.v_max;
    return r;
}

/// Lane order check straight from the definition: every same-lane pair keeps its physical order.
inline bool pairwise_enforceable(const passorder::Scenario& s, std::span<const int> order) {
    for (std::size_t a = 0; a < order.size(); ++a) {
        for (std::size_t b = a + 1; b < order.size(); ++b) {
            const auto& va = s.vehicle(order[a]);
            const auto& vb = s.vehicle(order[b]);
            if (va.lane != vb.lane) continue;
            const bool b_ahead = vb.distance < va.distance || (vb.distance == va.distance && vb.id < va.id);
            if (b_ahead) return false;
        }
    }
    return true;
}

/// Stable lane repair: a lane's slots in the order are refilled with that lane's vehicles front to back.
inline std::vector<int> refill_lanes(const passorder::Scenario& s, std::span<const int> order) {
    std::vector<int> out(order.begin(), order.end());
    for (const auto& lane : s.geometry().entry_lanes()) {
        std::vector<std::size_t> slots;
        std::vector<int> members;
        for (std::size_t k = 0; k < order.size(); ++k) {
            if (s.vehicle(order[k]).lane == lane.id) {
                slots.push_back(k);
                members.push_back(order[k]);
            }
        }
        std::sort(members.begin(), members.end(), [&](int a, int b) {
            const auto& va = s.vehicle(a);
            const auto& vb = s.vehicle(b);
            return va.distance != vb.distance ? va.distance < vb.distance : va.id < vb.id;
        });
        for (std::size_t k = 0; k < slots.size(); ++k) out[slots[k]] = members[k];
    }
    return out;
}

/// Objective from the oracle alone: delay of the lane-repaired order, plus the penalty if repair was needed.
inline double oracle_objective(const passorder::Scenario& s, std::span<const int> order, double penalty = 1000.0) {
    if (pairwise_enforceable(s, order)) return simulate_crossing(s, order).delay_sum;
    const auto fixed = refill_lanes(s, order);
    return simulate_crossing(s, fixed).delay_sum + penalty;
}

}  // namespace oracle
