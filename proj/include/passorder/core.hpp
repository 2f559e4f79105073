#pragma once

#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "passorder/geometry.hpp"

namespace passorder {

using VehicleId = int;

/// Width of the per-vehicle policy encoding: speed, distance, steering, entry and exit one-hots.
constexpr int kLaneSlots = 12;
constexpr int kPointerFeatures = 3 + 2 * kLaneSlots;  // 27
/// Right-of-way times are divided by this horizon before entering the critic.
constexpr double kRightOfWayNorm = 60.0;
constexpr double kDefaultPenalty = 1000.0;

struct Vehicle {
    VehicleId id = 0;
    LaneId lane = 0;
    Steering steering = Steering::straight;
    LaneId exit_lane = 0;
    double distance = 0.0;  // m to conflict-area entry
    double speed = 0.0;     // m/s

    bool operator==(const Vehicle&) const = default;
};

/// One planning instance. Times are relative to the planning instant.
///
/// Vehicles are kept sorted by ascending distance (ties by id); that order is also the
/// physical front-to-back order inside each lane. `lane_ready` extends the right-of-way
/// state with the earliest entry time per entry lane, carried over from committed
/// vehicles in rolling planning (zero when planning from scratch).
class Scenario {
public:
    Scenario() = default;
    Scenario(GeometryPtr geometry, std::vector<Vehicle> vehicles, std::vector<double> rightofway = {},
             std::vector<double> lane_ready = {});

    const IntersectionGeometry& geometry() const { return *geometry_; }
    const GeometryPtr& geometry_ptr() const { return geometry_; }
    const std::vector<Vehicle>& vehicles() const { return vehicles_; }
    const Vehicle& vehicle(int index) const { return vehicles_[static_cast<std::size_t>(index)]; }
    int size() const { return static_cast<int>(vehicles_.size()); }
    const std::vector<double>& rightofway() const { return rightofway_; }
    const std::vector<double>& lane_ready() const { return lane_ready_; }

    /// Position of a vehicle in vehicles(); throws ContractViolation for unknown ids.
    int index_of(VehicleId id) const;
    double free_flow_time(int index) const { return free_flow_[static_cast<std::size_t>(index)]; }
    const SubzonePath& path(int index) const { return *paths_[static_cast<std::size_t>(index)]; }
    int movement_index(int index) const { return movement_[static_cast<std::size_t>(index)]; }

    bool operator==(const Scenario& other) const;

private:
    GeometryPtr geometry_;
    std::vector<Vehicle> vehicles_;
    std::vector<double> rightofway_;
    std::vector<double> lane_ready_;
    std::vector<std::pair<VehicleId, int>> id_index_;
    std::vector<double> free_flow_;
    std::vector<const SubzonePath*> paths_;
    std::vector<int> movement_;
};

struct PassingOrder {
    std::vector<VehicleId> sequence;

    std::size_t size() const { return sequence.size(); }
    bool operator==(const PassingOrder&) const = default;
};

/// Maps an order onto scenario indices; throws ContractViolation unless it is a permutation.
std::vector<int> order_indices(const PassingOrder& order, const Scenario& s);
PassingOrder order_from_indices(std::span<const int> indices, const Scenario& s);

struct Schedule {
    std::vector<double> entry_time;  // indexed like Scenario::vehicles()
    std::vector<double> delay;
    std::vector<double> updated_rightofway;
    std::vector<double> updated_lane_ready;

    double delay_sum() const;
};

/// Incremental form of the release-time recurrence. Placing vehicles one by one in
/// passing order yields exactly build_schedule; copies are cheap enough for tree search.
class ScheduleBuilder {
public:
    explicit ScheduleBuilder(const Scenario& s);

    /// Schedules vehicle `index` behind everything placed so far; returns its entry time.
    double place(int index);
    double delay_sum() const { return delay_sum_; }
    int placed() const { return placed_; }
    const std::vector<double>& rightofway() const { return rightofway_; }
    const std::vector<double>& lane_ready() const { return lane_ready_; }

private:
    const Scenario* scenario_;
    std::vector<double> rightofway_;
    std::vector<double> lane_ready_;
    double delay_sum_ = 0.0;
    int placed_ = 0;
};

bool is_enforceable(const PassingOrder& order, const Scenario& s);
bool is_enforceable_indices(std::span<const int> order, const Scenario& s);

/// Stable same-lane reordering: each lane keeps the positions its vehicles hold in
/// `order` but refills them front-to-back. Identity on enforceable orders.
PassingOrder repair_order(const PassingOrder& order, const Scenario& s);
std::vector<int> repair_indices(std::span<const int> order, const Scenario& s);

/// Throws ContractViolation for unenforceable orders.
Schedule build_schedule(const PassingOrder& order, const Scenario& s);
Schedule build_schedule_indices(std::span<const int> order, const Scenario& s);

/// Delay-sum plus a flat penalty when the order breaks lane order (delay taken on the repaired order).
double evaluate_objective(const PassingOrder& order, const Scenario& s, double penalty = kDefaultPenalty);
double evaluate_indices(std::span<const int> order, const Scenario& s, double penalty = kDefaultPenalty);

/// kPointerFeatures x N, one column per vehicle in scenario order.
Eigen::MatrixXd encode_pointer_input(const Scenario& s);
/// (kPointerFeatures + subzones) x N: the pointer columns stacked over the normalized right-of-way.
Eigen::MatrixXd encode_critic_input(const Scenario& s);
int critic_feature_width(const IntersectionGeometry& g);

// Scenario file (JSON). The geometry is embedded so a file is self-contained.
nlohmann::json scenario_to_json(const Scenario& s, bool embed_geometry = true);
Scenario scenario_from_json(const nlohmann::json& j, GeometryPtr geometry = nullptr);
Scenario load_scenario(const std::string& path);
void save_scenario(const Scenario& s, const std::string& path);

}  // namespace passorder
