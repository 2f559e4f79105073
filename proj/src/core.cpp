#include "passorder/core.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "passorder/errors.hpp"
#include "passorder/json_util.hpp"

namespace passorder {

Scenario::Scenario(GeometryPtr geometry, std::vector<Vehicle> vehicles, std::vector<double> rightofway,
                   std::vector<double> lane_ready)
    : geometry_(std::move(geometry)),
      vehicles_(std::move(vehicles)),
      rightofway_(std::move(rightofway)),
      lane_ready_(std::move(lane_ready)) {
    if (!geometry_) throw ContractViolation("scenario without geometry");
    const auto& g = *geometry_;
    if (rightofway_.empty()) rightofway_.assign(static_cast<std::size_t>(g.subzone_count()), 0.0);
    if (lane_ready_.empty()) lane_ready_.assign(static_cast<std::size_t>(g.entry_lane_count()), 0.0);
    if (static_cast<int>(rightofway_.size()) != g.subzone_count()) {
        throw ConfigError("scenario: rightofway has " + std::to_string(rightofway_.size()) + " entries, geometry has " +
                          std::to_string(g.subzone_count()) + " subzones");
    }
    if (static_cast<int>(lane_ready_.size()) != g.entry_lane_count()) {
        throw ConfigError("scenario: lane_ready must have one entry per entry lane");
    }
    for (double z : rightofway_) {
        if (!(z >= 0.0) || !std::isfinite(z)) throw ConfigError("scenario: rightofway entries must be finite and >= 0");
    }
    for (double z : lane_ready_) {
        if (!(z >= 0.0) || !std::isfinite(z)) throw ConfigError("scenario: lane_ready entries must be finite and >= 0");
    }
    const double L = g.control_zone_length();
    const double vmax = g.timing().v_max;
    for (const auto& v : vehicles_) {
        const std::string who = "scenario: vehicle " + std::to_string(v.id);
        if (!(v.distance >= 0.0 && v.distance <= L)) throw ConfigError(who + " distance outside the control zone");
        if (!(v.speed >= 0.0 && v.speed <= vmax)) throw ConfigError(who + " speed outside [0, v_max]");
        if (v.lane < 0 || v.lane >= g.entry_lane_count()) throw ConfigError(who + " has unknown lane");
        if (!g.permits(v.lane, v.steering)) {
            throw ConfigError(who + ": lane " + std::to_string(v.lane) + " does not permit " +
                              std::string(to_string(v.steering)));
        }
        if (g.movement(v.lane, v.steering).exit_lane != v.exit_lane) {
            throw ConfigError(who + ": exit lane inconsistent with the movement table");
        }
    }
    std::sort(vehicles_.begin(), vehicles_.end(), [](const Vehicle& a, const Vehicle& b) {
        return a.distance != b.distance ? a.distance < b.distance : a.id < b.id;
    });
    id_index_.reserve(vehicles_.size());
    for (int i = 0; i < size(); ++i) id_index_.emplace_back(vehicles_[static_cast<std::size_t>(i)].id, i);
    std::sort(id_index_.begin(), id_index_.end());
    for (std::size_t i = 1; i < id_index_.size(); ++i) {
        if (id_index_[i].first == id_index_[i - 1].first) {
            throw ConfigError("scenario: duplicate vehicle id " + std::to_string(id_index_[i].first));
        }
    }
    for (const auto& v : vehicles_) {
        free_flow_.push_back(v.distance / vmax);
        movement_.push_back(g.movement_index(v.lane, v.steering));
        paths_.push_back(&g.movements()[static_cast<std::size_t>(movement_.back())].path);
    }
}

int Scenario::index_of(VehicleId id) const {
    auto it = std::lower_bound(id_index_.begin(), id_index_.end(), std::pair<VehicleId, int>(id, -1));
    if (it == id_index_.end() || it->first != id) {
        throw ContractViolation("vehicle id " + std::to_string(id) + " is not in the scenario");
    }
    return it->second;
}

bool Scenario::operator==(const Scenario& other) const {
    return vehicles_ == other.vehicles_ && rightofway_ == other.rightofway_ && lane_ready_ == other.lane_ready_ &&
           (geometry_ == other.geometry_ ||
            (geometry_ && other.geometry_ && geometry_to_json(*geometry_) == geometry_to_json(*other.geometry_)));
}

std::vector<int> order_indices(const PassingOrder& order, const Scenario& s) {
    if (static_cast<int>(order.size()) != s.size()) {
        throw ContractViolation("order has " + std::to_string(order.size()) + " entries for " +
                                std::to_string(s.size()) + " vehicles");
    }
    std::vector<int> out;
    out.reserve(order.size());
    std::vector<char> seen(order.size(), 0);
    for (VehicleId id : order.sequence) {
        const int i = s.index_of(id);
        if (seen[static_cast<std::size_t>(i)]) throw ContractViolation("order repeats vehicle " + std::to_string(id));
        seen[static_cast<std::size_t>(i)] = 1;
        out.push_back(i);
    }
    return out;
}

PassingOrder order_from_indices(std::span<const int> indices, const Scenario& s) {
    PassingOrder p;
    p.sequence.reserve(indices.size());
    for (int i : indices) p.sequence.push_back(s.vehicle(i).id);
    return p;
}

double Schedule::delay_sum() const { return std::accumulate(delay.begin(), delay.end(), 0.0); }

ScheduleBuilder::ScheduleBuilder(const Scenario& s)
    : scenario_(&s), rightofway_(s.rightofway()), lane_ready_(s.lane_ready()) {}

double ScheduleBuilder::place(int index) {
    const Scenario& s = *scenario_;
    const TimingParams& t = s.geometry().timing();
    const Vehicle& v = s.vehicle(index);
    const SubzonePath& path = s.path(index);
    const double ff = s.free_flow_time(index);
    double entry = std::max(ff, lane_ready_[static_cast<std::size_t>(v.lane)]);
    for (std::size_t k = 0; k < path.subzones.size(); ++k) {
        entry = std::max(entry, rightofway_[static_cast<std::size_t>(path.subzones[k])] - path.entry_offsets[k]);
    }
    lane_ready_[static_cast<std::size_t>(v.lane)] = entry + t.h_follow;
    for (std::size_t k = 0; k < path.subzones.size(); ++k) {
        rightofway_[static_cast<std::size_t>(path.subzones[k])] = entry + path.entry_offsets[k] + t.tau + t.g_safe;
    }
    delay_sum_ += entry - ff;
    ++placed_;
    return entry;
}

bool is_enforceable_indices(std::span<const int> order, const Scenario& s) {
    // Scenario order is front-to-back within a lane, so indices of one lane must rise.
    std::vector<int> last(static_cast<std::size_t>(s.geometry().entry_lane_count()), -1);
    for (int i : order) {
        auto& l = last[static_cast<std::size_t>(s.vehicle(i).lane)];
        if (i < l) return false;
        l = i;
    }
    return true;
}

bool is_enforceable(const PassingOrder& order, const Scenario& s) {
    return is_enforceable_indices(order_indices(order, s), s);
}

std::vector<int> repair_indices(std::span<const int> order, const Scenario& s) {
    const int lanes = s.geometry().entry_lane_count();
    std::vector<std::vector<int>> by_lane(static_cast<std::size_t>(lanes));
    for (int i = 0; i < s.size(); ++i) by_lane[static_cast<std::size_t>(s.vehicle(i).lane)].push_back(i);
    std::vector<std::size_t> next(static_cast<std::size_t>(lanes), 0);
    std::vector<int> out;
    out.reserve(order.size());
    for (int i : order) {
        const auto lane = static_cast<std::size_t>(s.vehicle(i).lane);
        out.push_back(by_lane[lane][next[lane]++]);
    }
    return out;
}

PassingOrder repair_order(const PassingOrder& order, const Scenario& s) {
    return order_from_indices(repair_indices(order_indices(order, s), s), s);
}

Schedule build_schedule_indices(std::span<const int> order, const Scenario& s) {
    if (!is_enforceable_indices(order, s)) throw ContractViolation("build_schedule: order is not enforceable");
    Schedule out;
    out.entry_time.assign(static_cast<std::size_t>(s.size()), 0.0);
    out.delay.assign(static_cast<std::size_t>(s.size()), 0.0);
    ScheduleBuilder b(s);
    for (int i : order) {
        const double e = b.place(i);
        out.entry_time[static_cast<std::size_t>(i)] = e;
        out.delay[static_cast<std::size_t>(i)] = e - s.free_flow_time(i);
    }
    out.updated_rightofway = b.rightofway();
    out.updated_lane_ready = b.lane_ready();
    return out;
}

Schedule build_schedule(const PassingOrder& order, const Scenario& s) {
    return build_schedule_indices(order_indices(order, s), s);
}

double evaluate_indices(std::span<const int> order, const Scenario& s, double penalty) {
    if (is_enforceable_indices(order, s)) {
        ScheduleBuilder b(s);
        for (int i : order) b.place(i);
        return b.delay_sum();
    }
    const auto fixed = repair_indices(order, s);
    ScheduleBuilder b(s);
    for (int i : fixed) b.place(i);
    return b.delay_sum() + penalty;
}

double evaluate_objective(const PassingOrder& order, const Scenario& s, double penalty) {
    return evaluate_indices(order_indices(order, s), s, penalty);
}

Eigen::MatrixXd encode_pointer_input(const Scenario& s) {
    const auto& g = s.geometry();
    if (g.entry_lane_count() > kLaneSlots || g.exit_lane_count() > kLaneSlots) {
        throw ContractViolation("pointer encoding supports at most 12 entry and 12 exit lanes");
    }
    Eigen::MatrixXd x = Eigen::MatrixXd::Zero(kPointerFeatures, s.size());
    const double vmax = g.timing().v_max;
    const double L = g.control_zone_length();
    for (int i = 0; i < s.size(); ++i) {
        const Vehicle& v = s.vehicle(i);
        x(0, i) = v.speed / vmax;
        x(1, i) = v.distance / L;
        x(2, i) = static_cast<double>(static_cast<int>(v.steering));
        x(3 + v.lane, i) = 1.0;
        x(3 + kLaneSlots + v.exit_lane, i) = 1.0;
    }
    return x;
}

int critic_feature_width(const IntersectionGeometry& g) { return kPointerFeatures + g.subzone_count(); }

Eigen::MatrixXd encode_critic_input(const Scenario& s) {
    const int zones = s.geometry().subzone_count();
    Eigen::MatrixXd x(kPointerFeatures + zones, s.size());
    x.topRows(kPointerFeatures) = encode_pointer_input(s);
    for (int z = 0; z < zones; ++z) {
        x.row(kPointerFeatures + z).setConstant(s.rightofway()[static_cast<std::size_t>(z)] / kRightOfWayNorm);
    }
    return x;
}

// ---------------------------------------------------------------------------

json scenario_to_json(const Scenario& s, bool embed_geometry) {
    json j;
    j["format"] = "passorder-scenario";
    j["version"] = 1;
    if (embed_geometry) j["geometry"] = geometry_to_json(s.geometry());
    json vs = json::array();
    for (const auto& v : s.vehicles()) {
        vs.push_back({{"id", v.id},
                      {"lane", v.lane},
                      {"steering", std::string(to_string(v.steering))},
                      {"exit_lane", v.exit_lane},
                      {"distance_m", v.distance},
                      {"speed_mps", v.speed}});
    }
    j["vehicles"] = vs;
    j["rightofway_s"] = s.rightofway();
    j["lane_ready_s"] = s.lane_ready();
    return j;
}

Scenario scenario_from_json(const json& j, GeometryPtr geometry) {
    constexpr std::string_view ctx = "scenario";
    require_known_keys(j, {"format", "version", "geometry", "vehicles", "rightofway_s", "lane_ready_s"}, ctx);
    if (j.contains("format") && j.at("format") != "passorder-scenario") {
        throw ConfigError("scenario: format must be 'passorder-scenario'");
    }
    if (auto it = j.find("geometry"); it != j.end()) {
        geometry = geometry_from_json(*it);
    }
    if (!geometry) geometry = build_geometry(GeometryConfig{});
    std::vector<Vehicle> vehicles;
    for (const auto& v : get_required<json>(j, "vehicles", ctx)) {
        constexpr std::string_view vctx = "scenario.vehicles";
        require_known_keys(v, {"id", "lane", "steering", "exit_lane", "distance_m", "speed_mps"}, vctx);
        Vehicle x;
        x.id = get_required<int>(v, "id", vctx);
        x.lane = get_required<int>(v, "lane", vctx);
        x.steering = steering_from_string(get_required<std::string>(v, "steering", vctx));
        x.exit_lane = get_or<int>(v, "exit_lane", -1, vctx);
        x.distance = get_required<double>(v, "distance_m", vctx);
        x.speed = get_required<double>(v, "speed_mps", vctx);
        if (x.exit_lane < 0 && x.lane >= 0 && x.lane < geometry->entry_lane_count() && geometry->permits(x.lane, x.steering)) {
            x.exit_lane = geometry->movement(x.lane, x.steering).exit_lane;
        }
        vehicles.push_back(x);
    }
    return Scenario(geometry, std::move(vehicles), get_or<std::vector<double>>(j, "rightofway_s", {}, ctx),
                    get_or<std::vector<double>>(j, "lane_ready_s", {}, ctx));
}

Scenario load_scenario(const std::string& path) {
    const json j = read_json_file(path);
    try {
        return scenario_from_json(j);
    } catch (const ConfigError& e) {
        throw ConfigError(path + ": " + e.what());
    }
}

void save_scenario(const Scenario& s, const std::string& path) { write_text_file(path, scenario_to_json(s).dump(1) + "\n"); }

}  // namespace passorder
