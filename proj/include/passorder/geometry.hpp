#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace passorder {

using LaneId = int;
using SubzoneId = int;

enum class Steering : int { left = 0, straight = 1, right = 2 };

constexpr int kSteeringCount = 3;
constexpr std::array<Steering, kSteeringCount> kAllSteerings{Steering::left, Steering::straight, Steering::right};

std::string_view to_string(Steering s);
Steering steering_from_string(std::string_view name);

/// Approaches are numbered counter-clockwise by entry side:
/// 0 = south (heading north), 1 = east, 2 = north, 3 = west.
constexpr int kApproachCount = 4;

std::string_view approach_name(int approach);

/// Kinematic and clearance constants shared by the schedule builder and the simulator.
struct TimingParams {
    double v_max = 15.0;        // m/s
    double tau = 0.5;           // s to traverse one subzone
    double g_safe = 0.5;        // s clearance after a subzone is vacated
    double h_follow = 1.5;      // s same-lane entry headway

    bool operator==(const TimingParams&) const = default;
};

struct GeometryConfig {
    std::string name = "default";
    std::array<int, kApproachCount> lanes{3, 3, 3, 3};
    int median_cols = 0;  // cells between the two directions of the north-south road
    int median_rows = 0;  // same for the east-west road
    double control_zone_length = 300.0;
    TimingParams timing;
    /// lane_steerings[approach][lane] lists the permitted movements of that lane.
    /// Empty means the default discipline (inner lane left, outer lane right, rest straight).
    std::vector<std::vector<std::vector<Steering>>> lane_steerings;

    static GeometryConfig symmetric(int lanes_per_approach);
    /// Unequal approaches plus a median column: 12 entry lanes on a 6x7 grid.
    static GeometryConfig asymmetric_desk();
};

struct SubzonePath {
    std::vector<SubzoneId> subzones;
    std::vector<double> entry_offsets;  // seconds after conflict-area entry, strictly increasing from 0
};

struct Movement {
    LaneId entry_lane = 0;
    Steering steering = Steering::straight;
    LaneId exit_lane = 0;
    SubzonePath path;
};

struct LaneInfo {
    LaneId id = 0;
    int approach = 0;
    int index = 0;  // 0 = innermost
    std::vector<Steering> steerings;
};

class IntersectionGeometry {
public:
    const GeometryConfig& config() const { return config_; }
    const std::string& name() const { return config_.name; }
    const TimingParams& timing() const { return config_.timing; }
    double control_zone_length() const { return config_.control_zone_length; }

    int approaches() const { return kApproachCount; }
    int lanes_on(int approach) const { return config_.lanes[static_cast<std::size_t>(approach)]; }
    int entry_lane_count() const { return static_cast<int>(entry_lanes_.size()); }
    int exit_lane_count() const { return exit_lane_count_; }
    const std::vector<LaneInfo>& entry_lanes() const { return entry_lanes_; }
    const LaneInfo& lane(LaneId id) const;
    LaneId lane_id(int approach, int index) const;

    int grid_rows() const { return rows_; }
    int grid_cols() const { return cols_; }
    int subzone_count() const { return rows_ * cols_; }
    SubzoneId subzone(int row, int col) const { return row * cols_ + col; }

    const std::vector<Movement>& movements() const { return movements_; }
    bool permits(LaneId lane, Steering s) const { return movement_index(lane, s) >= 0; }
    /// Index into movements(), or -1 when lane discipline forbids the movement.
    int movement_index(LaneId lane, Steering s) const {
        return movement_lookup_[static_cast<std::size_t>(lane * kSteeringCount + static_cast<int>(s))];
    }
    const Movement& movement(LaneId lane, Steering s) const;

    /// Precomputed: do two movements share any subzone?
    bool movements_conflict(int a, int b) const {
        return conflict_matrix_[static_cast<std::size_t>(a) * movements_.size() + static_cast<std::size_t>(b)] != 0;
    }

private:
    friend std::shared_ptr<const IntersectionGeometry> build_geometry(const GeometryConfig&);
    friend std::shared_ptr<const IntersectionGeometry> build_geometry(const GeometryConfig&,
                                                                      const std::vector<Movement>&);

    GeometryConfig config_;
    std::vector<LaneInfo> entry_lanes_;
    std::vector<int> lane_offset_;
    int exit_lane_count_ = 0;
    int rows_ = 0;
    int cols_ = 0;
    std::vector<Movement> movements_;
    std::vector<int> movement_lookup_;
    std::vector<std::uint8_t> conflict_matrix_;
};

using GeometryPtr = std::shared_ptr<const IntersectionGeometry>;

/// Generates the movement table from the config.
GeometryPtr build_geometry(const GeometryConfig& config);
/// Uses an explicit movement table (as loaded from a data file), validated against the config.
GeometryPtr build_geometry(const GeometryConfig& config, const std::vector<Movement>& table);

/// Shared subzones of two paths, ascending. Symmetric; equals the path itself when a == b.
std::vector<SubzoneId> conflicts(const SubzonePath& a, const SubzonePath& b);

// Geometry data file (JSON). See README for the schema.
nlohmann::json geometry_to_json(const IntersectionGeometry& g);
GeometryPtr geometry_from_json(const nlohmann::json& j);
GeometryConfig geometry_config_from_json(const nlohmann::json& j);
GeometryPtr load_geometry(const std::string& path);
void save_geometry(const IntersectionGeometry& g, const std::string& path);

/// "default", "asymmetric" or a file path.
GeometryPtr resolve_geometry(const std::string& spec);

}  // namespace passorder
