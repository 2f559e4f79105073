#include "passorder/geometry.hpp"

#include <algorithm>
#include <set>
#include <utility>

#include "passorder/errors.hpp"
#include "passorder/json_util.hpp"

namespace passorder {

namespace {

int wrap(int a) { return ((a % kApproachCount) + kApproachCount) % kApproachCount; }

std::vector<Steering> default_discipline(int lanes, int index) {
    if (lanes == 1) return {Steering::left, Steering::straight, Steering::right};
    if (lanes == 2) {
        return index == 0 ? std::vector<Steering>{Steering::left, Steering::straight}
                          : std::vector<Steering>{Steering::straight, Steering::right};
    }
    if (index == 0) return {Steering::left};
    if (index == lanes - 1) return {Steering::right};
    return {Steering::straight};
}

// Cell path of one movement, generated in the approach's local frame (travel "up",
// columns numbered from the driver's left) and mapped onto the global grid.
struct Frame {
    int approach;
    int rows;  // global
    int cols;
    std::array<int, kApproachCount> lanes;
    int median_cols;
    int median_rows;

    int L(int offset) const { return lanes[static_cast<std::size_t>(wrap(approach + offset))]; }
    int own_median() const { return approach % 2 == 0 ? median_cols : median_rows; }
    int cross_median() const { return approach % 2 == 0 ? median_rows : median_cols; }
    int local_rows() const { return L(1) + cross_median() + L(3); }
    int local_cols() const { return L(2) + own_median() + L(0); }

    std::pair<int, int> to_global(int lr, int lc) const {
        switch (approach) {
            case 0: return {lr, lc};
            case 1: return {rows - 1 - lc, lr};
            case 2: return {rows - 1 - lr, cols - 1 - lc};
            default: return {lc, cols - 1 - lr};
        }
    }
};

struct RawMovement {
    std::vector<std::pair<int, int>> cells;
    int exit_road;
    int exit_index;
};

RawMovement trace(const Frame& f, int lane_index, Steering s) {
    RawMovement m;
    const int col0 = f.L(2) + f.own_median() + lane_index;
    const int near_row = f.local_rows() - 1;
    auto push = [&](int lr, int lc) { m.cells.push_back(f.to_global(lr, lc)); };
    switch (s) {
        case Steering::straight: {
            for (int lr = near_row; lr >= 0; --lr) push(lr, col0);
            m.exit_road = wrap(f.approach + 2);
            m.exit_index = lane_index;
            break;
        }
        case Steering::left: {
            const int k = std::min(lane_index, f.L(1) - 1);
            const int exit_row = f.L(1) - 1 - k;
            for (int lr = near_row; lr >= exit_row; --lr) push(lr, col0);
            for (int lc = col0 - 1; lc >= 0; --lc) push(exit_row, lc);
            m.exit_road = wrap(f.approach + 3);
            m.exit_index = k;
            break;
        }
        case Steering::right: {
            const int k = std::max(0, f.L(3) - 1 - (f.L(0) - 1 - lane_index));
            const int exit_row = f.L(1) + f.cross_median() + k;
            for (int lr = near_row; lr >= exit_row; --lr) push(lr, col0);
            for (int lc = col0 + 1; lc < f.local_cols(); ++lc) push(exit_row, lc);
            m.exit_road = wrap(f.approach + 1);
            m.exit_index = k;
            break;
        }
    }
    return m;
}

void validate_config(const GeometryConfig& c) {
    for (int a = 0; a < kApproachCount; ++a) {
        if (c.lanes[static_cast<std::size_t>(a)] < 1) {
            throw ConfigError("geometry '" + c.name + "': approach " + std::string(approach_name(a)) +
                              " needs at least one lane");
        }
    }
    if (c.median_cols < 0 || c.median_rows < 0) throw ConfigError("geometry: median widths must be >= 0");
    if (!(c.control_zone_length > 0)) throw ConfigError("geometry: control_zone_length must be positive");
    const auto& t = c.timing;
    if (!(t.v_max > 0) || !(t.tau > 0) || t.g_safe < 0 || t.h_follow < 0) {
        throw ConfigError("geometry: timing requires v_max > 0, tau > 0, g_safe >= 0, h_follow >= 0");
    }
    if (!c.lane_steerings.empty()) {
        if (c.lane_steerings.size() != kApproachCount) {
            throw ConfigError("geometry: lane_steerings must list all 4 approaches");
        }
        for (int a = 0; a < kApproachCount; ++a) {
            const auto& lanes = c.lane_steerings[static_cast<std::size_t>(a)];
            if (static_cast<int>(lanes.size()) != c.lanes[static_cast<std::size_t>(a)]) {
                throw ConfigError("geometry: lane_steerings for approach " + std::string(approach_name(a)) +
                                  " has the wrong number of lanes");
            }
        }
    }
}

std::vector<Steering> discipline_of(const GeometryConfig& c, int approach, int index) {
    if (c.lane_steerings.empty()) return default_discipline(c.lanes[static_cast<std::size_t>(approach)], index);
    auto s = c.lane_steerings[static_cast<std::size_t>(approach)][static_cast<std::size_t>(index)];
    std::sort(s.begin(), s.end());
    s.erase(std::unique(s.begin(), s.end()), s.end());
    return s;
}

// Movement lookup and pairwise conflict matrix; also validates each path.
void index_movements(std::vector<Movement>& movements, std::vector<int>& lookup, std::vector<std::uint8_t>& conflict,
                     int entry_lanes, int subzones, const std::string& name) {
    lookup.assign(static_cast<std::size_t>(entry_lanes * kSteeringCount), -1);
    for (std::size_t i = 0; i < movements.size(); ++i) {
        const auto& m = movements[i];
        const auto key = static_cast<std::size_t>(m.entry_lane * kSteeringCount + static_cast<int>(m.steering));
        if (lookup[key] != -1) {
            throw ConfigError("geometry '" + name + "': lane " + std::to_string(m.entry_lane) +
                              " has two paths for steering " + std::string(to_string(m.steering)));
        }
        lookup[key] = static_cast<int>(i);
        if (m.path.subzones.empty()) {
            throw ConfigError("geometry '" + name + "': empty path for lane " + std::to_string(m.entry_lane));
        }
        std::set<SubzoneId> seen;
        for (SubzoneId z : m.path.subzones) {
            if (z < 0 || z >= subzones) {
                throw ConfigError("geometry '" + name + "': subzone " + std::to_string(z) + " outside the grid");
            }
            if (!seen.insert(z).second) {
                throw ConfigError("geometry '" + name + "': path of lane " + std::to_string(m.entry_lane) +
                                  " repeats subzone " + std::to_string(z));
            }
        }
    }
    const std::size_t n = movements.size();
    conflict.assign(n * n, 0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            conflict[i * n + j] = conflicts(movements[i].path, movements[j].path).empty() ? 0 : 1;
        }
    }
}

}  // namespace

std::string_view to_string(Steering s) {
    switch (s) {
        case Steering::left: return "left";
        case Steering::straight: return "straight";
        case Steering::right: return "right";
    }
    return "?";
}

Steering steering_from_string(std::string_view name) {
    if (name == "left") return Steering::left;
    if (name == "straight") return Steering::straight;
    if (name == "right") return Steering::right;
    throw ConfigError("unknown steering '" + std::string(name) + "'");
}

std::string_view approach_name(int approach) {
    static constexpr std::array<std::string_view, kApproachCount> names{"south", "east", "north", "west"};
    return names[static_cast<std::size_t>(wrap(approach))];
}

GeometryConfig GeometryConfig::symmetric(int lanes_per_approach) {
    GeometryConfig c;
    c.name = lanes_per_approach == 3 ? "default" : "symmetric-" + std::to_string(lanes_per_approach);
    c.lanes = {lanes_per_approach, lanes_per_approach, lanes_per_approach, lanes_per_approach};
    return c;
}

GeometryConfig GeometryConfig::asymmetric_desk() {
    GeometryConfig c;
    c.name = "asymmetric";
    c.lanes = {3, 2, 3, 4};
    c.median_cols = 1;
    return c;
}

const LaneInfo& IntersectionGeometry::lane(LaneId id) const {
    if (id < 0 || id >= entry_lane_count()) throw ContractViolation("lane id " + std::to_string(id) + " out of range");
    return entry_lanes_[static_cast<std::size_t>(id)];
}

LaneId IntersectionGeometry::lane_id(int approach, int index) const {
    if (approach < 0 || approach >= kApproachCount || index < 0 || index >= lanes_on(approach)) {
        throw ContractViolation("no lane " + std::to_string(index) + " on approach " + std::to_string(approach));
    }
    return lane_offset_[static_cast<std::size_t>(approach)] + index;
}

const Movement& IntersectionGeometry::movement(LaneId lane, Steering s) const {
    const int idx = (lane >= 0 && lane < entry_lane_count()) ? movement_index(lane, s) : -1;
    if (idx < 0) {
        throw ContractViolation("lane " + std::to_string(lane) + " does not permit " + std::string(to_string(s)));
    }
    return movements_[static_cast<std::size_t>(idx)];
}

GeometryPtr build_geometry(const GeometryConfig& config) {
    validate_config(config);
    // Generate the table, then defer to the validating overload.
    std::vector<Movement> table;
    const auto& L = config.lanes;
    const int rows = L[1] + config.median_rows + L[3];
    const int cols = L[2] + config.median_cols + L[0];
    std::array<int, kApproachCount> entry_offset{};
    std::array<int, kApproachCount> exit_offset{};
    for (int a = 1; a < kApproachCount; ++a) {
        entry_offset[static_cast<std::size_t>(a)] = entry_offset[static_cast<std::size_t>(a - 1)] + L[static_cast<std::size_t>(a - 1)];
        exit_offset[static_cast<std::size_t>(a)] =
            exit_offset[static_cast<std::size_t>(a - 1)] + L[static_cast<std::size_t>(wrap(a - 1 + 2))];
    }
    for (int a = 0; a < kApproachCount; ++a) {
        Frame f{a, rows, cols, L, config.median_cols, config.median_rows};
        for (int j = 0; j < L[static_cast<std::size_t>(a)]; ++j) {
            for (Steering s : discipline_of(config, a, j)) {
                RawMovement raw = trace(f, j, s);
                Movement m;
                m.entry_lane = entry_offset[static_cast<std::size_t>(a)] + j;
                m.steering = s;
                m.exit_lane = exit_offset[static_cast<std::size_t>(raw.exit_road)] + raw.exit_index;
                for (std::size_t k = 0; k < raw.cells.size(); ++k) {
                    m.path.subzones.push_back(raw.cells[k].first * cols + raw.cells[k].second);
                }
                table.push_back(std::move(m));
            }
        }
    }
    return build_geometry(config, table);
}

GeometryPtr build_geometry(const GeometryConfig& config, const std::vector<Movement>& table) {
    validate_config(config);
    auto g = std::make_shared<IntersectionGeometry>();
    g->config_ = config;
    const auto& L = config.lanes;
    g->rows_ = L[1] + config.median_rows + L[3];
    g->cols_ = L[2] + config.median_cols + L[0];
    if (g->rows_ < 2 || g->cols_ < 2) throw ConfigError("geometry: grid dimensions must be at least 2x2");

    g->lane_offset_.assign(kApproachCount, 0);
    for (int a = 0; a < kApproachCount; ++a) {
        g->lane_offset_[static_cast<std::size_t>(a)] = static_cast<int>(g->entry_lanes_.size());
        const int n = L[static_cast<std::size_t>(a)];
        for (int j = 0; j < n; ++j) {
            LaneInfo info;
            info.id = static_cast<int>(g->entry_lanes_.size());
            info.approach = a;
            info.index = j;
            info.steerings = discipline_of(config, a, j);
            if (info.steerings.empty()) {
                throw ConfigError("geometry '" + config.name + "': lane " + std::to_string(info.id) + " (" +
                                  std::string(approach_name(a)) + " lane " + std::to_string(j) +
                                  ") permits no movement");
            }
            g->entry_lanes_.push_back(std::move(info));
        }
        for (Steering s : kAllSteerings) {
            bool any = false;
            for (int j = 0; j < n; ++j) {
                const auto& st = g->entry_lanes_[static_cast<std::size_t>(g->lane_offset_[static_cast<std::size_t>(a)] + j)].steerings;
                any = any || std::find(st.begin(), st.end(), s) != st.end();
            }
            if (!any) {
                throw ConfigError("geometry '" + config.name + "': steering " + std::string(to_string(s)) +
                                  " is assigned to no lane of approach " + std::string(approach_name(a)) +
                                  " (lanes " + std::to_string(g->lane_offset_[static_cast<std::size_t>(a)]) + ".." +
                                  std::to_string(g->lane_offset_[static_cast<std::size_t>(a)] + n - 1) + ")");
            }
        }
    }
    g->exit_lane_count_ = static_cast<int>(g->entry_lanes_.size());

    g->movements_ = table;
    for (auto& m : g->movements_) {
        if (m.entry_lane < 0 || m.entry_lane >= g->entry_lane_count()) {
            throw ConfigError("geometry '" + config.name + "': movement names unknown lane " + std::to_string(m.entry_lane));
        }
        const auto& st = g->entry_lanes_[static_cast<std::size_t>(m.entry_lane)].steerings;
        if (std::find(st.begin(), st.end(), m.steering) == st.end()) {
            throw ConfigError("geometry '" + config.name + "': lane " + std::to_string(m.entry_lane) +
                              " does not permit " + std::string(to_string(m.steering)));
        }
        if (m.exit_lane < 0 || m.exit_lane >= g->exit_lane_count_) {
            throw ConfigError("geometry '" + config.name + "': exit lane out of range on lane " + std::to_string(m.entry_lane));
        }
        m.path.entry_offsets.resize(m.path.subzones.size());
        for (std::size_t k = 0; k < m.path.subzones.size(); ++k) {
            m.path.entry_offsets[k] = static_cast<double>(k) * config.timing.tau;
        }
    }
    std::sort(g->movements_.begin(), g->movements_.end(), [](const Movement& a, const Movement& b) {
        return std::pair(a.entry_lane, static_cast<int>(a.steering)) < std::pair(b.entry_lane, static_cast<int>(b.steering));
    });
    index_movements(g->movements_, g->movement_lookup_, g->conflict_matrix_, g->entry_lane_count(), g->subzone_count(),
           config.name);
    for (const auto& lane : g->entry_lanes_) {
        for (Steering s : lane.steerings) {
            if (g->movement_index(lane.id, s) < 0) {
                throw ConfigError("geometry '" + config.name + "': lane " + std::to_string(lane.id) + " has no path for " +
                                  std::string(to_string(s)));
            }
        }
    }
    return g;
}

std::vector<SubzoneId> conflicts(const SubzonePath& a, const SubzonePath& b) {
    std::vector<SubzoneId> x = a.subzones;
    std::vector<SubzoneId> y = b.subzones;
    std::sort(x.begin(), x.end());
    std::sort(y.begin(), y.end());
    std::vector<SubzoneId> out;
    std::set_intersection(x.begin(), x.end(), y.begin(), y.end(), std::back_inserter(out));
    return out;
}

// ---------------------------------------------------------------------------
// Data file

GeometryConfig geometry_config_from_json(const json& j) {
    constexpr std::string_view ctx = "geometry";
    require_known_keys(j,
                       {"format", "version", "name", "lanes_per_approach", "median_cols", "median_rows", "grid",
                        "control_zone_length_m", "timing", "lane_steerings", "movements"},
                       ctx);
    if (j.contains("format") && j.at("format") != "passorder-geometry") {
        throw ConfigError("geometry: format must be 'passorder-geometry'");
    }
    if (get_or<int>(j, "version", 1, ctx) != 1) throw ConfigError("geometry: unsupported version");
    GeometryConfig c;
    c.name = get_or<std::string>(j, "name", "custom", ctx);
    if (auto it = j.find("lanes_per_approach"); it != j.end()) {
        if (it->is_number_integer()) {
            const int n = it->get<int>();
            c.lanes = {n, n, n, n};
        } else {
            auto v = get_required<std::vector<int>>(j, "lanes_per_approach", ctx);
            if (v.size() != kApproachCount) throw ConfigError("geometry: lanes_per_approach needs 4 entries");
            std::copy(v.begin(), v.end(), c.lanes.begin());
        }
    }
    c.median_cols = get_or<int>(j, "median_cols", 0, ctx);
    c.median_rows = get_or<int>(j, "median_rows", 0, ctx);
    c.control_zone_length = get_or<double>(j, "control_zone_length_m", 300.0, ctx);
    if (auto it = j.find("timing"); it != j.end()) {
        constexpr std::string_view tctx = "geometry.timing";
        require_known_keys(*it, {"v_max_mps", "subzone_traversal_s", "clearance_s", "lane_headway_s"}, tctx);
        c.timing.v_max = get_or<double>(*it, "v_max_mps", c.timing.v_max, tctx);
        c.timing.tau = get_or<double>(*it, "subzone_traversal_s", c.timing.tau, tctx);
        c.timing.g_safe = get_or<double>(*it, "clearance_s", c.timing.g_safe, tctx);
        c.timing.h_follow = get_or<double>(*it, "lane_headway_s", c.timing.h_follow, tctx);
    }
    if (auto it = j.find("lane_steerings"); it != j.end()) {
        if (!it->is_array()) throw ConfigError("geometry: lane_steerings must be an array");
        for (const auto& approach : *it) {
            std::vector<std::vector<Steering>> lanes;
            for (const auto& lane : approach) {
                std::vector<Steering> s;
                for (const auto& name : lane) s.push_back(steering_from_string(name.get<std::string>()));
                lanes.push_back(std::move(s));
            }
            c.lane_steerings.push_back(std::move(lanes));
        }
    }
    return c;
}

GeometryPtr geometry_from_json(const json& j) {
    GeometryConfig c = geometry_config_from_json(j);
    GeometryPtr g;
    if (auto it = j.find("movements"); it != j.end()) {
        std::vector<Movement> table;
        for (const auto& m : *it) {
            require_known_keys(m, {"entry_lane", "steering", "exit_lane", "subzones"}, "geometry.movements");
            Movement mv;
            mv.entry_lane = get_required<int>(m, "entry_lane", "geometry.movements");
            mv.steering = steering_from_string(get_required<std::string>(m, "steering", "geometry.movements"));
            mv.exit_lane = get_required<int>(m, "exit_lane", "geometry.movements");
            mv.path.subzones = get_required<std::vector<int>>(m, "subzones", "geometry.movements");
            table.push_back(std::move(mv));
        }
        g = build_geometry(c, table);
    } else {
        g = build_geometry(c);
    }
    if (auto it = j.find("grid"); it != j.end()) {
        auto dims = it->get<std::vector<int>>();
        if (dims.size() != 2 || dims[0] != g->grid_rows() || dims[1] != g->grid_cols()) {
            throw ConfigError("geometry: 'grid' does not match the lane layout (expected [" +
                              std::to_string(g->grid_rows()) + ", " + std::to_string(g->grid_cols()) + "])");
        }
    }
    return g;
}

json geometry_to_json(const IntersectionGeometry& g) {
    const auto& c = g.config();
    json j;
    j["format"] = "passorder-geometry";
    j["version"] = 1;
    j["name"] = c.name;
    j["lanes_per_approach"] = c.lanes;
    j["median_cols"] = c.median_cols;
    j["median_rows"] = c.median_rows;
    j["grid"] = {g.grid_rows(), g.grid_cols()};
    j["control_zone_length_m"] = c.control_zone_length;
    j["timing"] = {{"v_max_mps", c.timing.v_max},
                   {"subzone_traversal_s", c.timing.tau},
                   {"clearance_s", c.timing.g_safe},
                   {"lane_headway_s", c.timing.h_follow}};
    json disc = json::array();
    for (int a = 0; a < kApproachCount; ++a) {
        json lanes = json::array();
        for (int k = 0; k < g.lanes_on(a); ++k) {
            json s = json::array();
            for (Steering st : g.lane(g.lane_id(a, k)).steerings) s.push_back(std::string(to_string(st)));
            lanes.push_back(s);
        }
        disc.push_back(lanes);
    }
    j["lane_steerings"] = disc;
    json table = json::array();
    for (const auto& m : g.movements()) {
        table.push_back({{"entry_lane", m.entry_lane},
                         {"steering", std::string(to_string(m.steering))},
                         {"exit_lane", m.exit_lane},
                         {"subzones", m.path.subzones}});
    }
    j["movements"] = table;
    return j;
}

GeometryPtr load_geometry(const std::string& path) {
    const json j = read_json_file(path);
    try {
        return geometry_from_json(j);
    } catch (const ConfigError& e) {
        throw ConfigError(path + ": " + e.what());
    }
}

void save_geometry(const IntersectionGeometry& g, const std::string& path) {
    write_text_file(path, geometry_to_json(g).dump(2) + "\n");
}

GeometryPtr resolve_geometry(const std::string& spec) {
    if (spec.empty() || spec == "default") return build_geometry(GeometryConfig{});
    if (spec == "asymmetric") return build_geometry(GeometryConfig::asymmetric_desk());
    return load_geometry(spec);
}

}  // namespace passorder
