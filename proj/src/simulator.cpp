#include "passorder/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>
#include <numeric>

#include "passorder/baselines.hpp"
#include "passorder/errors.hpp"

namespace passorder {

// ---------------------------------------------------------------- demand

DemandConfig DemandConfig::homogeneous(double rate) {
    DemandConfig d;
    d.arrival_rate = rate;
    d.turning.fill({1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0});
    return d;
}

TurningWeights normalize_turning(TurningWeights w) {
    double sum = 0.0;
    for (double x : w) {
        if (!(x >= 0.0) || !std::isfinite(x)) throw ConfigError("turning weights must be finite and >= 0");
        sum += x;
    }
    if (sum <= 0.0) throw ConfigError("turning weights must not all be zero");
    for (double& x : w) x /= sum;
    return w;
}

std::array<double, kApproachCount> approach_rates(const DemandConfig& d, const IntersectionGeometry& g) {
    if (!(d.arrival_rate >= 0.0)) throw ConfigError("arrival rate must be >= 0");
    double lanes = 0.0;
    double weighted = 0.0;
    for (int a = 0; a < kApproachCount; ++a) {
        const double m = d.multipliers[static_cast<std::size_t>(a)];
        if (!(m >= 0.0)) throw ConfigError("approach multipliers must be >= 0");
        lanes += g.lanes_on(a);
        weighted += g.lanes_on(a) * m;
    }
    std::array<double, kApproachCount> out{};
    if (weighted <= 0.0) return out;
    const double norm = lanes / weighted;
    for (int a = 0; a < kApproachCount; ++a) {
        out[static_cast<std::size_t>(a)] =
            d.arrival_rate * g.lanes_on(a) * d.multipliers[static_cast<std::size_t>(a)] * norm / 3600.0;
    }
    return out;
}

namespace {

json turning_to_json(const TurningWeights& w) { return {{"left", w[0]}, {"straight", w[1]}, {"right", w[2]}}; }

TurningWeights turning_from_json(const json& j) {
    require_known_keys(j, {"left", "straight", "right"}, "turning");
    return normalize_turning({get_required<double>(j, "left", "turning"), get_required<double>(j, "straight", "turning"),
                              get_required<double>(j, "right", "turning")});
}

}  // namespace

json demand_to_json(const DemandConfig& d) {
    json j;
    j["format"] = "passorder-demand";
    j["version"] = 1;
    j["name"] = d.name;
    j["arrival_rate_vph_per_lane"] = d.arrival_rate;
    json per = json::array();
    for (const auto& w : d.turning) per.push_back(turning_to_json(w));
    j["turning_per_approach"] = std::move(per);
    j["approach_multipliers"] = d.multipliers;
    return j;
}

DemandConfig demand_from_json(const json& j) {
    constexpr std::string_view ctx = "demand";
    require_known_keys(j,
                       {"format", "version", "name", "note", "arrival_rate_vph_per_lane", "turning",
                        "turning_per_approach", "approach_multipliers"},
                       ctx);
    if (j.contains("format") && j["format"] != "passorder-demand") throw ConfigError("demand: wrong format tag");
    if (get_or<int>(j, "version", 1, ctx) != 1) throw ConfigError("demand: unsupported version");
    DemandConfig d;
    d.name = get_or<std::string>(j, "name", "custom", ctx);
    d.arrival_rate = get_or<double>(j, "arrival_rate_vph_per_lane", 300.0, ctx);
    if (!(d.arrival_rate >= 0.0)) throw ConfigError("demand: arrival rate must be >= 0");
    const bool single = j.contains("turning");
    const bool per = j.contains("turning_per_approach");
    if (single == per) throw ConfigError("demand: give exactly one of 'turning' and 'turning_per_approach'");
    if (single) {
        d.turning.fill(turning_from_json(j["turning"]));
    } else {
        const json& arr = j["turning_per_approach"];
        if (!arr.is_array() || arr.size() != kApproachCount) {
            throw ConfigError("demand: 'turning_per_approach' needs 4 entries");
        }
        for (std::size_t a = 0; a < kApproachCount; ++a) d.turning[a] = turning_from_json(arr[a]);
    }
    d.multipliers = get_or<std::array<double, kApproachCount>>(j, "approach_multipliers", {1.0, 1.0, 1.0, 1.0}, ctx);
    for (double m : d.multipliers) {
        if (!(m >= 0.0)) throw ConfigError("demand: approach multipliers must be >= 0");
    }
    return d;
}

std::string default_presets_path() { return std::string(PASSORDER_DATA_DIR) + "/demand_presets.json"; }

namespace {

json load_presets(const std::string& path) {
    const json j = read_json_file(path.empty() ? default_presets_path() : path);
    require_known_keys(j, {"format", "version", "presets"}, "presets");
    if (get_required<std::string>(j, "format", "presets") != "passorder-demand-presets") {
        throw ConfigError("presets: wrong format tag");
    }
    return get_required<json>(j, "presets", "presets");
}

}  // namespace

std::vector<std::string> demand_preset_names(const std::string& presets_path) {
    std::vector<std::string> out;
    for (const auto& [name, _] : load_presets(presets_path).items()) out.push_back(name);
    return out;
}

DemandConfig resolve_demand(const std::string& preset_or_path, const std::string& presets_path) {
    const json presets = load_presets(presets_path);
    if (auto it = presets.find(preset_or_path); it != presets.end()) {
        DemandConfig d = demand_from_json(*it);
        d.name = preset_or_path;
        return d;
    }
    if (!std::filesystem::exists(preset_or_path)) {
        throw ConfigError("unknown demand preset or file '" + preset_or_path + "'");
    }
    return demand_from_json(read_json_file(preset_or_path));
}

double auto_arrival_rate(int n, const IntersectionGeometry& g) {
    const double travel = g.control_zone_length() / g.timing().v_max;
    return n * 3600.0 / (g.entry_lane_count() * travel);
}

// ---------------------------------------------------------------- planners

SearchResult mcts_baseline(const Scenario& s, const MctsConfig& cfg, std::uint64_t seed) {
    return mcts_search(s, fifo_order(s), cfg, seed);
}

PassingOrder pointer_candidate(const Scenario& s, const PolicyParams& policy) {
    const PolicyTrace tr = policy_forward(policy, encode_pointer_input(s), DecodeMode::greedy);
    return order_from_indices(repair_indices(tr.order, s), s);
}

SearchResult alphaorder(const Scenario& s, const PolicyParams& policy, const MctsConfig& cfg, std::uint64_t seed) {
    return mcts_search(s, pointer_candidate(s, policy), cfg, seed);
}

namespace {

class FifoPlanner final : public Planner {
public:
    std::string name() const override { return "fifo"; }
    PlanResult plan(const Scenario& s, std::uint64_t) override {
        PlanResult r;
        r.order = fifo_order(s);
        r.J = r.candidate_J = build_schedule(r.order, s).delay_sum();
        return r;
    }
};

class MctsPlanner final : public Planner {
public:
    explicit MctsPlanner(MctsConfig cfg) : cfg_(cfg) {}
    std::string name() const override { return "mcts_baseline"; }
    PlanResult plan(const Scenario& s, std::uint64_t seed) override {
        const SearchResult sr = mcts_baseline(s, cfg_, seed);
        return {sr.order, sr.candidate_J, sr.J, sr.iterations};
    }

private:
    MctsConfig cfg_;
};

class PointerPlanner final : public Planner {
public:
    PointerPlanner(std::string label, PolicyParams policy, std::optional<MctsConfig> search)
        : label_(std::move(label)), policy_(std::move(policy)), search_(search) {}
    std::string name() const override { return label_; }
    PlanResult plan(const Scenario& s, std::uint64_t seed) override {
        if (!search_) {
            PlanResult r;
            r.order = pointer_candidate(s, policy_);
            r.J = r.candidate_J = build_schedule(r.order, s).delay_sum();
            return r;
        }
        const SearchResult sr = alphaorder(s, policy_, *search_, seed);
        return {sr.order, sr.candidate_J, sr.J, sr.iterations};
    }

private:
    std::string label_;
    PolicyParams policy_;
    std::optional<MctsConfig> search_;
};

}  // namespace

std::unique_ptr<Planner> make_planner(const std::string& spec, const MctsConfig& search) {
    if (spec == "fifo") return std::make_unique<FifoPlanner>();
    if (spec == "mcts_baseline") return std::make_unique<MctsPlanner>(search);
    for (std::string_view kind : {"alphaorder", "pointer"}) {
        const std::string prefix = std::string(kind) + ":";
        if (spec.rfind(prefix, 0) == 0) {
            const std::string path = spec.substr(prefix.size());
            if (path.empty()) throw ConfigError("algorithm '" + spec + "' needs a checkpoint path");
            if (!std::filesystem::exists(path)) throw IoError("checkpoint '" + path + "' not found");
            Checkpoint c = load_checkpoint(path);
            const bool searched = kind == "alphaorder";
            return std::make_unique<PointerPlanner>(std::string(kind), std::move(c.state.nets.policy),
                                                    searched ? std::optional<MctsConfig>(search) : std::nullopt);
        }
    }
    throw ConfigError("unknown algorithm '" + spec + "' (fifo, mcts_baseline, pointer:CKPT, alphaorder:CKPT)");
}

// ---------------------------------------------------------------- simulation

namespace {

struct Arrival {
    double time;
    int approach;
    LaneId lane;
    Steering steering;
};

std::vector<Arrival> draw_arrivals(const IntersectionGeometry& g, const DemandConfig& d, double duration,
                                   std::uint64_t seed) {
    const auto rates = approach_rates(d, g);
    std::vector<Arrival> out;
    for (int a = 0; a < kApproachCount; ++a) {
        const double rate = rates[static_cast<std::size_t>(a)];
        if (rate <= 0.0) continue;
        // Lanes of this approach able to serve each steering.
        std::array<std::vector<LaneId>, kSteeringCount> serving;
        for (int k = 0; k < g.lanes_on(a); ++k) {
            const LaneId lane = g.lane_id(a, k);
            for (Steering s : kAllSteerings) {
                if (g.permits(lane, s)) serving[static_cast<std::size_t>(s)].push_back(lane);
            }
        }
        const TurningWeights w = normalize_turning(d.turning[static_cast<std::size_t>(a)]);
        for (Steering s : kAllSteerings) {
            if (w[static_cast<std::size_t>(s)] > 0.0 && serving[static_cast<std::size_t>(s)].empty()) {
                throw ConfigError("demand sends " + std::string(to_string(s)) + " traffic to approach " +
                                  std::string(approach_name(a)) + ", which has no lane for it");
            }
        }
        Rng rng(derive_seed(seed, 1, static_cast<std::uint64_t>(a)));
        for (double t = rng.exponential(rate); t < duration; t += rng.exponential(rate)) {
            const double u = rng.uniform();
            Steering s = u < w[0] ? Steering::left : (u < w[0] + w[1] ? Steering::straight : Steering::right);
            if (w[static_cast<std::size_t>(s)] <= 0.0) s = Steering::straight;  // rounding at the upper edge
            const auto& lanes = serving[static_cast<std::size_t>(s)];
            const LaneId lane = lanes[static_cast<std::size_t>(rng.below(lanes.size()))];
            out.push_back({t, a, lane, s});
        }
    }
    std::sort(out.begin(), out.end(), [](const Arrival& x, const Arrival& y) {
        return x.time != y.time ? x.time < y.time : x.approach < y.approach;
    });
    return out;
}

struct InZone {
    Vehicle proto;
    double arrival_time;
};

}  // namespace

SimMetrics run_simulation(GeometryPtr geometry, const DemandConfig& demand, Planner& planner, const SimConfig& cfg,
                          const PlanHook& hook) {
    if (!geometry) throw ContractViolation("run_simulation: no geometry");
    if (!(cfg.duration_s > 0.0)) throw ConfigError("simulation duration must be > 0");
    if (!(cfg.replan_interval_s > 0.0)) throw ConfigError("replan interval must be > 0");
    const IntersectionGeometry& g = *geometry;
    const TimingParams& tp = g.timing();
    const double L = g.control_zone_length();
    const double travel = L / tp.v_max;

    const std::vector<Arrival> arrivals = draw_arrivals(g, demand, cfg.duration_s, cfg.seed);
    std::vector<double> Z(static_cast<std::size_t>(g.subzone_count()), 0.0);
    std::vector<double> lane_ready(static_cast<std::size_t>(g.entry_lane_count()), 0.0);
    std::vector<InZone> pending;

    SimMetrics m;
    m.algorithm = planner.name();
    m.warmup_s = cfg.warmup_s;
    std::size_t next_arrival = 0;
    std::int64_t tick = 1;
    std::uint64_t round = 0;
    const double dt = cfg.replan_interval_s;

    for (;;) {
        const double t_arr = next_arrival < arrivals.size() ? arrivals[next_arrival].time
                                                            : std::numeric_limits<double>::infinity();
        if (pending.empty()) {
            if (next_arrival >= arrivals.size()) break;
            // Nothing to plan until the next vehicle shows up.
            tick = std::max(tick, static_cast<std::int64_t>(std::ceil(t_arr / dt)));
        }
        const double t_tick = static_cast<double>(tick) * dt;
        double t;
        if (t_arr <= t_tick) {
            t = t_arr;
            const Arrival& a = arrivals[next_arrival];
            Vehicle v;
            v.id = static_cast<VehicleId>(next_arrival);
            v.lane = a.lane;
            v.steering = a.steering;
            v.exit_lane = g.movement(a.lane, a.steering).exit_lane;
            pending.push_back({v, a.time});
            ++next_arrival;
            if (!cfg.replan_on_arrival) continue;
        } else {
            t = t_tick;
            ++tick;
        }

        std::vector<Vehicle> vs;
        vs.reserve(pending.size());
        for (const auto& p : pending) {
            Vehicle v = p.proto;
            v.distance = std::max(0.0, L - tp.v_max * (t - p.arrival_time));
            v.speed = v.distance > 0.0 ? tp.v_max : 0.0;
            vs.push_back(v);
        }
        std::vector<double> rw(Z.size());
        for (std::size_t z = 0; z < Z.size(); ++z) rw[z] = std::max(0.0, Z[z] - t);
        std::vector<double> lr(lane_ready.size());
        for (std::size_t l = 0; l < lr.size(); ++l) lr[l] = std::max(0.0, lane_ready[l] - t);
        const Scenario s(geometry, std::move(vs), std::move(rw), std::move(lr));
        if (hook && hook(t, s)) break;

        const PlanResult plan = planner.plan(s, derive_seed(cfg.seed, 2, round++));
        const std::vector<int> order = order_indices(plan.order, s);
        const Schedule sched = build_schedule_indices(order, s);
        m.rounds.push_back({t, s.size(), plan.candidate_J, plan.J, improvement_ratio(plan.candidate_J, plan.J)});

        // Commit every vehicle that would enter before the next regular replan.
        std::vector<char> done(static_cast<std::size_t>(s.size()), 0);
        for (int i : order) {
            const double entry = t + sched.entry_time[static_cast<std::size_t>(i)];
            if (!(entry < t + dt)) continue;
            const Vehicle& v = s.vehicle(i);
            const SubzonePath& path = s.path(i);
            for (std::size_t k = 0; k < path.subzones.size(); ++k) {
                double& z = Z[static_cast<std::size_t>(path.subzones[k])];
                z = std::max(z, entry + path.entry_offsets[k] + tp.tau + tp.g_safe);
            }
            double& ready = lane_ready[static_cast<std::size_t>(v.lane)];
            ready = std::max(ready, entry + tp.h_follow);
            const auto it = std::find_if(pending.begin(), pending.end(),
                                         [&](const InZone& p) { return p.proto.id == v.id; });
            const double arrival = it->arrival_time;
            const double ff = arrival + travel;
            ++m.vehicles_total;
            if (arrival >= cfg.warmup_s && arrival < cfg.duration_s) {
                ++m.vehicles_served;
                m.delay_sum += entry - ff;
            }
            if (cfg.keep_log) m.log.push_back({it->proto, arrival, ff, entry, t});
            done[static_cast<std::size_t>(i)] = 1;
        }
        std::erase_if(pending, [&](const InZone& p) { return done[static_cast<std::size_t>(s.index_of(p.proto.id))] != 0; });
    }
    m.mean_delay = m.vehicles_served > 0 ? m.delay_sum / static_cast<double>(m.vehicles_served) : 0.0;
    m.final_rightofway = std::move(Z);
    return m;
}

void verify_commitments(const IntersectionGeometry& g, const std::vector<CommittedVehicle>& log) {
    const TimingParams& tp = g.timing();
    constexpr double eps = 1e-9;
    struct Slot {
        double start;
        double end;  // vacated plus clearance
        VehicleId id;
    };
    std::vector<std::vector<Slot>> zones(static_cast<std::size_t>(g.subzone_count()));
    std::vector<std::vector<std::pair<double, VehicleId>>> lanes(static_cast<std::size_t>(g.entry_lane_count()));
    for (const auto& c : log) {
        if (c.entry_time < c.free_flow_entry - eps) {
            throw ContractViolation("vehicle " + std::to_string(c.vehicle.id) + " enters before its free-flow time");
        }
        const SubzonePath& path = g.movement(c.vehicle.lane, c.vehicle.steering).path;
        for (std::size_t k = 0; k < path.subzones.size(); ++k) {
            const double start = c.entry_time + path.entry_offsets[k];
            zones[static_cast<std::size_t>(path.subzones[k])].push_back(
                {start, start + tp.tau + tp.g_safe, c.vehicle.id});
        }
        lanes[static_cast<std::size_t>(c.vehicle.lane)].push_back({c.entry_time, c.vehicle.id});
    }
    for (std::size_t z = 0; z < zones.size(); ++z) {
        auto& slots = zones[z];
        std::sort(slots.begin(), slots.end(), [](const Slot& a, const Slot& b) { return a.start < b.start; });
        for (std::size_t k = 1; k < slots.size(); ++k) {
            if (slots[k].start < slots[k - 1].end - eps) {
                throw ContractViolation("subzone " + std::to_string(z) + " double-booked by vehicles " +
                                        std::to_string(slots[k - 1].id) + " and " + std::to_string(slots[k].id));
            }
        }
    }
    for (std::size_t l = 0; l < lanes.size(); ++l) {
        auto& e = lanes[l];
        std::sort(e.begin(), e.end());
        for (std::size_t k = 1; k < e.size(); ++k) {
            if (e[k].first - e[k - 1].first < tp.h_follow - eps) {
                throw ContractViolation("lane " + std::to_string(l) + " headway violated by vehicles " +
                                        std::to_string(e[k - 1].second) + " and " + std::to_string(e[k].second));
            }
            if (e[k].second < e[k - 1].second) {
                throw ContractViolation("lane " + std::to_string(l) + " overtaking between vehicles " +
                                        std::to_string(e[k - 1].second) + " and " + std::to_string(e[k].second));
            }
        }
    }
}

// ---------------------------------------------------------------- datasets

Dataset sample_dataset(GeometryPtr geometry, const DatasetSpec& spec) {
    if (spec.count < 1) throw ConfigError("dataset count must be >= 1");
    if (spec.n_vehicles < 1) throw ConfigError("dataset vehicle count must be >= 1");
    DemandConfig demand = spec.demand;
    if (demand.arrival_rate <= 0.0) demand.arrival_rate = auto_arrival_rate(spec.n_vehicles, *geometry);

    Dataset d;
    d.n_vehicles = spec.n_vehicles;
    d.instances.reserve(static_cast<std::size_t>(spec.count));
    const double cap = spec.max_sim_s > 0.0 ? spec.max_sim_s
                                            : 10.0 * spec.segment_s + 50.0 * spec.count * std::max(spec.min_gap_s, 1.0);
    FifoPlanner fifo;
    double simulated = 0.0;
    for (std::uint64_t segment = 0; static_cast<int>(d.instances.size()) < spec.count; ++segment) {
        if (simulated >= cap) {
            throw ConfigError("collected only " + std::to_string(d.instances.size()) + " of " +
                              std::to_string(spec.count) + " snapshots with exactly " +
                              std::to_string(spec.n_vehicles) + " vehicles after " + std::to_string(simulated) +
                              " simulated seconds; raise the arrival rate");
        }
        SimConfig sc;
        sc.duration_s = spec.segment_s;
        sc.warmup_s = 0.0;
        sc.seed = derive_seed(spec.seed, 3, segment);
        double last = -std::numeric_limits<double>::infinity();
        const double settle = std::min(120.0, 0.25 * spec.segment_s);
        run_simulation(geometry, demand, fifo, sc, [&](double t, const Scenario& s) {
            if (t > spec.segment_s) return true;  // do not sample the drain phase
            if (t >= settle && s.size() == spec.n_vehicles && t - last >= spec.min_gap_s) {
                d.instances.push_back(s);
                last = t;
            }
            return static_cast<int>(d.instances.size()) >= spec.count;
        });
        simulated += spec.segment_s;
    }
    d.provenance = {{"source", "simulation"},
                    {"planner", "fifo"},
                    {"demand", demand_to_json(demand)},
                    {"seed", spec.seed},
                    {"min_gap_s", spec.min_gap_s},
                    {"segment_s", spec.segment_s},
                    {"geometry", geometry->name()}};
    return d;
}

}  // namespace passorder
