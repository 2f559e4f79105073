#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "passorder/core.hpp"
#include "passorder/json_util.hpp"
#include "passorder/neural.hpp"
#include "passorder/search.hpp"
#include "passorder/training.hpp"

namespace passorder {

// ---------------------------------------------------------------- demand

using TurningWeights = std::array<double, 3>;  // left, straight, right

struct DemandConfig {
    std::string name = "homogeneous";
    double arrival_rate = 300.0;  // veh / (lane h), averaged over all entry lanes
    std::array<TurningWeights, kApproachCount> turning{{{1.0 / 3, 1.0 / 3, 1.0 / 3}, {1.0 / 3, 1.0 / 3, 1.0 / 3},
                                                        {1.0 / 3, 1.0 / 3, 1.0 / 3}, {1.0 / 3, 1.0 / 3, 1.0 / 3}}};
    std::array<double, kApproachCount> multipliers{1.0, 1.0, 1.0, 1.0};

    /// Uniform turning, equal approaches.
    static DemandConfig homogeneous(double rate);
};

/// Normalizes turning weights; throws ConfigError on negative or all-zero weights.
TurningWeights normalize_turning(TurningWeights w);

/// Per-approach arrival rate in veh/s. Multipliers are rescaled so the lane-weighted
/// average of the per-lane rate stays at arrival_rate.
std::array<double, kApproachCount> approach_rates(const DemandConfig& d, const IntersectionGeometry& g);

json demand_to_json(const DemandConfig& d);
DemandConfig demand_from_json(const json& j);
/// Named preset from the presets file, or a path to a demand file.
DemandConfig resolve_demand(const std::string& preset_or_path, const std::string& presets_path = "");
std::vector<std::string> demand_preset_names(const std::string& presets_path = "");
std::string default_presets_path();

/// Lane rate at which the expected number of vehicles inside the control zone is n.
double auto_arrival_rate(int n, const IntersectionGeometry& g);

// ---------------------------------------------------------------- planners

struct PlanResult {
    PassingOrder order;
    double candidate_J = 0.0;
    double J = 0.0;
    std::int64_t iterations = 0;
};

class Planner {
public:
    virtual ~Planner() = default;
    virtual std::string name() const = 0;
    virtual PlanResult plan(const Scenario& s, std::uint64_t seed) = 0;
};

/// MCTS over the FIFO candidate.
SearchResult mcts_baseline(const Scenario& s, const MctsConfig& cfg, std::uint64_t seed);
/// Greedy pointer decode, lane-order repair, then MCTS over that candidate.
SearchResult alphaorder(const Scenario& s, const PolicyParams& policy, const MctsConfig& cfg, std::uint64_t seed);
/// The repaired greedy pointer candidate alone.
PassingOrder pointer_candidate(const Scenario& s, const PolicyParams& policy);

/// "fifo", "mcts_baseline", "pointer:CKPT" or "alphaorder:CKPT". A missing checkpoint is an IoError.
std::unique_ptr<Planner> make_planner(const std::string& spec, const MctsConfig& search);

// ---------------------------------------------------------------- simulation

struct SimConfig {
    double duration_s = 600.0;  // arrivals stop here; the run then drains
    double warmup_s = 120.0;    // vehicles arriving earlier are not measured
    double replan_interval_s = 1.0;
    bool replan_on_arrival = true;
    std::uint64_t seed = 0;
    bool keep_log = false;
};

struct CommittedVehicle {
    Vehicle vehicle;
    double arrival_time = 0.0;  // at the control-zone boundary
    double free_flow_entry = 0.0;
    double entry_time = 0.0;
    double commit_time = 0.0;
};

struct RoundRecord {
    double time = 0.0;
    int vehicles = 0;
    double candidate_J = 0.0;
    double J = 0.0;
    double mu = 0.0;
};

struct SimMetrics {
    std::string algorithm;
    std::int64_t vehicles_served = 0;  // measured vehicles (arrived in [warmup, duration))
    std::int64_t vehicles_total = 0;
    double delay_sum = 0.0;
    double mean_delay = 0.0;
    double warmup_s = 0.0;
    std::vector<RoundRecord> rounds;
    std::vector<CommittedVehicle> log;  // filled when keep_log
    std::vector<double> final_rightofway;  // absolute, per subzone
};

/// Receives every planning scenario before it is solved; returning true ends the run.
using PlanHook = std::function<bool(double time, const Scenario& s)>;

SimMetrics run_simulation(GeometryPtr geometry, const DemandConfig& demand, Planner& planner, const SimConfig& cfg,
                          const PlanHook& hook = {});

/// Replays a commitment log and throws ContractViolation on any overlap in a subzone, a lane
/// headway below the minimum, or an entry before free flow.
void verify_commitments(const IntersectionGeometry& g, const std::vector<CommittedVehicle>& log);

// ---------------------------------------------------------------- datasets

struct DatasetSpec {
    DemandConfig demand;
    int n_vehicles = 8;
    int count = 1000;
    std::uint64_t seed = 0;
    double min_gap_s = 20.0;       // between two snapshots of one run
    double segment_s = 3600.0;     // simulated time per run before reseeding
    double max_sim_s = 0.0;        // give up after this much simulated time (0: automatic)
};

/// Snapshots of FIFO-driven simulation runs holding exactly n_vehicles uncommitted vehicles.
Dataset sample_dataset(GeometryPtr geometry, const DatasetSpec& spec);

}  // namespace passorder
